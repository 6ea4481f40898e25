"""Schema-aware mixed-type tables: loading, splitting, and pre-training batch assembly."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Raised for malformed datasets, descriptors, or split requests."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    target: bool = False

    def __post_init__(self):
        if not self.name:
            raise DataError("column name must be nonempty")
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise DataError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind == CATEGORICAL and len(self.categories) < 1:
            raise DataError(f"categorical column {self.name!r} needs at least one category")
        if self.kind == NUMERICAL and self.categories:
            raise DataError(f"numerical column {self.name!r} cannot carry categories")


@dataclass(frozen=True)
class TableDataset:
    """An immutable table: text metadata, column schemas, and value rows.

    Numerical cells are floats, categorical cells are strings drawn from the
    column's category set. Every row has exactly one value per column.
    """

    metadata: str
    columns: tuple[ColumnSchema, ...]
    rows: tuple[tuple, ...]

    def __post_init__(self):
        if not self.metadata:
            raise DataError("table metadata text must be nonempty")
        targets = [c.name for c in self.columns if c.target]
        if len(targets) > 1:
            raise DataError(f"more than one target column: {targets}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        for r, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise DataError(f"row {r} has {len(row)} values, expected {len(self.columns)}")
            for c, (col, value) in enumerate(zip(self.columns, row)):
                if col.kind == NUMERICAL:
                    if not isinstance(value, (int, float)) or isinstance(value, bool):
                        raise DataError(f"row {r}, column {col.name!r}: {value!r} is not numeric")
                    if math.isnan(value):
                        raise DataError(f"row {r}, column {col.name!r}: NaN value")
                else:
                    if value not in col.categories:
                        raise DataError(
                            f"row {r}, column {col.name!r}: {value!r} not in category set"
                        )

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def target_index(self) -> int | None:
        for i, c in enumerate(self.columns):
            if c.target:
                return i
        return None

    @property
    def numerical_indices(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.columns) if c.kind == NUMERICAL)

    @property
    def categorical_indices(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.columns) if c.kind == CATEGORICAL)

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise DataError(f"no column named {name!r}")

    def column_values(self, index: int) -> list:
        return [row[index] for row in self.rows]

    def take_rows(self, indices: Sequence[int]) -> "TableDataset":
        return TableDataset(self.metadata, self.columns, tuple(self.rows[i] for i in indices))

    def select_columns(self, indices: Sequence[int]) -> "TableDataset":
        cols = tuple(self.columns[i] for i in indices)
        rows = tuple(tuple(row[i] for i in indices) for row in self.rows)
        return TableDataset(self.metadata, cols, rows)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float
    finetune_frac: float
    test_frac: float
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.finetune_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise DataError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1, got {sum(fracs)}")


@dataclass(frozen=True)
class TrainingBatch:
    """One pre-training batch: rows of a single table with a fresh column view.

    ``column_order`` lists the retained column indices in their (permuted)
    presentation order; ``dropped`` lists the column indices removed for this
    batch. The (name, value) pairing of each retained column is untouched.
    """

    table_id: int
    row_indices: tuple[int, ...]
    column_order: tuple[int, ...]
    dropped: tuple[int, ...] = ()
    sampled_with_replacement: bool = False


def load_schema_descriptor(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        desc = json.load(fh)
    if "metadata" not in desc or "columns" not in desc:
        raise DataError(f"descriptor {path} must define 'metadata' and 'columns'")
    return desc


def load_csv(path: str, descriptor: dict) -> TableDataset:
    """Load a CSV file against a schema descriptor.

    The descriptor maps every CSV column to a kind and optionally relabels
    categorical values to complete text::

        {"metadata": "...", "target": "label",
         "columns": [{"name": "age", "kind": "numerical"},
                     {"name": "label", "kind": "categorical",
                      "label_map": {"1": "tested positive", "0": "tested negative"}}]}

    Categories are collected in order of first appearance after relabeling.
    Cells must be present and parseable; there is no missing-data handling.
    """
    col_specs = {c["name"]: c for c in descriptor["columns"]}
    target_name = descriptor.get("target")
    if target_name is not None and target_name not in col_specs:
        raise DataError(f"target column {target_name!r} not in descriptor")

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        raw_rows = list(reader)
    if not raw_rows:
        raise DataError(f"{path}: no data rows")

    for name in header:
        if name not in col_specs:
            raise DataError(f"{path}: column {name!r} missing from descriptor")

    kinds = [col_specs[name]["kind"] for name in header]
    label_maps = [col_specs[name].get("label_map", {}) for name in header]
    seen_categories: list[dict[str, None]] = [{} for _ in header]

    parsed_rows = []
    for r, raw in enumerate(raw_rows):
        if len(raw) != len(header):
            raise DataError(f"{path}: row {r} has {len(raw)} cells, expected {len(header)}")
        row = []
        for c, cell in enumerate(raw):
            cell = cell.strip()
            if cell == "":
                raise DataError(f"{path}: row {r}, column {header[c]!r}: empty cell")
            if kinds[c] == NUMERICAL:
                try:
                    row.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {r}, column {header[c]!r}: non-numeric value {cell!r}"
                    ) from None
            elif kinds[c] == CATEGORICAL:
                text = label_maps[c].get(cell, cell)
                seen_categories[c].setdefault(text)
                row.append(text)
            else:
                raise DataError(f"{path}: column {header[c]!r} has unknown kind {kinds[c]!r}")
        parsed_rows.append(tuple(row))

    columns = []
    for c, name in enumerate(header):
        columns.append(
            ColumnSchema(
                name=name,
                kind=kinds[c],
                categories=tuple(seen_categories[c]) if kinds[c] == CATEGORICAL else (),
                target=(name == target_name),
            )
        )
    return TableDataset(descriptor["metadata"], tuple(columns), tuple(parsed_rows))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(n: int, spec: SplitSpec) -> tuple[list[int], list[int], list[int]]:
    """Row indices for (train, finetune, test) under seeded shuffling.

    Finetune and test sizes are round(frac * N); the train split absorbs the
    rounding remainder. Partitions are disjoint and exhaustive.
    """
    if n < 3:
        raise DataError(f"need at least 3 rows to split, got {n}")
    n_fin = _round_half_up(spec.finetune_frac * n)
    n_test = _round_half_up(spec.test_frac * n)
    n_train = n - n_fin - n_test
    if min(n_train, n_fin, n_test) < 1:
        raise DataError(
            f"empty split after rounding: train={n_train} finetune={n_fin} test={n_test}"
        )
    order = np.random.default_rng(spec.seed).permutation(n)
    return (
        sorted(int(i) for i in order[:n_train]),
        sorted(int(i) for i in order[n_train:n_train + n_fin]),
        sorted(int(i) for i in order[n_train + n_fin:]),
    )


def split_dataset(ds: TableDataset, spec: SplitSpec) -> tuple[TableDataset, TableDataset, TableDataset]:
    """Partition rows into (train, finetune, test); see ``split_indices``."""
    train_idx, fin_idx, test_idx = split_indices(ds.n_rows, spec)
    return ds.take_rows(train_idx), ds.take_rows(fin_idx), ds.take_rows(test_idx)


def split_features(ds: TableDataset, seed: int = 0) -> tuple[TableDataset, TableDataset]:
    """Split predictor columns into two near-equal halves, target kept in both.

    Sizes are ceil(P/2) and floor(P/2) over the P non-target columns; the
    partition is a seeded random draw but each subset keeps the original
    column order.
    """
    t = ds.target_index
    if t is None:
        raise DataError("dataset declares no target column")
    predictors = [i for i in range(ds.n_columns) if i != t]
    if len(predictors) < 2:
        raise DataError("need at least 2 predictor columns to split features")
    rng = np.random.default_rng(seed)
    shuffled = [predictors[i] for i in rng.permutation(len(predictors))]
    n_a = math.ceil(len(predictors) / 2)
    set_a = sorted(shuffled[:n_a] + [t])
    set_b = sorted(shuffled[n_a:] + [t])
    return ds.select_columns(set_a), ds.select_columns(set_b)


def make_pretrain_batches(
    tables: Sequence[TableDataset],
    batch_size: int,
    drop_rate: float = 0.15,
    seed: int = 0,
    epochs: int = 1,
) -> Iterator[TrainingBatch]:
    """Stream homogeneous per-table batches with permuted, partially dropped columns.

    Every batch draws rows from exactly one table. Each batch gets a fresh
    column permutation and floor(drop_rate * D) dropped columns (at least one
    column always survives). Tables smaller than ``batch_size`` yield a single
    batch sampled with replacement, flagged on the batch.
    """
    if batch_size < 2:
        raise DataError("batch_size must be >= 2 (in-batch contrast needs negatives)")
    if not 0 <= drop_rate < 1:
        raise DataError("drop_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        epoch_batches: list[TrainingBatch] = []
        for table_id, table in enumerate(tables):
            d = table.n_columns
            n_drop = min(int(math.floor(drop_rate * d)), d - 1)
            n = table.n_rows
            if n < batch_size:
                row_groups = [rng.integers(0, n, size=batch_size).tolist()]
                replacement = True
            else:
                order = rng.permutation(n)
                row_groups = [
                    order[i * batch_size:(i + 1) * batch_size].tolist()
                    for i in range(n // batch_size)
                ]
                replacement = False
            for rows in row_groups:
                col_perm = rng.permutation(d).tolist()
                dropped = tuple(sorted(col_perm[:n_drop]))
                retained = [c for c in col_perm[n_drop:]]
                epoch_batches.append(
                    TrainingBatch(
                        table_id=table_id,
                        row_indices=tuple(int(i) for i in rows),
                        column_order=tuple(int(c) for c in retained),
                        dropped=dropped,
                        sampled_with_replacement=replacement,
                    )
                )
        for i in rng.permutation(len(epoch_batches)).tolist():
            yield epoch_batches[i]


def write_split_manifest(path: str, spec: SplitSpec, splits: dict[str, Sequence[int]],
                         extra: dict | None = None) -> None:
    payload = {
        "train_frac": spec.train_frac,
        "finetune_frac": spec.finetune_frac,
        "test_frac": spec.test_frac,
        "seed": spec.seed,
        "row_indices": {name: [int(i) for i in idx] for name, idx in splits.items()},
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def write_csv(path: str, table: TableDataset) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.column_names)
        for row in table.rows:
            writer.writerow(row)


def descriptor_for(table: TableDataset) -> dict:
    """Rebuild a schema descriptor matching a table (labels already complete text)."""
    desc: dict = {"metadata": table.metadata, "columns": []}
    t = table.target_index
    if t is not None:
        desc["target"] = table.columns[t].name
    for col in table.columns:
        desc["columns"].append({"name": col.name, "kind": col.kind})
    return desc
