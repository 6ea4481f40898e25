"""Row embedding: interleave metadata, column-name, and value vectors into one sequence.

A row with D columns becomes a (2D+1, 768) sequence: the table metadata
vector, then alternating name/value vectors per column. Categorical values go
through the text encoder, numerical values through the quantile map and the
frozen number autoencoder. Masked value slots are overwritten with a constant
-1 vector while their name slots stay intact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .data import CATEGORICAL, NUMERICAL, ColumnSchema, TableDataset
from .numeric import NumberAutoencoder, QuantileTransformer
from .text import TextEncoder

MASK_VALUE = -1.0


def metadata_slot() -> int:
    return 0


def name_slot(col: int) -> int:
    return 1 + 2 * col


def value_slot(col: int) -> int:
    return 2 + 2 * col


@dataclass
class EmbeddingSequence:
    """The interleaved per-row sequence with per-value-slot mask flags."""

    vectors: torch.Tensor
    masked: tuple[bool, ...]

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("sequence must be a (length, dim) tensor")
        if self.vectors.shape[0] != 2 * len(self.masked) + 1:
            raise ValueError(
                f"sequence length {self.vectors.shape[0]} does not match "
                f"{len(self.masked)} value slots"
            )

    @property
    def n_columns(self) -> int:
        return len(self.masked)

    def __len__(self) -> int:
        return self.vectors.shape[0]


class RowEmbedder:
    """Bundles the encoders and fitted transformers needed to embed one table's rows."""

    def __init__(
        self,
        table: TableDataset,
        text_encoder: TextEncoder,
        autoencoder: NumberAutoencoder,
        transformers: dict[str, QuantileTransformer],
    ):
        for i in table.numerical_indices:
            name = table.columns[i].name
            if name not in transformers:
                raise ValueError(f"no fitted quantile transformer for column {name!r}")
        self.table = table
        self.text_encoder = text_encoder
        self.autoencoder = autoencoder
        self.transformers = transformers

    @property
    def dim(self) -> int:
        return self.text_encoder.dim

    def metadata_vector(self) -> torch.Tensor:
        return torch.from_numpy(self.text_encoder.encode(self.table.metadata).copy())

    def name_vector(self, column: ColumnSchema) -> torch.Tensor:
        return torch.from_numpy(self.text_encoder.encode(column.name).copy())

    def category_vector(self, text: str) -> torch.Tensor:
        return torch.from_numpy(self.text_encoder.encode(text).copy())

    def quantile_of(self, column: ColumnSchema, value: float) -> float:
        return float(self.transformers[column.name].transform(value))

    def embed_row(self, row: Sequence, columns: Sequence[ColumnSchema] | None = None) -> EmbeddingSequence:
        """Embed one row (optionally under a reordered or subset column view)."""
        if columns is None:
            columns = self.table.columns
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} values for {len(columns)} columns")
        d = len(columns)
        out = torch.empty((2 * d + 1, self.dim), dtype=torch.float32)
        out[0] = self.metadata_vector()
        numeric_slots, numeric_quantiles = [], []
        for c, (col, value) in enumerate(zip(columns, row)):
            out[name_slot(c)] = self.name_vector(col)
            if col.kind == CATEGORICAL:
                if value not in col.categories:
                    raise ValueError(f"value {value!r} outside category set of {col.name!r}")
                out[value_slot(c)] = self.category_vector(value)
            else:
                numeric_slots.append(value_slot(c))
                numeric_quantiles.append(self.quantile_of(col, value))
        if numeric_slots:
            codes = self.autoencoder.encode_values(np.asarray(numeric_quantiles))
            for slot, code in zip(numeric_slots, codes):
                out[slot] = code
        return EmbeddingSequence(out, masked=(False,) * d)

    def embed_table(self, rows: Sequence[Sequence] | None = None) -> torch.Tensor:
        """Embed rows (default: the whole table) into one (N, 2D+1, dim) tensor.

        Numeric codes are computed column-at-a-time so the autoencoder runs on
        large batches rather than per cell.
        """
        if rows is None:
            rows = self.table.rows
        columns = self.table.columns
        d = len(columns)
        n = len(rows)
        out = torch.empty((n, 2 * d + 1, self.dim), dtype=torch.float32)
        out[:, 0] = self.metadata_vector()
        for c, col in enumerate(columns):
            out[:, name_slot(c)] = self.name_vector(col)
            if col.kind == CATEGORICAL:
                for r, row in enumerate(rows):
                    out[r, value_slot(c)] = self.category_vector(row[c])
            else:
                values = np.asarray([row[c] for row in rows], dtype=np.float64)
                quantiles = self.transformers[col.name].transform(values)
                out[:, value_slot(c)] = self.autoencoder.encode_values(quantiles)
        return out


def sequence_for_category(
    embedder: RowEmbedder, column: ColumnSchema, category: str
) -> EmbeddingSequence:
    """Minimal sequence [metadata, name, category] used to place one category in context."""
    out = torch.empty((3, embedder.dim), dtype=torch.float32)
    out[0] = embedder.metadata_vector()
    out[1] = embedder.name_vector(column)
    out[2] = embedder.category_vector(category)
    return EmbeddingSequence(out, masked=(False,))


def mask_value_slots(vectors: torch.Tensor, columns: Sequence[int]) -> torch.Tensor:
    """Return a copy of a sequence tensor with the given value slots set to -1.

    Accepts a single (L, dim) sequence or a batch (N, L, dim); column indices
    refer to positions in the sequence's own column order.
    """
    out = vectors.clone()
    slots = [value_slot(c) for c in columns]
    if out.ndim == 2:
        out[slots] = MASK_VALUE
    else:
        out[:, slots] = MASK_VALUE
    return out


def make_masked_views(
    seq: EmbeddingSequence, views: int, mask_fraction: float = 0.5, seed: int = 0
) -> list[EmbeddingSequence]:
    """Build the original sequence plus ``views`` independently masked copies.

    Each masked copy hides floor(mask_fraction * D) value slots (at least one)
    behind the constant -1 vector; name slots are never touched.
    """
    d = seq.n_columns
    if d < 1:
        raise ValueError("need at least one column to build masked views")
    n_mask = max(1, int(np.floor(mask_fraction * d)))
    rng = np.random.default_rng(seed)
    out = [seq]
    for _ in range(views):
        chosen = sorted(rng.choice(d, size=n_mask, replace=False).tolist())
        masked_flags = tuple(bool(c in chosen) or m for c, m in zip(range(d), seq.masked))
        out.append(EmbeddingSequence(mask_value_slots(seq.vectors, chosen), masked_flags))
    return out


def gather_batch(
    full_sequences: torch.Tensor, row_indices: Sequence[int], column_order: Sequence[int]
) -> torch.Tensor:
    """Slice a precomputed (N, 2D+1, dim) tensor down to one training batch's view.

    Keeps each column's name/value pair adjacent while presenting the columns
    in the batch's permuted order.
    """
    idx = [0]
    for c in column_order:
        idx.extend((name_slot(c), value_slot(c)))
    rows = torch.as_tensor(list(row_indices), dtype=torch.long)
    cols = torch.as_tensor(idx, dtype=torch.long)
    return full_sequences.index_select(0, rows).index_select(1, cols)


def random_batch_masks(
    n_rows: int, n_columns: int, mask_fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Per-row random value-slot masks: (n_rows, n_mask) column positions."""
    n_mask = max(1, int(np.floor(mask_fraction * n_columns)))
    scores = rng.random((n_rows, n_columns))
    return np.argsort(scores, axis=1)[:, :n_mask]


def apply_batch_masks(batch: torch.Tensor, mask_columns: np.ndarray) -> torch.Tensor:
    """Mask per-row column choices in a (N, L, dim) batch tensor."""
    out = batch.clone()
    slots = torch.as_tensor(2 + 2 * mask_columns, dtype=torch.long)
    rows = torch.arange(out.shape[0]).unsqueeze(1).expand_as(slots)
    out[rows.reshape(-1), slots.reshape(-1)] = MASK_VALUE
    return out
