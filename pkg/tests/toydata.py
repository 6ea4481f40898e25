"""Synthetic toy tables shared across the test suite.

Two small mixed-type tables with distinct contexts and disjoint numeric
ranges. Each categorical column is a deterministic threshold function of the
first numeric column. Holdout draws can carve a dead zone around the class
threshold so per-row label prediction is well-posed under model noise.
"""

import numpy as np

from polytab.data import ColumnSchema, TableDataset

TOY_ROWS = 200

VITALS_META = "vital signs measured during routine clinic visits"
LOANS_META = "loan applications processed by a retail bank"


def _margin_normal(rng, center, scale, margin, n):
    if margin <= 0:
        return rng.normal(center, scale, n)
    out = []
    while len(out) < n:
        draws = rng.normal(center, scale, n)
        out.extend(v for v in draws if abs(v - center) >= margin)
    return np.array(out[:n])


def _vitals_rows(rng, n, margin=0.0):
    x1 = _margin_normal(rng, 2.0, 0.3, margin, n)
    x2 = x1 + rng.normal(0.0, 0.1, n)
    cat = ["high strain" if v > 2.0 else "low strain" for v in x1]
    return tuple((float(a), float(b), c) for a, b, c in zip(x1, x2, cat))


def _loans_rows(rng, n, margin=0.0):
    y1 = _margin_normal(rng, -2.0, 0.3, margin, n)
    y2 = rng.normal(-2.0, 0.3, n)
    cat = ["approved" if v > -2.0 else "declined" for v in y1]
    return tuple((float(a), float(b), c) for a, b, c in zip(y1, y2, cat))


VITALS_COLUMNS = (
    ColumnSchema("systolic pressure", "numerical"),
    ColumnSchema("body temperature", "numerical"),
    ColumnSchema("strain level", "categorical", ("high strain", "low strain"), target=True),
)

LOANS_COLUMNS = (
    ColumnSchema("annual income", "numerical"),
    ColumnSchema("credit score", "numerical"),
    ColumnSchema("loan decision", "categorical", ("approved", "declined"), target=True),
)


def make_toy_corpus(seed=0, n_rows=TOY_ROWS):
    rng = np.random.default_rng(seed)
    vitals = TableDataset(VITALS_META, VITALS_COLUMNS, _vitals_rows(rng, n_rows))
    loans = TableDataset(LOANS_META, LOANS_COLUMNS, _loans_rows(rng, n_rows))
    return vitals, loans


def make_toy_holdout(table: TableDataset, seed=99, n_rows=100, margin=0.0):
    """Fresh rows from the same generative process as a toy table."""
    rng = np.random.default_rng(seed)
    if table.metadata == VITALS_META:
        return TableDataset(table.metadata, table.columns, _vitals_rows(rng, n_rows, margin))
    return TableDataset(table.metadata, table.columns, _loans_rows(rng, n_rows, margin))


def numeric_centroid(table: TableDataset) -> np.ndarray:
    cols = table.numerical_indices
    return np.array([[row[c] for c in cols] for row in table.rows]).mean(axis=0)
