"""Tables, loading, splits, and pre-training batch assembly."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polytab.data import (
    ColumnSchema,
    DataError,
    SplitSpec,
    TableDataset,
    load_csv,
    make_pretrain_batches,
    split_dataset,
    split_features,
    split_indices,
)


def write_csv(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


DESC3 = {
    "metadata": "a small test table",
    "columns": [
        {"name": "age", "kind": "numerical"},
        {"name": "weight", "kind": "numerical"},
        {"name": "label", "kind": "categorical"},
    ],
}


class TestLoadCsv:
    def test_three_column_parse(self, tmp_path):
        path = write_csv(tmp_path, "t.csv", "age,weight,label\n1,2.5,yes\n3,4.5,no\n")
        table = load_csv(path, DESC3)
        assert table.n_columns == 3
        assert table.rows == ((1.0, 2.5, "yes"), (3.0, 4.5, "no"))
        assert table.columns[2].categories == ("yes", "no")

    def test_non_numeric_value_names_row_and_column(self, tmp_path):
        path = write_csv(tmp_path, "t.csv", "age,weight,label\n1,abc,yes\n")
        with pytest.raises(DataError, match=r"row 0.*weight.*abc"):
            load_csv(path, DESC3)

    def test_label_map_rewrites_to_complete_text(self, tmp_path):
        desc = {
            "metadata": "diagnostic outcomes",
            "columns": [
                {"name": "age", "kind": "numerical"},
                {"name": "outcome", "kind": "categorical",
                 "label_map": {"1": "tested positive", "0": "tested negative"}},
            ],
        }
        path = write_csv(tmp_path, "t.csv", "age,outcome\n40,1\n50,0\n61,1\n")
        table = load_csv(path, desc)
        assert table.columns[1].categories == ("tested positive", "tested negative")
        assert [r[1] for r in table.rows] == [
            "tested positive", "tested negative", "tested positive"]

    def test_empty_file_rejected(self, tmp_path):
        path = write_csv(tmp_path, "t.csv", "")
        with pytest.raises(DataError, match="empty"):
            load_csv(path, DESC3)

    def test_header_only_rejected(self, tmp_path):
        path = write_csv(tmp_path, "t.csv", "age,weight,label\n")
        with pytest.raises(DataError, match="no data rows"):
            load_csv(path, DESC3)

    def test_column_missing_from_descriptor(self, tmp_path):
        path = write_csv(tmp_path, "t.csv", "age,BMI\n1,2\n")
        with pytest.raises(DataError, match="BMI"):
            load_csv(path, DESC3)

    def test_missing_cell_rejected(self, tmp_path):
        path = write_csv(tmp_path, "t.csv", "age,weight,label\n1,,yes\n")
        with pytest.raises(DataError, match="empty cell"):
            load_csv(path, DESC3)

    def test_target_column_flag(self, tmp_path):
        desc = dict(DESC3, target="label")
        path = write_csv(tmp_path, "t.csv", "age,weight,label\n1,2,yes\n")
        table = load_csv(path, desc)
        assert table.target_index == 2


class TestTableDataset:
    def test_row_width_enforced(self):
        cols = (ColumnSchema("a", "numerical"),)
        with pytest.raises(DataError, match="row 0"):
            TableDataset("m", cols, ((1.0, 2.0),))

    def test_category_membership_enforced(self):
        cols = (ColumnSchema("a", "categorical", ("x",)),)
        with pytest.raises(DataError, match="category set"):
            TableDataset("m", cols, (("y",),))

    def test_single_target_enforced(self):
        cols = (
            ColumnSchema("a", "numerical", target=True),
            ColumnSchema("b", "numerical", target=True),
        )
        with pytest.raises(DataError, match="target"):
            TableDataset("m", cols, ())

    def test_metadata_required(self):
        with pytest.raises(DataError, match="metadata"):
            TableDataset("", (ColumnSchema("a", "numerical"),), ())

    def test_categorical_needs_categories(self):
        with pytest.raises(DataError, match="category"):
            ColumnSchema("a", "categorical")


def _numeric_table(n):
    cols = (ColumnSchema("x", "numerical"), ColumnSchema("y", "numerical"))
    rows = tuple((float(i), float(2 * i)) for i in range(n))
    return TableDataset("numbers", cols, rows)


class TestSplitDataset:
    def test_100_rows_standard_fractions(self):
        table = _numeric_table(100)
        train, fin, test = split_dataset(table, SplitSpec(0.70, 0.05, 0.25, seed=0))
        assert (train.n_rows, fin.n_rows, test.n_rows) == (70, 5, 25)

    def test_deterministic_under_seed(self):
        table = _numeric_table(100)
        spec = SplitSpec(0.70, 0.05, 0.25, seed=0)
        first = split_dataset(table, spec)
        second = split_dataset(table, spec)
        assert all(a.rows == b.rows for a, b in zip(first, second))

    def test_remainder_goes_to_train(self):
        # N=20: finetune rounds to 1, test to 5, train absorbs the rest (14)
        table = _numeric_table(20)
        train, fin, test = split_dataset(table, SplitSpec(0.70, 0.05, 0.25, seed=1))
        assert (train.n_rows, fin.n_rows, test.n_rows) == (14, 1, 5)

    def test_empty_split_rejected(self):
        table = _numeric_table(10)
        with pytest.raises(DataError, match="empty split"):
            split_dataset(table, SplitSpec(0.98, 0.01, 0.01, seed=0))

    def test_fractions_validated(self):
        with pytest.raises(DataError):
            SplitSpec(0.5, 0.2, 0.2)
        with pytest.raises(DataError):
            SplitSpec(1.2, -0.1, -0.1)

    @given(n=st.integers(10, 300), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_partitions_disjoint_exhaustive(self, n, seed):
        train, fin, test = split_indices(n, SplitSpec(0.70, 0.05, 0.25, seed=seed))
        combined = sorted(train + fin + test)
        assert combined == list(range(n))


class TestSplitFeatures:
    def _table(self, predictors):
        cols = [ColumnSchema(f"p{i}", "numerical") for i in range(predictors)]
        cols.append(ColumnSchema("label", "categorical", ("a", "b"), target=True))
        rows = tuple(tuple([float(i)] * predictors + ["a"]) for i in range(4))
        return TableDataset("m", tuple(cols), rows)

    def test_nine_predictors_split_five_four(self):
        table = self._table(9)
        set_a, set_b = split_features(table, seed=0)
        # ceil(9/2)=5 predictors in A, 4 in B, target kept in both
        assert set_a.n_columns == 6 and set_b.n_columns == 5
        assert set_a.target_index is not None and set_b.target_index is not None

    def test_two_predictors_one_each(self):
        set_a, set_b = split_features(self._table(2), seed=0)
        assert set_a.n_columns == 2 and set_b.n_columns == 2

    def test_deterministic(self):
        table = self._table(7)
        assert split_features(table, seed=5)[0].column_names == \
            split_features(table, seed=5)[0].column_names

    def test_no_target_rejected(self):
        table = _numeric_table(5)
        with pytest.raises(DataError, match="target"):
            split_features(table)

    @given(predictors=st.integers(2, 12), seed=st.integers(0, 2**16))
    @settings(max_examples=30, deadline=None)
    def test_partition_property(self, predictors, seed):
        table = self._table(predictors)
        set_a, set_b = split_features(table, seed=seed)
        a_pred = set(set_a.column_names) - {"label"}
        b_pred = set(set_b.column_names) - {"label"}
        assert a_pred | b_pred == {f"p{i}" for i in range(predictors)}
        assert not (a_pred & b_pred)
        assert len(a_pred) == math.ceil(predictors / 2)


def _mixed_table(meta, n, d_numeric):
    cols = [ColumnSchema(f"n{i}", "numerical") for i in range(d_numeric)]
    rows = tuple(tuple(float(i + j) for j in range(d_numeric)) for i in range(n))
    return TableDataset(meta, tuple(cols), rows)


class TestPretrainBatches:
    def test_batches_never_mix_tables(self):
        tables = [_mixed_table("one", 30, 3), _mixed_table("two", 40, 5)]
        batches = list(make_pretrain_batches(tables, batch_size=8, seed=0, epochs=2))
        assert batches
        for batch in batches:
            table = tables[batch.table_id]
            assert all(0 <= r < table.n_rows for r in batch.row_indices)
            assert len(batch.row_indices) == 8

    def test_drop_counts_use_floor(self):
        # floor(0.15 * 6) = 0 columns dropped
        batches = list(make_pretrain_batches([_mixed_table("six", 20, 6)],
                                             batch_size=4, drop_rate=0.15, seed=0))
        assert all(len(b.dropped) == 0 for b in batches)
        # floor(0.15 * 20) = 3 columns dropped
        batches = list(make_pretrain_batches([_mixed_table("twenty", 20, 20)],
                                             batch_size=4, drop_rate=0.15, seed=0))
        assert all(len(b.dropped) == 3 for b in batches)

    def test_never_drops_every_column(self):
        batches = list(make_pretrain_batches([_mixed_table("two", 20, 2)],
                                             batch_size=4, drop_rate=0.9, seed=0))
        assert all(len(b.column_order) >= 1 for b in batches)

    def test_permutation_is_bijection_on_retained(self):
        batches = list(make_pretrain_batches([_mixed_table("ten", 20, 10)],
                                             batch_size=4, drop_rate=0.15, seed=3))
        for batch in batches:
            assert sorted(batch.column_order + batch.dropped) == list(range(10))
            assert len(set(batch.column_order)) == len(batch.column_order)

    def test_small_table_sampled_with_replacement(self):
        batches = list(make_pretrain_batches([_mixed_table("tiny", 3, 2)],
                                             batch_size=8, seed=0))
        assert len(batches) == 1
        assert batches[0].sampled_with_replacement
        assert len(batches[0].row_indices) == 8

    def test_fresh_permutation_per_batch(self):
        batches = list(make_pretrain_batches([_mixed_table("big", 200, 8)],
                                             batch_size=10, seed=0))
        orders = {b.column_order for b in batches}
        assert len(orders) > 1

    def test_batch_size_floor(self):
        with pytest.raises(DataError, match="batch_size"):
            list(make_pretrain_batches([_mixed_table("m", 10, 2)], batch_size=1))

    def test_epoch_determinism(self):
        tables = [_mixed_table("one", 30, 3)]
        first = list(make_pretrain_batches(tables, batch_size=8, seed=11, epochs=2))
        second = list(make_pretrain_batches(tables, batch_size=8, seed=11, epochs=2))
        assert first == second
