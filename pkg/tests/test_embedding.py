"""Row embedding sequences, masking, and batch gathering."""

import numpy as np
import pytest
import torch

from polytab.data import ColumnSchema, TableDataset
from polytab.embedding import (
    EmbeddingSequence,
    RowEmbedder,
    apply_batch_masks,
    gather_batch,
    make_masked_views,
    mask_value_slots,
    random_batch_masks,
    value_slot,
)
from polytab.numeric import NumberAutoencoder, fit_quantile
from polytab.text import HashedNGramEncoder


@pytest.fixture(scope="module")
def encoder():
    return HashedNGramEncoder(seed=0)


@pytest.fixture(scope="module")
def autoencoder():
    torch.manual_seed(0)
    model = NumberAutoencoder()
    model.eval()
    return model


def mixed_table():
    cols = (
        ColumnSchema("height", "numerical"),
        ColumnSchema("grade", "categorical", ("good", "bad")),
        ColumnSchema("width", "numerical"),
    )
    rows = ((1.0, "good", 10.0), (2.0, "bad", 20.0), (3.0, "good", 30.0))
    return TableDataset("a table of object measurements", cols, rows)


def embedder_for(table, encoder, autoencoder):
    transformers = {
        table.columns[i].name: fit_quantile(table.column_values(i))
        for i in table.numerical_indices
    }
    return RowEmbedder(table, encoder, autoencoder, transformers)


class TestEmbedRow:
    def test_metadata_only_length_one(self, encoder, autoencoder):
        table = TableDataset("just context", (), ((),))
        emb = RowEmbedder(table, encoder, autoencoder, {})
        seq = emb.embed_row(())
        assert len(seq) == 1
        assert seq.n_columns == 0

    def test_mixed_row_length_and_slot_content(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        seq = emb.embed_row(table.rows[0])
        assert len(seq) == 7
        assert torch.equal(seq.vectors[0],
                           torch.from_numpy(encoder.encode(table.metadata).copy()))
        assert torch.equal(seq.vectors[1],
                           torch.from_numpy(encoder.encode("height").copy()))
        # numerical slot holds the autoencoder code of the quantile value
        q = emb.transformers["height"].transform(1.0)
        expected = autoencoder.encode_values(np.array([q]))[0]
        assert torch.allclose(seq.vectors[2], expected, atol=1e-6)
        # categorical slot holds the category text embedding
        assert torch.equal(seq.vectors[4],
                           torch.from_numpy(encoder.encode("good").copy()))

    def test_identical_rows_identical_sequences(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        a = emb.embed_row(table.rows[1])
        b = emb.embed_row(table.rows[1])
        assert torch.equal(a.vectors, b.vectors)

    @pytest.mark.parametrize("d", [1, 2, 5])
    def test_sequence_length_is_2d_plus_1(self, encoder, autoencoder, d):
        cols = tuple(ColumnSchema(f"col {i}", "numerical") for i in range(d))
        rows = tuple(tuple(float(i + j) for j in range(d)) for i in range(3))
        table = TableDataset("synthetic", cols, rows)
        emb = embedder_for(table, encoder, autoencoder)
        assert len(emb.embed_row(table.rows[0])) == 2 * d + 1

    def test_out_of_vocabulary_category_rejected(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        with pytest.raises(ValueError, match="category set"):
            emb.embed_row((1.0, "ugly", 10.0))

    def test_unfitted_column_rejected(self, encoder, autoencoder):
        table = mixed_table()
        with pytest.raises(ValueError, match="transformer"):
            RowEmbedder(table, encoder, autoencoder, {})

    def test_embed_table_matches_embed_row(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        full = emb.embed_table()
        assert full.shape == (3, 7, 768)
        for r, row in enumerate(table.rows):
            assert torch.allclose(full[r], emb.embed_row(row).vectors, atol=1e-6)

    def test_text_encoder_called_once_per_unique_string(self, autoencoder):
        fresh = HashedNGramEncoder(seed=4)
        table = mixed_table()
        emb = embedder_for(table, fresh, autoencoder)
        emb.embed_table()
        emb.embed_table()
        # metadata + 3 names + 2 categories
        assert fresh.encode_calls == 6


class TestMaskedViews:
    def test_view_count_and_mask_size(self, encoder, autoencoder):
        cols = tuple(ColumnSchema(f"c{i}", "numerical") for i in range(4))
        table = TableDataset("m", cols, ((1.0, 2.0, 3.0, 4.0), (2.0, 3.0, 4.0, 5.0)))
        emb = embedder_for(table, encoder, autoencoder)
        seq = emb.embed_row(table.rows[0])
        views = make_masked_views(seq, views=1, mask_fraction=0.5, seed=0)
        assert len(views) == 2
        assert views[0] is seq
        assert sum(views[1].masked) == 2

    def test_masked_slot_is_constant_minus_one(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        seq = emb.embed_row(table.rows[0])
        view = make_masked_views(seq, views=1, mask_fraction=0.5, seed=3)[1]
        masked_cols = [c for c, m in enumerate(view.masked) if m]
        assert masked_cols
        for c in masked_cols:
            assert torch.all(view.vectors[value_slot(c)] == -1.0)

    def test_name_slots_identical_across_views(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        seq = emb.embed_row(table.rows[0])
        views = make_masked_views(seq, views=3, mask_fraction=0.5, seed=1)
        name_rows = [0, 1, 3, 5]
        for view in views[1:]:
            assert torch.equal(view.vectors[name_rows], seq.vectors[name_rows])

    def test_at_least_one_slot_masked(self, encoder, autoencoder):
        cols = (ColumnSchema("only", "numerical"),)
        table = TableDataset("m", cols, ((1.0,), (2.0,)))
        emb = embedder_for(table, encoder, autoencoder)
        views = make_masked_views(emb.embed_row(table.rows[0]), views=2,
                                  mask_fraction=0.25, seed=0)
        assert all(sum(v.masked) == 1 for v in views[1:])

    def test_independent_subsets_across_views(self, encoder, autoencoder):
        cols = tuple(ColumnSchema(f"c{i}", "numerical") for i in range(8))
        rows = (tuple(float(i) for i in range(8)),
                tuple(float(i + 1) for i in range(8)))
        table = TableDataset("m", cols, rows)
        emb = embedder_for(table, encoder, autoencoder)
        views = make_masked_views(emb.embed_row(rows[0]), views=6,
                                  mask_fraction=0.5, seed=2)
        subsets = {tuple(v.masked) for v in views[1:]}
        assert len(subsets) > 1


class TestBatchHelpers:
    def test_gather_keeps_name_value_pairing(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        full = emb.embed_table()
        batch = gather_batch(full, [2, 0], [2, 0])
        # reordered view must equal embedding the reordered row directly
        reordered_cols = [table.columns[2], table.columns[0]]
        row2 = (table.rows[2][2], table.rows[2][0])
        direct = emb.embed_row(row2, columns=reordered_cols)
        assert torch.allclose(batch[0], direct.vectors, atol=1e-6)

    def test_mask_value_slots_leaves_rest(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        full = emb.embed_table()
        masked = mask_value_slots(full, [1])
        assert torch.all(masked[:, value_slot(1)] == -1.0)
        keep = [i for i in range(full.shape[1]) if i != value_slot(1)]
        assert torch.equal(masked[:, keep], full[:, keep])

    def test_random_batch_masks_shape_and_range(self):
        rng = np.random.default_rng(0)
        masks = random_batch_masks(16, 6, 0.5, rng)
        assert masks.shape == (16, 3)
        assert masks.min() >= 0 and masks.max() < 6

    def test_apply_batch_masks(self, encoder, autoencoder):
        table = mixed_table()
        emb = embedder_for(table, encoder, autoencoder)
        full = emb.embed_table()
        masks = np.array([[0], [1], [2]])
        out = apply_batch_masks(full, masks)
        for r in range(3):
            assert torch.all(out[r, value_slot(int(masks[r, 0]))] == -1.0)


class TestEmbeddingSequence:
    def test_shape_validation(self):
        with pytest.raises(ValueError, match="length"):
            EmbeddingSequence(torch.zeros(4, 8), masked=(False,))

    def test_valid_construction(self):
        seq = EmbeddingSequence(torch.zeros(5, 8), masked=(False, True))
        assert seq.n_columns == 2
