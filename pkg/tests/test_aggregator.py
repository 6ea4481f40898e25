"""Aggregator shape contracts and the two training losses against oracles."""

import math

import numpy as np
import pytest
import torch

from polytab.aggregator import (
    AggregatorLossConfig,
    AggregatorNet,
    contrastive_loss,
    magnitude_loss,
    train_aggregator,
)
from polytab.data import ColumnSchema, TableDataset
from polytab.embedding import RowEmbedder
from polytab.numeric import NumberAutoencoder, fit_quantile
from polytab.text import HashedNGramEncoder


def oracle_contrastive(views, temperature):
    """Direct transcription of the multi-view in-batch loss, nested loops."""
    b, v, _ = views.shape
    flat = [views[i, k].numpy().astype(np.float64) for i in range(b) for k in range(v)]
    flat = [x / np.linalg.norm(x) for x in flat]
    n = b * v
    terms = []
    for a in range(n):
        row_a = a // v
        denom = sum(math.exp(float(flat[a] @ flat[o]) / temperature)
                    for o in range(n) if o != a)
        for p in range(n):
            if p == a or p // v != row_a:
                continue
            num = math.exp(float(flat[a] @ flat[p]) / temperature)
            terms.append(-math.log(num / denom))
    return sum(terms) / len(terms)


class TestAggregateShapes:
    @pytest.mark.parametrize("d", [1, 5, 40])
    def test_output_width_fixed_at_128(self, d):
        torch.manual_seed(0)
        net = AggregatorNet()
        net.eval()
        seq = torch.randn(2, 2 * d + 1, 768)
        out = net.aggregate_batch(seq)
        assert out.shape == (2, 128)

    def test_eval_mode_deterministic(self):
        torch.manual_seed(0)
        net = AggregatorNet()
        net.eval()
        seq = torch.randn(3, 7, 768)
        assert torch.equal(net.aggregate_batch(seq), net.aggregate_batch(seq))

    def test_untrained_net_distinguishes_rows(self):
        torch.manual_seed(1)
        net = AggregatorNet()
        net.eval()
        seqs = torch.randn(2, 7, 768)
        out = net.aggregate_batch(seqs)
        assert not torch.allclose(out[0], out[1])

    def test_masked_constant_input_is_legal(self):
        torch.manual_seed(0)
        net = AggregatorNet()
        net.eval()
        seq = torch.full((2, 5, 768), -1.0)
        out = net.aggregate_batch(seq)
        assert torch.isfinite(out).all()


class TestContrastiveLoss:
    def test_matches_oracle_on_random_batches(self):
        torch.manual_seed(3)
        for b, v in ((2, 2), (3, 2), (4, 3)):
            views = torch.randn(b, v, 16)
            ours = float(contrastive_loss(views, temperature=0.1))
            ref = oracle_contrastive(views, 0.1)
            assert ours == pytest.approx(ref, abs=1e-5)

    def test_two_row_fixture_hand_value(self):
        # views of each row identical, rows orthogonal
        e1 = torch.tensor([1.0, 0.0])
        e2 = torch.tensor([0.0, 1.0])
        views = torch.stack([torch.stack([e1, e1]), torch.stack([e2, e2])])
        tau = 0.5
        # every anchor: positive at cos=1, two negatives at cos=0
        expected = -math.log(math.exp(1 / tau) / (math.exp(1 / tau) + 2 * math.exp(0.0)))
        assert float(contrastive_loss(views, tau)) == pytest.approx(expected, abs=1e-6)

    def test_loss_decreases_with_row_separation(self):
        def loss_at(angle):
            e1 = torch.tensor([1.0, 0.0])
            e2 = torch.tensor([math.cos(angle), math.sin(angle)])
            views = torch.stack([torch.stack([e1, e1]), torch.stack([e2, e2])])
            return float(contrastive_loss(views, 0.2))

        losses = [loss_at(a) for a in (0.3, 0.8, 1.5)]
        assert losses[0] > losses[1] > losses[2]

    def test_scale_invariance(self):
        torch.manual_seed(0)
        views = torch.randn(3, 2, 8)
        base = float(contrastive_loss(views, 0.1))
        scaled = float(contrastive_loss(views * 37.5, 0.1))
        assert scaled == pytest.approx(base, rel=1e-5)

    def test_large_temperature_limit(self):
        torch.manual_seed(0)
        for b, v in ((2, 2), (3, 2)):
            views = torch.randn(b, v, 8)
            flat_limit = math.log(b * v - 1)
            assert float(contrastive_loss(views, 1e6)) == pytest.approx(flat_limit, abs=1e-4)

    def test_zero_norm_vector_rejected(self):
        views = torch.randn(2, 2, 4)
        views[0, 0] = 0.0
        with pytest.raises(ValueError, match="zero-norm"):
            contrastive_loss(views, 0.1)

    def test_needs_two_rows_and_two_views(self):
        with pytest.raises(ValueError, match="2 rows"):
            contrastive_loss(torch.randn(1, 2, 4), 0.1)
        with pytest.raises(ValueError, match="2 views"):
            contrastive_loss(torch.randn(2, 1, 4), 0.1)

    def test_nonnegative(self):
        torch.manual_seed(5)
        for _ in range(5):
            views = torch.randn(4, 2, 6)
            assert float(contrastive_loss(views, 0.3)) >= 0.0


class TestMagnitudeLoss:
    def test_hand_fixture(self):
        # margin = (0.9 - 0.1) / 1 = 0.8; hinge = 0.2 - 0.5 + 0.8 = 0.5
        v_i = torch.tensor([0.0, 0.0])
        v_j = torch.tensor([0.2, 0.0])
        v_k = torch.tensor([0.5, 0.0])
        loss = magnitude_loss(v_i, v_j, v_k, 0.0, 0.1, 0.9, value_range=1.0)
        assert float(loss) == pytest.approx(0.5, abs=1e-6)

    def test_zero_when_margin_satisfied(self):
        v_i = torch.tensor([0.0, 0.0])
        v_k = torch.tensor([3.0, 0.0])
        loss = magnitude_loss(v_i, v_i.clone(), v_k, 0.0, 0.1, 0.9, value_range=1.0)
        assert float(loss) == 0.0

    def test_equal_gaps_collapse_to_plain_hinge(self):
        v_i = torch.tensor([0.0])
        v_j = torch.tensor([2.0])
        v_k = torch.tensor([1.0])
        # margin 0: hinge = |2| - |1| = 1
        loss = magnitude_loss(v_i, v_j, v_k, 0.0, 0.5, 0.5, value_range=2.0)
        assert float(loss) == pytest.approx(1.0, abs=1e-6)

    def test_misordered_triplet_rejected(self):
        v = torch.zeros(2)
        with pytest.raises(ValueError, match="misordered"):
            magnitude_loss(v, v, v, 0.0, 0.9, 0.1, value_range=1.0)

    def test_nonpositive_range_rejected(self):
        v = torch.zeros(2)
        with pytest.raises(ValueError, match="value_range"):
            magnitude_loss(v, v, v, 0.0, 0.1, 0.9, value_range=0.0)

    def test_zero_iff_separation_beats_margin(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            v_i = torch.tensor(rng.normal(size=3), dtype=torch.float32)
            v_j = torch.tensor(rng.normal(size=3), dtype=torch.float32)
            v_k = torch.tensor(rng.normal(size=3), dtype=torch.float32)
            x = np.sort(rng.uniform(0, 1, 3))
            loss = float(magnitude_loss(v_i, v_j, v_k, x[0], x[1], x[2], value_range=1.0))
            margin = (x[2] - x[0]) - (x[1] - x[0])
            gap = float((v_i - v_k).norm() - (v_i - v_j).norm())
            if gap >= margin:
                assert loss == pytest.approx(0.0, abs=1e-6)
            else:
                assert loss == pytest.approx(margin - gap, abs=1e-5)


def _correlated_numeric_table(n=120, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, n)
    y = x + rng.normal(0.0, 0.2, n)
    cols = (ColumnSchema("first reading", "numerical"),
            ColumnSchema("second reading", "numerical"))
    rows = tuple((float(a), float(b)) for a, b in zip(x, y))
    return TableDataset("two correlated sensor readings", cols, rows)


@pytest.fixture(scope="module")
def trained_toy_aggregator():
    table = _correlated_numeric_table()
    encoder = HashedNGramEncoder(seed=0)
    torch.manual_seed(0)
    autoencoder = NumberAutoencoder()
    autoencoder.eval()
    transformers = {c.name: fit_quantile(table.column_values(i))
                    for i, c in enumerate(table.columns)}
    embedder = RowEmbedder(table, encoder, autoencoder, transformers)
    result = train_aggregator(
        [table], [embedder], AggregatorLossConfig(), epochs=200,
        batch_size=32, seed=0,
    )
    return table, embedder, result


class TestTrainAggregator:
    def test_contrastive_loss_drops_at_least_30_percent(self, trained_toy_aggregator):
        _, _, result = trained_toy_aggregator
        curve = [row["contrastive"] for row in result.loss_curve]
        assert curve[-1] <= 0.7 * curve[0]

    def test_latent_distance_tracks_value_distance(self, trained_toy_aggregator):
        from scipy.stats import spearmanr

        table, embedder, result = trained_toy_aggregator
        latents = result.net.aggregate_batch(embedder.embed_table())
        values = np.array([row[0] for row in table.rows])
        iu = np.triu_indices(table.n_rows, 1)
        d_latent = torch.cdist(latents, latents).numpy()[iu]
        d_value = np.abs(values[:, None] - values[None, :])[iu]
        assert spearmanr(d_latent, d_value).statistic > 0

    def test_zero_weight_disables_magnitude_loss(self):
        table = _correlated_numeric_table(n=40, seed=1)
        encoder = HashedNGramEncoder(seed=0)
        torch.manual_seed(0)
        autoencoder = NumberAutoencoder()
        transformers = {c.name: fit_quantile(table.column_values(i))
                        for i, c in enumerate(table.columns)}
        embedder = RowEmbedder(table, encoder, autoencoder, transformers)
        result = train_aggregator(
            [table], [embedder], AggregatorLossConfig(magnitude_weight=0.0),
            epochs=4, batch_size=16, seed=0,
        )
        assert all(row["magnitude"] == 0.0 for row in result.loss_curve)

    def test_loss_config_validation(self):
        with pytest.raises(ValueError):
            AggregatorLossConfig(temperature=0.0)
        with pytest.raises(ValueError):
            AggregatorLossConfig(magnitude_weight=-1.0)
        with pytest.raises(ValueError):
            AggregatorLossConfig(corrupted_views=0)
