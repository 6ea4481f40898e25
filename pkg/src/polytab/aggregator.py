"""Attention aggregator: variable-length row sequences to fixed 128-d latents.

A single learnable latent query cross-attends to itself plus the projected
input sequence through a depth-4 resampler stack, so rows with any column
count land in the same latent space. Training combines an in-batch
multi-view contrastive loss with a magnitude-aware triplet loss that ties
latent distances to numeric value gaps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .data import TableDataset, make_pretrain_batches
from .embedding import RowEmbedder, EmbeddingSequence, apply_batch_masks, gather_batch, random_batch_masks
from .numeric import TrainingDiagnosticError
from .text import TEXT_DIM

logger = logging.getLogger(__name__)

LATENT_DIM = 128


class ResamplerStack(nn.Module):
    """Stack of blocks where learnable latents attend to [latents; inputs] then feed forward."""

    def __init__(self, dim: int, depth: int = 4, heads: int = 4, ff_mult: int = 4,
                 n_latents: int = 1):
        super().__init__()
        self.dim = dim
        self.latents = nn.Parameter(torch.randn(n_latents, dim) / dim**0.5)
        self.blocks = nn.ModuleList()
        for _ in range(depth):
            self.blocks.append(nn.ModuleDict({
                "norm_q": nn.LayerNorm(dim),
                "norm_kv": nn.LayerNorm(dim),
                "attn": nn.MultiheadAttention(dim, heads, batch_first=True),
                "norm_ff": nn.LayerNorm(dim),
                "ff": nn.Sequential(
                    nn.Linear(dim, ff_mult * dim),
                    nn.GELU(),
                    nn.Linear(ff_mult * dim, dim),
                ),
            }))

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        # inputs: (batch, seq, dim) -> (batch, n_latents, dim)
        bsz = inputs.shape[0]
        v = self.latents.unsqueeze(0).expand(bsz, -1, -1)
        for block in self.blocks:
            q = block["norm_q"](v)
            kv = torch.cat([q, block["norm_kv"](inputs)], dim=1)
            attended, _ = block["attn"](q, kv, kv, need_weights=False)
            v = v + attended
            v = v + block["ff"](block["norm_ff"](v))
        return v


class AggregatorNet(nn.Module):
    """Projects 768-d sequence tokens down and resamples them into one 128-d row latent.

    The output passes through batch normalization: rows of any table share a
    large common latent component, and removing it keeps cosine similarities
    between rows from saturating during contrastive training.
    """

    def __init__(self, input_dim: int = TEXT_DIM, latent_dim: int = LATENT_DIM,
                 depth: int = 4, heads: int = 4, ff_mult: int = 4):
        super().__init__()
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.proj_in = nn.Linear(input_dim, latent_dim)
        self.resampler = ResamplerStack(latent_dim, depth=depth, heads=heads, ff_mult=ff_mult)
        self.output_norm = nn.BatchNorm1d(latent_dim)

    def forward(self, sequences: torch.Tensor) -> torch.Tensor:
        # sequences: (batch, length, input_dim) -> (batch, latent_dim)
        return self.output_norm(self.resampler(self.proj_in(sequences))[:, 0])

    @torch.no_grad()
    def aggregate(self, seq: EmbeddingSequence) -> torch.Tensor:
        """Compress one embedding sequence into its latent row vector."""
        was_training = self.training
        self.eval()
        out = self.forward(seq.vectors.unsqueeze(0))[0]
        if was_training:
            self.train()
        return out

    @torch.no_grad()
    def aggregate_batch(self, sequences: torch.Tensor) -> torch.Tensor:
        was_training = self.training
        self.eval()
        out = self.forward(sequences)
        if was_training:
            self.train()
        return out


@dataclass(frozen=True)
class AggregatorLossConfig:
    temperature: float = 0.1
    magnitude_weight: float = 2.0
    corrupted_views: int = 1
    mask_fraction: float = 0.5

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.magnitude_weight < 0:
            raise ValueError("magnitude weight must be nonnegative")
        if self.corrupted_views < 1:
            raise ValueError("need at least one corrupted view")


def contrastive_loss(views: torch.Tensor, temperature: float = 0.1) -> torch.Tensor:
    """Multi-view in-batch contrastive loss over cosine similarities.

    ``views`` is (rows, views, dim); views of the same row are positives for
    each other. For every (anchor, positive) pair the denominator runs over
    all other views of all rows in the batch (anchor excluded, positive
    included), making each term nonnegative. The result is the mean over
    anchor-positive pairs.
    """
    if views.ndim != 3:
        raise ValueError("expected (rows, views, dim) tensor")
    b, v, dim = views.shape
    if b < 2:
        raise ValueError("need at least 2 rows for in-batch negatives")
    if v < 2:
        raise ValueError("need at least 2 views per row")
    flat = views.reshape(b * v, dim)
    norms = flat.norm(dim=1)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm vector: cosine similarity undefined")
    z = flat / norms.unsqueeze(1)
    sim = (z @ z.T) / temperature
    n = b * v
    eye = torch.eye(n, dtype=torch.bool, device=sim.device)
    sim = sim.masked_fill(eye, float("-inf"))
    log_denom = torch.logsumexp(sim, dim=1)
    row_of = torch.arange(n, device=sim.device) // v
    same_row = (row_of.unsqueeze(0) == row_of.unsqueeze(1)) & ~eye
    # one term per ordered (anchor, positive) pair
    anchor_idx, pos_idx = same_row.nonzero(as_tuple=True)
    terms = log_denom[anchor_idx] - sim[anchor_idx, pos_idx]
    return terms.mean()


def magnitude_loss(
    v_i: torch.Tensor, v_j: torch.Tensor, v_k: torch.Tensor,
    x_i: float, x_j: float, x_k: float, value_range: float,
) -> torch.Tensor:
    """Triplet hinge whose margin scales with the numeric gap difference.

    Requires |x_i - x_k| >= |x_i - x_j| (so the margin is nonnegative) and a
    positive column value range; callers reorder or skip triplets that
    violate the ordering.
    """
    if value_range <= 0:
        raise ValueError("value_range must be positive")
    gap_j = abs(x_i - x_j)
    gap_k = abs(x_i - x_k)
    if gap_k < gap_j:
        raise ValueError("triplet misordered: |x_i - x_k| must be >= |x_i - x_j|")
    margin = (gap_k - gap_j) / value_range
    return torch.relu((v_i - v_j).norm() - (v_i - v_k).norm() + margin)


def _magnitude_loss_batch(
    latents: torch.Tensor, values: np.ndarray, value_range: float, rng: np.random.Generator
) -> torch.Tensor:
    """Vectorized triplet hinge over one random (j, k) draw per anchor row."""
    n = latents.shape[0]
    j = (np.arange(n) + rng.integers(1, n, size=n)) % n
    k = (np.arange(n) + rng.integers(1, n, size=n)) % n
    # keep indices distinct from each other as well as from the anchor
    clash = j == k
    k[clash] = (k[clash] + 1) % n
    k[k == np.arange(n)] = (k[k == np.arange(n)] + 1) % n
    gap_j = np.abs(values - values[j])
    gap_k = np.abs(values - values[k])
    swap = gap_k < gap_j
    j2 = np.where(swap, k, j)
    k2 = np.where(swap, j, k)
    margin = torch.as_tensor(
        (np.maximum(gap_j, gap_k) - np.minimum(gap_j, gap_k)) / value_range, dtype=torch.float32
    )
    d_j = (latents - latents[j2]).norm(dim=1)
    d_k = (latents - latents[k2]).norm(dim=1)
    return torch.relu(d_j - d_k + margin).mean()


@dataclass
class AggregatorTrainingResult:
    net: AggregatorNet
    loss_curve: list[dict] = field(default_factory=list)
    magnitude_skipped_steps: int = 0


def train_aggregator(
    tables: list[TableDataset],
    embedders: list[RowEmbedder],
    config: AggregatorLossConfig,
    epochs: int,
    batch_size: int = 128,
    lr: float = 5e-4,
    drop_rate: float = 0.15,
    seed: int = 0,
    net: AggregatorNet | None = None,
) -> AggregatorTrainingResult:
    """Train the aggregator on per-table batches of masked row views.

    Each batch contributes the contrastive loss over its K+1 views plus,
    when the epoch's chosen numeric column survives the batch's column drop,
    the weighted magnitude loss on the unmasked-view latents. Adam with a
    cosine-annealed learning rate.
    """
    torch.manual_seed(seed)
    if net is None:
        net = AggregatorNet(input_dim=embedders[0].dim)
    full = [emb.embed_table() for emb in embedders]
    column_ranges = []
    for table in tables:
        ranges = {}
        for c in table.numerical_indices:
            vals = np.asarray(table.column_values(c), dtype=np.float64)
            ranges[c] = float(vals.max() - vals.min())
        column_ranges.append(ranges)

    opt = torch.optim.Adam(net.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(epochs, 1))
    rng = np.random.default_rng(seed)
    result = AggregatorTrainingResult(net=net)
    net.train()
    for epoch in range(epochs):
        # one numeric column per table is picked for the magnitude loss this epoch
        magnitude_column = {}
        for t, table in enumerate(tables):
            numeric = [c for c in table.numerical_indices if column_ranges[t][c] > 0]
            magnitude_column[t] = int(rng.choice(numeric)) if numeric else None
        epoch_con, epoch_mag, steps = 0.0, 0.0, 0
        batches = make_pretrain_batches(tables, batch_size, drop_rate,
                                        seed=int(rng.integers(2**31)), epochs=1)
        for batch in batches:
            table = tables[batch.table_id]
            base = gather_batch(full[batch.table_id], batch.row_indices, batch.column_order)
            n, d = base.shape[0], len(batch.column_order)
            view_stack = [base]
            for _ in range(config.corrupted_views):
                masks = random_batch_masks(n, d, config.mask_fraction, rng)
                view_stack.append(apply_batch_masks(base, masks))
            stacked = torch.stack(view_stack, dim=1)  # (n, K+1, L, dim)
            latents = net(stacked.reshape(n * (config.corrupted_views + 1), *base.shape[1:]))
            latents = latents.reshape(n, config.corrupted_views + 1, -1)
            loss = contrastive_loss(latents, config.temperature)
            epoch_con += float(loss.item())

            mag_col = magnitude_column[batch.table_id]
            if (mag_col is not None and mag_col in batch.column_order
                    and config.magnitude_weight > 0 and n >= 3):
                vals = np.asarray(
                    [table.rows[r][mag_col] for r in batch.row_indices], dtype=np.float64
                )
                mag = _magnitude_loss_batch(
                    latents[:, 0], vals, column_ranges[batch.table_id][mag_col], rng
                )
                loss = loss + config.magnitude_weight * mag
                epoch_mag += float(mag.item())
            else:
                result.magnitude_skipped_steps += 1
                logger.debug("magnitude loss skipped (table %d epoch %d)", batch.table_id, epoch)

            opt.zero_grad()
            loss.backward()
            opt.step()
            steps += 1
        sched.step()
        result.loss_curve.append({
            "epoch": epoch,
            "contrastive": epoch_con / max(steps, 1),
            "magnitude": epoch_mag / max(steps, 1),
        })
    net.eval()
    _check_loss_decreased("aggregator", [row["contrastive"] for row in result.loss_curve])
    return result


def _check_loss_decreased(stage: str, losses: list[float], window: int = 5) -> None:
    if len(losses) < 2 * window:
        return
    head = float(np.mean(losses[:window]))
    tail = float(np.mean(losses[-window:]))
    if tail >= head:
        raise TrainingDiagnosticError(f"stage {stage}: loss did not decrease ({head:.4g} -> {tail:.4g})")
