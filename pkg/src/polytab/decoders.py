"""Type-specific cell decoders: recover column values from (metadata, name, latent).

The categorical decoder projects each cell into a 128-d space where cells
sharing a category cluster; decoding picks the category whose anchor vector
is most cosine-similar. The numerical decoder regresses the cell's quantile
value, which the fitted column transformer maps back to the original range.
Both are trained against a frozen aggregator, one column per step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .aggregator import AggregatorNet, ResamplerStack
from .data import CATEGORICAL, NUMERICAL, ColumnSchema, TableDataset, make_pretrain_batches
from .embedding import RowEmbedder, gather_batch, mask_value_slots, sequence_for_category
from .numeric import QuantileTransformer, TrainingDiagnosticError
from .text import TEXT_DIM

logger = logging.getLogger(__name__)

DECODER_DIM = 128


class _CellNet(nn.Module):
    """Shared decoder trunk: project text inputs down, resample [m, name, latent]."""

    def __init__(self, text_dim: int = TEXT_DIM, latent_dim: int = DECODER_DIM,
                 depth: int = 4, heads: int = 4, ff_mult: int = 4):
        super().__init__()
        self.text_proj = nn.Linear(text_dim, latent_dim)
        self.resampler = ResamplerStack(latent_dim, depth=depth, heads=heads, ff_mult=ff_mult)

    def forward(self, e_m: torch.Tensor, e_c: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        tokens = torch.stack([self.text_proj(e_m), self.text_proj(e_c), v], dim=1)
        return self.resampler(tokens)[:, 0]


class CategoricalDecoder(nn.Module):
    """Projects a cell's context into the anchor space used for category matching."""

    def __init__(self, text_dim: int = TEXT_DIM, out_dim: int = DECODER_DIM):
        super().__init__()
        self.out_dim = out_dim
        self.net = _CellNet(text_dim, out_dim)

    def forward(self, e_m, e_c, v):
        return self.net(e_m, e_c, v)

    @torch.no_grad()
    def project(self, e_m, e_c, v) -> torch.Tensor:
        was_training = self.training
        self.eval()
        out = self.forward(e_m, e_c, v)
        if was_training:
            self.train()
        return out


class NumericalDecoder(nn.Module):
    """Regresses a cell's quantile value from its context."""

    def __init__(self, text_dim: int = TEXT_DIM, hidden_dim: int = DECODER_DIM):
        super().__init__()
        self.net = _CellNet(text_dim, hidden_dim)
        self.head = nn.Linear(hidden_dim, 1)

    def forward(self, e_m, e_c, v):
        return self.head(self.net(e_m, e_c, v)).squeeze(-1)

    @torch.no_grad()
    def predict(self, e_m, e_c, v) -> torch.Tensor:
        was_training = self.training
        self.eval()
        out = self.forward(e_m, e_c, v)
        if was_training:
            self.train()
        return out


@dataclass
class CategoryAnchorSet:
    """Per-column anchor vectors for one table's categorical columns."""

    anchors: dict[str, tuple[tuple[str, ...], torch.Tensor]] = field(default_factory=dict)

    def categories(self, column: str) -> tuple[str, ...]:
        return self.anchors[column][0]

    def vectors(self, column: str) -> torch.Tensor:
        return self.anchors[column][1]

    def __contains__(self, column: str) -> bool:
        return column in self.anchors

    def state_dict(self) -> dict:
        return {col: {"categories": list(cats), "vectors": vecs}
                for col, (cats, vecs) in self.anchors.items()}

    @classmethod
    def from_state_dict(cls, payload: dict) -> "CategoryAnchorSet":
        out = cls()
        for col, entry in payload.items():
            out.anchors[col] = (tuple(entry["categories"]), entry["vectors"])
        return out


def build_anchors(
    decoder: CategoricalDecoder,
    embedder: RowEmbedder,
    aggregator: AggregatorNet,
) -> CategoryAnchorSet:
    """Build one anchor per (column, category) with frozen decoder and aggregator.

    Each category is embedded as the minimal [metadata, name, category]
    sequence, aggregated to a latent, and projected into the anchor space.
    """
    table = embedder.table
    out = CategoryAnchorSet()
    e_m = embedder.metadata_vector().unsqueeze(0)
    for c in table.categorical_indices:
        column = table.columns[c]
        e_c = embedder.name_vector(column).unsqueeze(0)
        vectors = []
        for category in column.categories:
            seq = sequence_for_category(embedder, column, category)
            v = aggregator.aggregate(seq).unsqueeze(0)
            vectors.append(decoder.project(e_m, e_c, v)[0])
        out.anchors[column.name] = (column.categories, torch.stack(vectors))
    return out


def _cosine_to_anchors(z: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    z_n = z / z.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    a_n = anchors / anchors.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    return z_n @ a_n.T


def decode_categorical_batch(
    e_m: torch.Tensor, e_c: torch.Tensor, v: torch.Tensor,
    categories: tuple[str, ...], anchor_vectors: torch.Tensor,
    decoder: CategoricalDecoder,
) -> tuple[list[str], int]:
    """Decode a batch of latents to categories; returns (labels, tie_count)."""
    if len(categories) == 0:
        raise ValueError("empty anchor set")
    z = decoder.project(e_m, e_c, v)
    sims = _cosine_to_anchors(z, anchor_vectors)
    best = torch.argmax(sims, dim=1)
    top = sims.gather(1, best.unsqueeze(1)).squeeze(1)
    ties = int(((sims == top.unsqueeze(1)).sum(dim=1) > 1).sum().item())
    if ties:
        logger.warning("%d tied anchor matches resolved by category order", ties)
    return [categories[i] for i in best.tolist()], ties


def decode_categorical(
    e_m: torch.Tensor, e_c: torch.Tensor, v: torch.Tensor,
    categories: tuple[str, ...], anchor_vectors: torch.Tensor,
    decoder: CategoricalDecoder,
) -> str:
    """Decode one cell: the category whose anchor is nearest in cosine similarity.

    Exact ties resolve to the earliest category in schema order and are logged.
    """
    labels, _ = decode_categorical_batch(
        e_m.unsqueeze(0), e_c.unsqueeze(0), v.unsqueeze(0),
        categories, anchor_vectors, decoder,
    )
    return labels[0]


def decode_numerical_batch(
    e_m: torch.Tensor, e_c: torch.Tensor, v: torch.Tensor,
    transformer: QuantileTransformer, decoder: NumericalDecoder,
) -> np.ndarray:
    raw = decoder.predict(e_m, e_c, v)
    quantiles = np.clip(raw.numpy().astype(np.float64), 0.0, 1.0)
    return transformer.inverse(quantiles)


def decode_numerical(
    e_m: torch.Tensor, e_c: torch.Tensor, v: torch.Tensor,
    transformer: QuantileTransformer, decoder: NumericalDecoder,
) -> float:
    """Decode one cell: clamp the regressed quantile to [0, 1], invert the column map."""
    out = decode_numerical_batch(
        e_m.unsqueeze(0), e_c.unsqueeze(0), v.unsqueeze(0), transformer, decoder
    )
    return float(out[0])


def categorical_contrastive_loss(
    z: torch.Tensor,
    labels: list,
    temperature: float = 1.0,
    literal_denominator: bool = True,
    eps: float = 1e-12,
) -> torch.Tensor:
    """Supervised contrastive loss clustering same-category cell projections.

    ``z`` is (rows, views, dim); every pair of views with equal labels is a
    positive. In the literal form the denominator sums similarities over
    different-category views only; the standard form instead uses every view
    except the anchor. Mean over positive pairs.
    """
    b, k, dim = z.shape
    flat = z.reshape(b * k, dim)
    flat = flat / flat.norm(dim=1, keepdim=True).clamp_min(1e-12)
    sim = (flat @ flat.T) / temperature
    codes = _label_codes(labels)
    label_idx = torch.as_tensor([c for c in codes for _ in range(k)])
    same = label_idx.unsqueeze(0) == label_idx.unsqueeze(1)
    n = b * k
    eye = torch.eye(n, dtype=torch.bool)
    if literal_denominator:
        denom_mask = ~same
    else:
        denom_mask = ~eye
    if not bool(denom_mask.any(dim=1).all()):
        raise ValueError("a category has no contrasting samples in this batch")
    exp_sim = torch.exp(sim)
    denom = (exp_sim * denom_mask).sum(dim=1)
    pos_mask = same if literal_denominator else (same & ~eye)
    anchor_idx, pos_idx = pos_mask.nonzero(as_tuple=True)
    terms = -(sim[anchor_idx, pos_idx] - torch.log(denom[anchor_idx] + eps))
    return terms.mean()


def _label_codes(labels: list) -> list[int]:
    codes: dict = {}
    return [codes.setdefault(v, len(codes)) for v in labels]


@dataclass
class DecoderTrainingResult:
    categorical: CategoricalDecoder
    numerical: NumericalDecoder
    loss_curve: list[dict] = field(default_factory=list)
    skipped_single_category_steps: int = 0


def train_decoders(
    tables: list[TableDataset],
    embedders: list[RowEmbedder],
    aggregator: AggregatorNet,
    epochs: int,
    batch_size: int = 128,
    lr: float = 5e-4,
    drop_rate: float = 0.15,
    seed: int = 0,
    temperature: float = 1.0,
    literal_denominator: bool = True,
) -> DecoderTrainingResult:
    """Train both decoders against the frozen aggregator, one column per step.

    Every batch picks a single retained column. Each row contributes two
    views: the full sequence and one with that column's value slot masked, so
    the decoders learn to fill values in from the rest of the row. The
    categorical decoder minimizes the supervised contrastive loss, the
    numerical decoder squared error against true quantiles.
    """
    torch.manual_seed(seed)
    cat_decoder = CategoricalDecoder(text_dim=embedders[0].dim)
    num_decoder = NumericalDecoder(text_dim=embedders[0].dim)
    full = [emb.embed_table() for emb in embedders]

    opt_cat = torch.optim.Adam(cat_decoder.parameters(), lr=lr)
    opt_num = torch.optim.Adam(num_decoder.parameters(), lr=lr)
    sched_cat = torch.optim.lr_scheduler.CosineAnnealingLR(opt_cat, T_max=max(epochs, 1))
    sched_num = torch.optim.lr_scheduler.CosineAnnealingLR(opt_num, T_max=max(epochs, 1))
    rng = np.random.default_rng(seed)
    result = DecoderTrainingResult(categorical=cat_decoder, numerical=num_decoder)
    cat_decoder.train()
    num_decoder.train()
    aggregator.eval()
    cat_ever, num_ever = False, False
    for epoch in range(epochs):
        cat_sum, cat_steps, num_sum, num_steps = 0.0, 0, 0.0, 0
        batches = make_pretrain_batches(tables, batch_size, drop_rate,
                                        seed=int(rng.integers(2**31)), epochs=1)
        for batch in batches:
            table = tables[batch.table_id]
            embedder = embedders[batch.table_id]
            pos = int(rng.integers(len(batch.column_order)))
            col_idx = batch.column_order[pos]
            column = table.columns[col_idx]
            base = gather_batch(full[batch.table_id], batch.row_indices, batch.column_order)
            masked = mask_value_slots(base, [pos])
            with torch.no_grad():
                v_full = aggregator(base)
                v_masked = aggregator(masked)
            n = base.shape[0]
            e_m = embedder.metadata_vector().unsqueeze(0).expand(n, -1)
            e_c = embedder.name_vector(column).unsqueeze(0).expand(n, -1)
            values = [table.rows[r][col_idx] for r in batch.row_indices]

            if column.kind == CATEGORICAL:
                if len(set(values)) < 2:
                    result.skipped_single_category_steps += 1
                    logger.debug("single-category batch for %r, step skipped", column.name)
                    continue
                z_full = cat_decoder(e_m, e_c, v_full)
                z_masked = cat_decoder(e_m, e_c, v_masked)
                z = torch.stack([z_full, z_masked], dim=1)
                loss = categorical_contrastive_loss(
                    z, values, temperature=temperature,
                    literal_denominator=literal_denominator,
                )
                opt_cat.zero_grad()
                loss.backward()
                opt_cat.step()
                cat_ever = True
                cat_sum += float(loss.item())
                cat_steps += 1
            else:
                targets = torch.as_tensor(
                    embedder.transformers[column.name].transform(np.asarray(values)),
                    dtype=torch.float32,
                )
                pred_full = num_decoder(e_m, e_c, v_full)
                pred_masked = num_decoder(e_m, e_c, v_masked)
                loss = (torch.nn.functional.mse_loss(pred_full, targets)
                        + torch.nn.functional.mse_loss(pred_masked, targets))
                opt_num.zero_grad()
                loss.backward()
                opt_num.step()
                num_ever = True
                num_sum += float(loss.item())
                num_steps += 1
        if cat_ever:
            sched_cat.step()
        if num_ever:
            sched_num.step()
        result.loss_curve.append({
            "epoch": epoch,
            "categorical": cat_sum / max(cat_steps, 1),
            "numerical": num_sum / max(num_steps, 1),
        })
    cat_decoder.eval()
    num_decoder.eval()
    num_losses = [row["numerical"] for row in result.loss_curve if row["numerical"] > 0]
    _decoder_sanity("decoders", num_losses)
    return result


def _decoder_sanity(stage: str, losses: list[float], window: int = 5) -> None:
    if len(losses) < 2 * window:
        return
    head = float(np.mean(losses[:window]))
    tail = float(np.mean(losses[-window:]))
    if tail >= head:
        raise TrainingDiagnosticError(f"stage {stage}: loss did not decrease ({head:.4g} -> {tail:.4g})")


def decode_row(
    v: torch.Tensor,
    columns: list[ColumnSchema],
    e_m: torch.Tensor,
    embedder: RowEmbedder,
    cat_decoder: CategoricalDecoder,
    num_decoder: NumericalDecoder,
    anchors: CategoryAnchorSet,
    transformers: dict[str, QuantileTransformer],
) -> tuple:
    """Decode any requested column subset independently from one latent."""
    out = []
    for column in columns:
        e_c = embedder.name_vector(column)
        if column.kind == CATEGORICAL:
            if column.name not in anchors:
                raise ValueError(f"no anchors for column {column.name!r}")
            out.append(decode_categorical(
                e_m, e_c, v, anchors.categories(column.name),
                anchors.vectors(column.name), cat_decoder,
            ))
        else:
            if column.name not in transformers:
                raise ValueError(f"no transformer for column {column.name!r}")
            out.append(decode_numerical(e_m, e_c, v, transformers[column.name], num_decoder))
    return tuple(out)


def decode_rows(
    latents: torch.Tensor,
    columns: list[ColumnSchema],
    embedder: RowEmbedder,
    cat_decoder: CategoricalDecoder,
    num_decoder: NumericalDecoder,
    anchors: CategoryAnchorSet,
    transformers: dict[str, QuantileTransformer],
) -> list[tuple]:
    """Column-vectorized decoding of many latents into rows."""
    n = latents.shape[0]
    if n == 0:
        return []
    e_m = embedder.metadata_vector().unsqueeze(0).expand(n, -1)
    decoded_columns = []
    for column in columns:
        e_c = embedder.name_vector(column).unsqueeze(0).expand(n, -1)
        if column.kind == CATEGORICAL:
            labels, _ = decode_categorical_batch(
                e_m, e_c, latents, anchors.categories(column.name),
                anchors.vectors(column.name), cat_decoder,
            )
            decoded_columns.append(labels)
        else:
            values = decode_numerical_batch(
                e_m, e_c, latents, transformers[column.name], num_decoder
            )
            decoded_columns.append([float(x) for x in values])
    return [tuple(col[r] for col in decoded_columns) for r in range(n)]


class PlainRowDecoder(nn.Module):
    """Data-specific whole-row decoder used as an ablation reference.

    A plain MLP maps a latent to every column at once: one quantile estimate
    per numerical column and one logit block per categorical column. Decoding
    clamps quantiles and takes the argmax category, so outputs remain
    schema-valid even though nothing transfers across tables.
    """

    def __init__(self, columns: tuple[ColumnSchema, ...], latent_dim: int = 128,
                 hidden: int = 256):
        super().__init__()
        self.columns = columns
        self.trunk = nn.Sequential(
            nn.Linear(latent_dim, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
        )
        heads = []
        for col in columns:
            heads.append(nn.Linear(hidden, len(col.categories) if col.kind == CATEGORICAL else 1))
        self.heads = nn.ModuleList(heads)

    def forward(self, v: torch.Tensor) -> list[torch.Tensor]:
        h = self.trunk(v)
        return [head(h) for head in self.heads]


def train_plain_decoder(
    table: TableDataset,
    embedder: RowEmbedder,
    aggregator: AggregatorNet,
    epochs: int,
    lr: float = 5e-4,
    seed: int = 0,
) -> PlainRowDecoder:
    """Fit the ablation row decoder on one table's full-row latents."""
    torch.manual_seed(seed)
    decoder = PlainRowDecoder(table.columns)
    latents = aggregator.aggregate_batch(embedder.embed_table())
    targets = []
    for c, col in enumerate(table.columns):
        if col.kind == CATEGORICAL:
            lookup = {cat: i for i, cat in enumerate(col.categories)}
            targets.append(torch.as_tensor([lookup[row[c]] for row in table.rows]))
        else:
            q = embedder.transformers[col.name].transform(
                np.asarray(table.column_values(c), dtype=np.float64))
            targets.append(torch.as_tensor(q, dtype=torch.float32))
    opt = torch.optim.Adam(decoder.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(epochs, 1))
    decoder.train()
    for _ in range(epochs):
        outputs = decoder(latents)
        loss = torch.zeros(())
        for col, out, target in zip(table.columns, outputs, targets):
            if col.kind == CATEGORICAL:
                loss = loss + torch.nn.functional.cross_entropy(out, target)
            else:
                loss = loss + torch.nn.functional.mse_loss(out.squeeze(-1), target)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
    decoder.eval()
    return decoder


@torch.no_grad()
def decode_rows_plain(
    latents: torch.Tensor,
    decoder: PlainRowDecoder,
    transformers: dict[str, QuantileTransformer],
) -> list[tuple]:
    n = latents.shape[0]
    if n == 0:
        return []
    outputs = decoder(latents)
    decoded_columns = []
    for col, out in zip(decoder.columns, outputs):
        if col.kind == CATEGORICAL:
            idx = torch.argmax(out, dim=1).tolist()
            decoded_columns.append([col.categories[i] for i in idx])
        else:
            q = np.clip(out.squeeze(-1).numpy().astype(np.float64), 0.0, 1.0)
            decoded_columns.append([float(x) for x in transformers[col.name].inverse(q)])
    return [tuple(col[r] for col in decoded_columns) for r in range(n)]
