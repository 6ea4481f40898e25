"""End-to-end orchestration: pre-train, fine-tune, generate, and checkpointing.

A checkpoint bundle carries every trained component plus the fitted per-table
transformers, category anchors, latent standardization statistics, and the
config snapshot, in one inspectable directory. Fine-tuning touches only the
diffusion net; the aggregator and decoders stay frozen so the latent space
keeps its meaning across tables.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
import torch

from .aggregator import AggregatorLossConfig, AggregatorNet, train_aggregator
from .data import CATEGORICAL, ColumnSchema, DataError, TableDataset
from .decoders import (
    CategoricalDecoder,
    CategoryAnchorSet,
    NumericalDecoder,
    build_anchors,
    decode_rows,
    train_decoders,
)
from .diffusion import (
    METADATA_FEATURES,
    METADATA_ONLY,
    EpsilonNet,
    LatentStats,
    NoiseSchedule,
    build_schedule,
    sample,
    train_diffusion,
)
from .embedding import RowEmbedder, mask_value_slots
from .numeric import NumberAutoencoder, QuantileTransformer, pretrain_number_autoencoder
from .text import TextEncoder, encoder_from_spec, HashedNGramEncoder

BUNDLE_VERSION = "1"

FINETUNED = "finetuned"
COND_GEN = "cond_gen"
COND_AUG = "cond_aug"
SCHEMES = (FINETUNED, COND_GEN, COND_AUG)


def derive_seed(root_seed: int, stage: str) -> int:
    """Expand the single root seed into a stable per-stage seed."""
    digest = hashlib.blake2b(f"{root_seed}:{stage}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


@dataclass
class TrainingConfig:
    """Hyperparameters for every training stage, with desk-scale overridable epochs."""

    seed: int = 0
    text_encoder_kind: str = "hashed-ngram"
    text_model_name: str = ""
    ae_epochs: int = 800
    aggregator_epochs: int = 1200
    decoder_epochs: int = 1200
    diffusion_epochs: int = 2000
    finetune_epochs: int = 10000
    aggregator_batch_size: int = 128
    diffusion_batch_size: int = 512
    learning_rate: float = 5e-4
    temperature: float = 0.1
    magnitude_weight: float = 2.0
    corrupted_views: int = 1
    mask_fraction: float = 0.5
    drop_rate: float = 0.15
    timesteps: int = 2500
    schedule_kind: str = "linear"
    beta_min: float = 1e-4
    beta_max: float = 0.02
    uncon_rate: float = 0.1
    guidance_scale: float = 1.0
    condition_mode: str = METADATA_ONLY
    target_visible_in_minus: bool = False
    categorical_temperature: float = 1.0
    literal_denominator: bool = True
    diffusion_hidden: int = 256

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in known})


@dataclass
class TableEntry:
    """Everything needed to embed and decode rows of one known table."""

    metadata: str
    columns: tuple[ColumnSchema, ...]
    transformers: dict[str, QuantileTransformer]
    anchors: CategoryAnchorSet

    def skeleton(self) -> TableDataset:
        return TableDataset(self.metadata, self.columns, ())


@dataclass
class FinetuneEntry:
    metadata: str
    columns: tuple[ColumnSchema, ...]
    transformers: dict[str, QuantileTransformer]
    latent_stats: LatentStats
    diffusion_net: EpsilonNet
    anchors: CategoryAnchorSet


@dataclass(frozen=True)
class GenerationRequest:
    scheme: str
    metadata: str
    n_rows: int
    columns: tuple[str, ...]
    seed: int = 0
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise DataError(f"unknown generation scheme {self.scheme!r}")
        if self.n_rows < 0:
            raise DataError("n_rows must be nonnegative")


@dataclass
class CheckpointBundle:
    config: dict
    text_encoder: TextEncoder
    autoencoder: NumberAutoencoder
    aggregator: AggregatorNet
    cat_decoder: CategoricalDecoder
    num_decoder: NumericalDecoder
    diffusion_net: EpsilonNet
    schedule: NoiseSchedule
    condition_mode: str
    tables: dict[str, TableEntry]
    latent_stats: LatentStats
    finetune: FinetuneEntry | None = None
    loss_curves: dict[str, list[dict]] = field(default_factory=dict)
    version: str = BUNDLE_VERSION

    # -- persistence -------------------------------------------------------

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        _atomic_torch_save(self.autoencoder.state_dict(), os.path.join(directory, "autoencoder.pt"))
        _atomic_torch_save(self.aggregator.state_dict(), os.path.join(directory, "aggregator.pt"))
        _atomic_torch_save(self.cat_decoder.state_dict(),
                           os.path.join(directory, "categorical_decoder.pt"))
        _atomic_torch_save(self.num_decoder.state_dict(),
                           os.path.join(directory, "numerical_decoder.pt"))
        _atomic_torch_save(self.diffusion_net.state_dict(), os.path.join(directory, "diffusion.pt"))
        anchor_payload = {meta: entry.anchors.state_dict() for meta, entry in self.tables.items()}
        _atomic_torch_save(anchor_payload, os.path.join(directory, "anchors.pt"))
        if self.finetune is not None:
            _atomic_torch_save(self.finetune.diffusion_net.state_dict(),
                               os.path.join(directory, "finetune_diffusion.pt"))
            _atomic_torch_save(self.finetune.anchors.state_dict(),
                               os.path.join(directory, "finetune_anchors.pt"))
        losses_dir = os.path.join(directory, "losses")
        os.makedirs(losses_dir, exist_ok=True)
        for stage, curve in self.loss_curves.items():
            _write_loss_csv(os.path.join(losses_dir, f"{stage}.csv"), curve)
        manifest = {
            "version": self.version,
            "config": self.config,
            "condition_mode": self.condition_mode,
            "text_encoder": {**self.text_encoder.spec(),
                             "cache_digest": self.text_encoder.cache_digest()},
            "schedule": self.schedule.to_dict(),
            "latent_stats": self.latent_stats.to_dict(),
            "nets": {
                "latent_dim": self.aggregator.latent_dim,
                "input_dim": self.aggregator.input_dim,
                "cond_dim": self.diffusion_net.cond_dim,
                "diffusion_hidden": self.config.get("diffusion_hidden", 256),
            },
            "tables": [_table_entry_manifest(entry) for entry in self.tables.values()],
            "finetune": None,
        }
        if self.finetune is not None:
            manifest["finetune"] = {
                "metadata": self.finetune.metadata,
                "columns": [_column_manifest(c) for c in self.finetune.columns],
                "transformers": {k: t.to_dict() for k, t in self.finetune.transformers.items()},
                "latent_stats": self.finetune.latent_stats.to_dict(),
            }
        _atomic_write_text(json.dumps(manifest, indent=2), os.path.join(directory, "manifest.json"))

    @classmethod
    def load(cls, directory: str) -> "CheckpointBundle":
        with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        config = manifest["config"]
        encoder_spec = dict(manifest["text_encoder"])
        encoder_spec.pop("cache_digest", None)
        text_encoder = encoder_from_spec(encoder_spec)
        autoencoder = NumberAutoencoder()
        autoencoder.load_state_dict(torch.load(os.path.join(directory, "autoencoder.pt"),
                                               weights_only=True))
        autoencoder.eval()
        nets = manifest["nets"]
        aggregator = AggregatorNet(input_dim=nets["input_dim"], latent_dim=nets["latent_dim"])
        aggregator.load_state_dict(torch.load(os.path.join(directory, "aggregator.pt"),
                                              weights_only=True))
        aggregator.eval()
        cat_decoder = CategoricalDecoder(text_dim=nets["input_dim"])
        cat_decoder.load_state_dict(torch.load(
            os.path.join(directory, "categorical_decoder.pt"), weights_only=True))
        cat_decoder.eval()
        num_decoder = NumericalDecoder(text_dim=nets["input_dim"])
        num_decoder.load_state_dict(torch.load(
            os.path.join(directory, "numerical_decoder.pt"), weights_only=True))
        num_decoder.eval()
        diffusion_net = EpsilonNet(latent_dim=nets["latent_dim"], cond_dim=nets["cond_dim"],
                                   hidden=nets["diffusion_hidden"])
        diffusion_net.load_state_dict(torch.load(os.path.join(directory, "diffusion.pt"),
                                                 weights_only=True))
        diffusion_net.eval()
        schedule = NoiseSchedule.from_dict(manifest["schedule"])
        anchor_payload = torch.load(os.path.join(directory, "anchors.pt"), weights_only=True)
        tables = {}
        for entry in manifest["tables"]:
            meta = entry["metadata"]
            columns = tuple(_column_from_manifest(c) for c in entry["columns"])
            transformers = {k: QuantileTransformer.from_dict(t)
                            for k, t in entry["transformers"].items()}
            anchors = CategoryAnchorSet.from_state_dict(anchor_payload.get(meta, {}))
            tables[meta] = TableEntry(meta, columns, transformers, anchors)
        finetune = None
        if manifest.get("finetune"):
            f = manifest["finetune"]
            ft_net = EpsilonNet(latent_dim=nets["latent_dim"], cond_dim=nets["cond_dim"],
                                hidden=nets["diffusion_hidden"])
            ft_net.load_state_dict(torch.load(os.path.join(directory, "finetune_diffusion.pt"),
                                              weights_only=True))
            ft_net.eval()
            ft_anchors = CategoryAnchorSet.from_state_dict(
                torch.load(os.path.join(directory, "finetune_anchors.pt"), weights_only=True))
            finetune = FinetuneEntry(
                metadata=f["metadata"],
                columns=tuple(_column_from_manifest(c) for c in f["columns"]),
                transformers={k: QuantileTransformer.from_dict(t)
                              for k, t in f["transformers"].items()},
                latent_stats=LatentStats.from_dict(f["latent_stats"]),
                diffusion_net=ft_net,
                anchors=ft_anchors,
            )
        return cls(
            config=config,
            text_encoder=text_encoder,
            autoencoder=autoencoder,
            aggregator=aggregator,
            cat_decoder=cat_decoder,
            num_decoder=num_decoder,
            diffusion_net=diffusion_net,
            schedule=schedule,
            condition_mode=manifest["condition_mode"],
            tables=tables,
            latent_stats=LatentStats.from_dict(manifest["latent_stats"]),
            finetune=finetune,
            version=manifest["version"],
        )

    def embedder_for(self, metadata: str) -> RowEmbedder:
        entry = self.tables.get(metadata)
        if entry is None:
            if self.finetune is not None and self.finetune.metadata == metadata:
                skeleton = TableDataset(metadata, self.finetune.columns, ())
                return RowEmbedder(skeleton, self.text_encoder, self.autoencoder,
                                   self.finetune.transformers)
            raise DataError(f"metadata {metadata!r} not in the checkpoint's table registry")
        return RowEmbedder(entry.skeleton(), self.text_encoder, self.autoencoder,
                           entry.transformers)


def _column_manifest(col: ColumnSchema) -> dict:
    return {"name": col.name, "kind": col.kind,
            "categories": list(col.categories), "target": col.target}


def _column_from_manifest(payload: dict) -> ColumnSchema:
    return ColumnSchema(payload["name"], payload["kind"],
                        tuple(payload["categories"]), payload["target"])


def _table_entry_manifest(entry: TableEntry) -> dict:
    return {
        "metadata": entry.metadata,
        "columns": [_column_manifest(c) for c in entry.columns],
        "transformers": {k: t.to_dict() for k, t in entry.transformers.items()},
    }


def _atomic_torch_save(payload, path: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _atomic_write_text(text: str, path: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_loss_csv(path: str, curve: list[dict]) -> None:
    if not curve:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curve[0].keys()))
        writer.writeheader()
        writer.writerows(curve)


def fit_table_transformers(table: TableDataset) -> dict[str, QuantileTransformer]:
    out = {}
    for c in table.numerical_indices:
        out[table.columns[c].name] = QuantileTransformer.fit(table.column_values(c))
    return out


def feature_mode_conditions(
    table: TableDataset,
    embedder: RowEmbedder,
    aggregator: AggregatorNet,
    target_visible_in_minus: bool = False,
) -> torch.Tensor:
    """Per-row conditions for feature-conditioned diffusion.

    Concatenates the table context embedding with two row latents: one from
    the sequence whose target value slot is masked, and one from the sequence
    whose non-target value slots are masked. When the target must stay hidden
    (the inference case) its slot is masked in the second sequence as well.
    """
    t = table.target_index
    if t is None:
        raise DataError("feature-conditioned mode needs a declared target column")
    full = embedder.embed_table()
    plus = mask_value_slots(full, [t])
    minus_cols = [c for c in range(table.n_columns) if c != t]
    if not target_visible_in_minus:
        minus_cols = minus_cols + [t]
    minus = mask_value_slots(full, minus_cols)
    v_plus = aggregator.aggregate_batch(plus)
    v_minus = aggregator.aggregate_batch(minus)
    e_m = embedder.metadata_vector().unsqueeze(0).expand(full.shape[0], -1)
    return torch.cat([e_m, v_plus, v_minus], dim=1)


def _condition_width(mode: str, text_dim: int, latent_dim: int) -> int:
    if mode == METADATA_ONLY:
        return text_dim
    return text_dim + 2 * latent_dim


def pretrain(
    tables: Sequence[TableDataset],
    config: TrainingConfig,
    *,
    text_encoder: TextEncoder | None = None,
    autoencoder: NumberAutoencoder | None = None,
    aggregator: AggregatorNet | None = None,
    decoders: tuple[CategoricalDecoder, NumericalDecoder] | None = None,
) -> CheckpointBundle:
    """Run the pre-training stages in order and assemble a checkpoint bundle.

    Stage order: number autoencoder (trained only if not supplied), the
    aggregator, both decoders against the frozen aggregator, category
    anchors, then the conditional diffusion model over latents of full
    unmasked rows. Any stage whose loss fails to decrease aborts with the
    stage name.
    """
    if not tables:
        raise DataError("need at least one table to pre-train")
    metas = [t.metadata for t in tables]
    if len(set(metas)) != len(metas):
        raise DataError("tables must have distinct metadata text")
    loss_curves: dict[str, list[dict]] = {}

    if text_encoder is None:
        if config.text_encoder_kind == "hashed-ngram":
            text_encoder = HashedNGramEncoder(seed=derive_seed(config.seed, "text-encoder"))
        else:
            text_encoder = encoder_from_spec(
                {"kind": config.text_encoder_kind, "dim": 768,
                 "model_name": config.text_model_name})

    if autoencoder is None:
        autoencoder, ae_losses = pretrain_number_autoencoder(
            epochs=config.ae_epochs, seed=derive_seed(config.seed, "autoencoder"))
        loss_curves["autoencoder"] = [
            {"epoch": i, "loss": v} for i, v in enumerate(ae_losses)]
    autoencoder.eval()

    transformers = [fit_table_transformers(t) for t in tables]
    embedders = [
        RowEmbedder(t, text_encoder, autoencoder, tr) for t, tr in zip(tables, transformers)
    ]

    if aggregator is None:
        agg_result = train_aggregator(
            list(tables), embedders,
            AggregatorLossConfig(
                temperature=config.temperature,
                magnitude_weight=config.magnitude_weight,
                corrupted_views=config.corrupted_views,
                mask_fraction=config.mask_fraction,
            ),
            epochs=config.aggregator_epochs,
            batch_size=config.aggregator_batch_size,
            lr=config.learning_rate,
            drop_rate=config.drop_rate,
            seed=derive_seed(config.seed, "aggregator"),
        )
        aggregator = agg_result.net
        loss_curves["aggregator"] = agg_result.loss_curve
    aggregator.eval()

    if decoders is None:
        dec_result = train_decoders(
            list(tables), embedders, aggregator,
            epochs=config.decoder_epochs,
            batch_size=config.aggregator_batch_size,
            lr=config.learning_rate,
            drop_rate=config.drop_rate,
            seed=derive_seed(config.seed, "decoders"),
            temperature=config.categorical_temperature,
            literal_denominator=config.literal_denominator,
        )
        cat_decoder, num_decoder = dec_result.categorical, dec_result.numerical
        loss_curves["decoders"] = dec_result.loss_curve
    else:
        cat_decoder, num_decoder = decoders
    cat_decoder.eval()
    num_decoder.eval()

    entries = {}
    for table, embedder, trans in zip(tables, embedders, transformers):
        anchors = build_anchors(cat_decoder, embedder, aggregator)
        entries[table.metadata] = TableEntry(table.metadata, table.columns, trans, anchors)

    latent_list, condition_list = [], []
    for table, embedder in zip(tables, embedders):
        latents = aggregator.aggregate_batch(embedder.embed_table())
        latent_list.append(latents)
        if config.condition_mode == METADATA_ONLY:
            e_m = embedder.metadata_vector().unsqueeze(0).expand(latents.shape[0], -1)
            condition_list.append(e_m)
        else:
            condition_list.append(feature_mode_conditions(
                table, embedder, aggregator,
                target_visible_in_minus=config.target_visible_in_minus))
    latents = torch.cat(latent_list)
    conditions = torch.cat(condition_list)
    stats = LatentStats.fit(latents)

    schedule = build_schedule(config.timesteps, config.schedule_kind,
                              config.beta_min, config.beta_max)
    torch.manual_seed(derive_seed(config.seed, "diffusion-init"))
    net = EpsilonNet(
        latent_dim=aggregator.latent_dim,
        cond_dim=_condition_width(config.condition_mode, text_encoder.dim,
                                  aggregator.latent_dim),
        hidden=config.diffusion_hidden,
    )
    diff_result = train_diffusion(
        stats.standardize(latents), conditions, schedule, net,
        epochs=config.diffusion_epochs,
        batch_size=config.diffusion_batch_size,
        lr=config.learning_rate,
        uncon_rate=config.uncon_rate,
        seed=derive_seed(config.seed, "diffusion"),
    )
    loss_curves["diffusion"] = diff_result.loss_curve

    return CheckpointBundle(
        config=config.to_dict(),
        text_encoder=text_encoder,
        autoencoder=autoencoder,
        aggregator=aggregator,
        cat_decoder=cat_decoder,
        num_decoder=num_decoder,
        diffusion_net=net,
        schedule=schedule,
        condition_mode=config.condition_mode,
        tables=entries,
        latent_stats=stats,
        loss_curves=loss_curves,
    )


def finetune(
    bundle: CheckpointBundle,
    table: TableDataset,
    epochs: int | None = None,
    seed: int | None = None,
    reset_diffusion: bool = False,
) -> CheckpointBundle:
    """Continue diffusion training on one table; everything else stays frozen.

    Quantile transformers and latent standardization statistics are refit on
    the fine-tune rows and recorded alongside the tuned net. With
    ``reset_diffusion`` the net restarts from fresh weights instead of the
    pre-trained ones (the no-pretraining ablation arm).
    """
    config = TrainingConfig.from_dict(bundle.config)
    if epochs is None:
        epochs = config.finetune_epochs
    if seed is None:
        seed = derive_seed(config.seed, "finetune")
    transformers = fit_table_transformers(table)
    embedder = RowEmbedder(table, bundle.text_encoder, bundle.autoencoder, transformers)
    latents = bundle.aggregator.aggregate_batch(embedder.embed_table())
    if bundle.condition_mode == METADATA_ONLY:
        conditions = embedder.metadata_vector().unsqueeze(0).expand(latents.shape[0], -1)
    else:
        conditions = feature_mode_conditions(
            table, embedder, bundle.aggregator,
            target_visible_in_minus=config.target_visible_in_minus)
    stats = LatentStats.fit(latents)
    if reset_diffusion:
        torch.manual_seed(derive_seed(seed, "finetune-reset"))
        net = EpsilonNet(latent_dim=bundle.aggregator.latent_dim,
                         cond_dim=bundle.diffusion_net.cond_dim,
                         hidden=config.diffusion_hidden)
    else:
        net = copy.deepcopy(bundle.diffusion_net)
    result = train_diffusion(
        stats.standardize(latents), conditions, bundle.schedule, net,
        epochs=epochs,
        batch_size=config.diffusion_batch_size,
        lr=config.learning_rate,
        uncon_rate=config.uncon_rate,
        seed=seed,
    )
    if table.metadata in bundle.tables:
        anchors = bundle.tables[table.metadata].anchors
    else:
        anchors = build_anchors(bundle.cat_decoder, embedder, bundle.aggregator)
    entry = FinetuneEntry(
        metadata=table.metadata,
        columns=table.columns,
        transformers=transformers,
        latent_stats=stats,
        diffusion_net=net,
        anchors=anchors,
    )
    curves = dict(bundle.loss_curves)
    curves["finetune_diffusion"] = result.loss_curve
    return CheckpointBundle(
        config=bundle.config,
        text_encoder=bundle.text_encoder,
        autoencoder=bundle.autoencoder,
        aggregator=bundle.aggregator,
        cat_decoder=bundle.cat_decoder,
        num_decoder=bundle.num_decoder,
        diffusion_net=bundle.diffusion_net,
        schedule=bundle.schedule,
        condition_mode=bundle.condition_mode,
        tables=bundle.tables,
        latent_stats=bundle.latent_stats,
        finetune=entry,
        loss_curves=curves,
        version=bundle.version,
    )


def _resolve_columns(
    requested: Sequence[str],
    source_columns: Sequence[ColumnSchema],
    anchors: CategoryAnchorSet,
) -> tuple[ColumnSchema, ...]:
    by_name = {c.name: c for c in source_columns}
    out = []
    for name in requested:
        if name not in by_name:
            raise DataError(f"column {name!r} unknown for this table")
        col = by_name[name]
        if col.kind == CATEGORICAL and col.name in anchors:
            # decoded values come from the anchor set, so the output schema
            # must carry the anchor categories
            col = ColumnSchema(col.name, col.kind, anchors.categories(col.name), col.target)
        out.append(col)
    return tuple(out)


def generate(bundle: CheckpointBundle, request: GenerationRequest) -> TableDataset:
    """Generate a synthetic table under one of the three schemes.

    ``finetuned`` samples with the fine-tuned net and statistics; ``cond_gen``
    uses the pre-trained net conditioned on the requested table metadata with
    no fine-tuning; ``cond_aug`` is ``cond_gen`` with any superset of columns
    decoded from the same latents.
    """
    if bundle.condition_mode != METADATA_ONLY:
        raise DataError(
            "table generation needs a metadata-conditioned bundle; feature-conditioned "
            "bundles serve per-row target prediction"
        )
    if request.scheme == FINETUNED:
        if bundle.finetune is None:
            raise DataError("the finetuned scheme needs a fine-tuned checkpoint")
        if request.metadata != bundle.finetune.metadata:
            raise DataError(
                f"fine-tuned for {bundle.finetune.metadata!r}, not {request.metadata!r}")
        net = bundle.finetune.diffusion_net
        stats = bundle.finetune.latent_stats
        transformers = bundle.finetune.transformers
        anchors = bundle.finetune.anchors
        source_columns = bundle.finetune.columns
    else:
        entry = bundle.tables.get(request.metadata)
        if entry is None:
            raise DataError(
                f"metadata {request.metadata!r} is not in the pre-training registry; "
                "conditional schemes need a known table context"
            )
        net = bundle.diffusion_net
        stats = bundle.latent_stats
        transformers = entry.transformers
        anchors = entry.anchors
        source_columns = entry.columns
        if request.scheme == COND_AUG and bundle.finetune is not None \
                and bundle.finetune.metadata == request.metadata:
            missing = [c.name for c in bundle.finetune.columns
                       if c.name not in request.columns]
            if missing:
                raise DataError(
                    f"cond_aug must request a superset of the fine-tune columns; missing {missing}")

    columns = _resolve_columns(request.columns, source_columns, anchors)
    e_m = torch.from_numpy(bundle.text_encoder.encode(request.metadata).copy())
    latents = sample(
        request.n_rows, e_m, bundle.schedule, net,
        seed=request.seed, guidance_scale=request.guidance_scale,
    )
    latents = stats.destandardize(latents)
    skeleton = TableDataset(request.metadata, columns, ())
    embedder = RowEmbedder(skeleton, bundle.text_encoder, bundle.autoencoder, transformers)
    rows = decode_rows(latents, list(columns), embedder,
                       bundle.cat_decoder, bundle.num_decoder, anchors, transformers)
    return TableDataset(request.metadata, columns, tuple(rows))


def predict_target_by_generation(
    bundle: CheckpointBundle, table: TableDataset, seed: int = 0,
) -> list:
    """Predict each row's target value by conditional generation.

    Builds a feature-mode condition per row with the target value hidden,
    samples one latent per row, and decodes only the target column.
    """
    if bundle.condition_mode != METADATA_FEATURES:
        raise DataError("target prediction needs a feature-conditioned bundle")
    t = table.target_index
    if t is None:
        raise DataError("table declares no target column")
    entry = bundle.tables.get(table.metadata)
    if entry is None:
        raise DataError(f"metadata {table.metadata!r} not in the pre-training registry")
    embedder = RowEmbedder(table, bundle.text_encoder, bundle.autoencoder, entry.transformers)
    conditions = feature_mode_conditions(table, embedder, bundle.aggregator,
                                         target_visible_in_minus=False)
    latents = sample(table.n_rows, conditions, bundle.schedule, bundle.diffusion_net, seed=seed)
    latents = bundle.latent_stats.destandardize(latents)
    target_col = table.columns[t]
    rows = decode_rows(latents, [entry_column(entry, target_col.name)], embedder,
                       bundle.cat_decoder, bundle.num_decoder, entry.anchors,
                       entry.transformers)
    return [row[0] for row in rows]


def entry_column(entry: TableEntry, name: str) -> ColumnSchema:
    for col in entry.columns:
        if col.name == name:
            return col
    raise DataError(f"column {name!r} unknown for table {entry.metadata!r}")


def run_ablation(
    bundle: CheckpointBundle,
    finetune_table: TableDataset,
    test_table: TableDataset,
    finetune_epochs: int = 200,
    decoder_epochs: int = 200,
    n_rows: int | None = None,
    seed: int = 0,
) -> dict:
    """Compare four fine-tuned-scheme configurations on one downstream table.

    Variants: the full model; diffusion trained from scratch on the fine-tune
    rows; type-specific decoders retrained on the fine-tune rows only; and a
    data-specific whole-row MLP decoder. Each variant generates a synthetic
    table and is scored for utility and diversity; nothing beyond successful,
    schema-valid execution is asserted here.
    """
    from .decoders import decode_rows_plain, train_plain_decoder
    from .evaluation import MixedDistanceEncoding, dcr, pct, tstr_utility

    if n_rows is None:
        n_rows = finetune_table.n_rows
    request = GenerationRequest(
        scheme=FINETUNED, metadata=finetune_table.metadata, n_rows=n_rows,
        columns=tuple(finetune_table.column_names), seed=derive_seed(seed, "ablation-sample"),
    )
    encoding = MixedDistanceEncoding.fit(finetune_table)

    def score(synth: TableDataset) -> dict:
        out = {"schema_valid": _schema_valid(synth, finetune_table)}
        if test_table.target_index is not None:
            utility = tstr_utility(synth, test_table, seed=seed)
            out["accuracy"] = utility["average"]["accuracy"]
            out["f1_micro"] = utility["average"]["f1_micro"]
        out["pct"] = pct(synth, finetune_table, test_table, encoding)
        out["dcr_median"] = dcr(synth, finetune_table, encoding)["median"]
        return out

    report: dict = {"variants": {}}

    tuned = finetune(bundle, finetune_table, epochs=finetune_epochs,
                     seed=derive_seed(seed, "ablation-full"))
    report["variants"]["pretrained_diffusion+type_decoders+pretrained_decoders"] = score(
        generate(tuned, request))

    scratch = finetune(bundle, finetune_table, epochs=finetune_epochs,
                       seed=derive_seed(seed, "ablation-scratch"), reset_diffusion=True)
    report["variants"]["scratch_diffusion+type_decoders+pretrained_decoders"] = score(
        generate(scratch, request))

    ft_transformers = fit_table_transformers(finetune_table)
    ft_embedder = RowEmbedder(finetune_table, bundle.text_encoder, bundle.autoencoder,
                              ft_transformers)
    local_dec = train_decoders(
        [finetune_table], [ft_embedder], bundle.aggregator,
        epochs=decoder_epochs, batch_size=min(128, max(finetune_table.n_rows, 2)),
        seed=derive_seed(seed, "ablation-decoders"),
    )
    local_anchors = build_anchors(local_dec.categorical, ft_embedder, bundle.aggregator)
    local_bundle = CheckpointBundle(
        config=bundle.config,
        text_encoder=bundle.text_encoder,
        autoencoder=bundle.autoencoder,
        aggregator=bundle.aggregator,
        cat_decoder=local_dec.categorical,
        num_decoder=local_dec.numerical,
        diffusion_net=bundle.diffusion_net,
        schedule=bundle.schedule,
        condition_mode=bundle.condition_mode,
        tables=bundle.tables,
        latent_stats=bundle.latent_stats,
    )
    local_tuned = finetune(local_bundle, finetune_table, epochs=finetune_epochs,
                           seed=derive_seed(seed, "ablation-local"))
    local_tuned.finetune.anchors = local_anchors
    report["variants"]["pretrained_diffusion+type_decoders+local_decoders"] = score(
        generate(local_tuned, request))

    plain = train_plain_decoder(finetune_table, ft_embedder, bundle.aggregator,
                                epochs=max(decoder_epochs * 2, 200),
                                seed=derive_seed(seed, "ablation-plain"))
    latents = sample(n_rows, torch.from_numpy(
        bundle.text_encoder.encode(finetune_table.metadata).copy()),
        tuned.schedule, tuned.finetune.diffusion_net,
        seed=derive_seed(seed, "ablation-sample"))
    latents = tuned.finetune.latent_stats.destandardize(latents)
    plain_rows = decode_rows_plain(latents, plain, ft_transformers)
    plain_columns = tuple(
        ColumnSchema(c.name, c.kind, c.categories, c.target) for c in finetune_table.columns)
    plain_synth = TableDataset(finetune_table.metadata, plain_columns, tuple(plain_rows))
    report["variants"]["pretrained_diffusion+plain_mlp_decoder"] = score(plain_synth)
    return report


def _schema_valid(synth: TableDataset, reference: TableDataset) -> bool:
    """Every categorical cell in the reference vocabulary, numerics in fitted range."""
    for i, col in enumerate(reference.columns):
        j = synth.column_index(col.name)
        values = synth.column_values(j)
        if col.kind == CATEGORICAL:
            if any(v not in col.categories for v in values):
                return False
        else:
            ref_values = [float(v) for v in reference.column_values(i)]
            lo, hi = min(ref_values), max(ref_values)
            if any(not (lo - 1e-9 <= v <= hi + 1e-9) for v in values):
                return False
    return True
