"""polytab: cross-table synthetic data from a shared latent space.

Heterogeneous tables are embedded row-by-row into interleaved text/number
sequences, compressed to fixed-width latents by a contrastively trained
attention aggregator, modeled with conditional latent diffusion, and decoded
back to typed cell values. One pre-trained checkpoint serves fine-tuned,
conditional, and column-augmented generation for any table it has seen.
"""

from .data import (
    CATEGORICAL,
    NUMERICAL,
    ColumnSchema,
    DataError,
    SplitSpec,
    TableDataset,
    TrainingBatch,
    load_csv,
    load_schema_descriptor,
    make_pretrain_batches,
    split_dataset,
    split_features,
)
from .aggregator import AggregatorLossConfig, AggregatorNet, contrastive_loss, magnitude_loss
from .decoders import (
    CategoricalDecoder,
    CategoryAnchorSet,
    NumericalDecoder,
    build_anchors,
    decode_categorical,
    decode_numerical,
    decode_row,
)
from .diffusion import (
    EpsilonNet,
    LatentStats,
    NoiseSchedule,
    build_condition,
    build_schedule,
    forward_sample,
    posterior_mean,
    sample,
    train_diffusion,
)
from .embedding import EmbeddingSequence, RowEmbedder, make_masked_views
from .numeric import NumberAutoencoder, QuantileTransformer, fit_quantile, pretrain_number_autoencoder
from .pipeline import (
    CheckpointBundle,
    GenerationRequest,
    TrainingConfig,
    finetune,
    generate,
    pretrain,
    run_ablation,
)
from .text import HashedNGramEncoder, TextEncoder

__version__ = "0.1.0"

__all__ = [
    "AggregatorLossConfig",
    "AggregatorNet",
    "CATEGORICAL",
    "CategoricalDecoder",
    "CategoryAnchorSet",
    "CheckpointBundle",
    "ColumnSchema",
    "DataError",
    "EmbeddingSequence",
    "EpsilonNet",
    "GenerationRequest",
    "HashedNGramEncoder",
    "LatentStats",
    "NoiseSchedule",
    "NumberAutoencoder",
    "NumericalDecoder",
    "NUMERICAL",
    "QuantileTransformer",
    "RowEmbedder",
    "SplitSpec",
    "TableDataset",
    "TextEncoder",
    "TrainingBatch",
    "TrainingConfig",
    "build_anchors",
    "build_condition",
    "build_schedule",
    "contrastive_loss",
    "decode_categorical",
    "decode_numerical",
    "decode_row",
    "finetune",
    "fit_quantile",
    "forward_sample",
    "generate",
    "load_csv",
    "load_schema_descriptor",
    "magnitude_loss",
    "make_masked_views",
    "make_pretrain_batches",
    "posterior_mean",
    "pretrain",
    "pretrain_number_autoencoder",
    "run_ablation",
    "sample",
    "split_dataset",
    "split_features",
    "train_diffusion",
]
