"""Shared fixtures: the toy corpus and session-scoped trained artifacts.

The expensive trainings (number autoencoder, full pre-training on the toy
corpus, feature-conditioned diffusion, fine-tuning) run once per session and
are shared by the module tests and the acceptance suite. Wall-clock training
times are recorded because some acceptance checks carry runtime budgets.
"""

import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from toydata import make_toy_corpus, make_toy_holdout  # noqa: E402


@dataclass
class TimedArtifact:
    value: object
    seconds: float


def _desk_config(**overrides):
    from polytab.pipeline import TrainingConfig

    base = dict(
        seed=0,
        ae_epochs=500,
        aggregator_epochs=250,
        decoder_epochs=250,
        diffusion_epochs=2500,
        finetune_epochs=400,
        timesteps=300,
        diffusion_hidden=256,
        aggregator_batch_size=64,
        diffusion_batch_size=128,
    )
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture(scope="session")
def toy_corpus():
    return make_toy_corpus(seed=0)


@pytest.fixture(scope="session")
def toy_holdouts(toy_corpus):
    vitals, loans = toy_corpus
    return make_toy_holdout(vitals), make_toy_holdout(loans)


@pytest.fixture(scope="session")
def trained_autoencoder():
    from polytab.numeric import pretrain_number_autoencoder
    from polytab.pipeline import derive_seed

    start = time.monotonic()
    model, losses = pretrain_number_autoencoder(epochs=500, seed=derive_seed(0, "autoencoder"))
    return TimedArtifact(value=(model, losses), seconds=time.monotonic() - start)


@pytest.fixture(scope="session")
def toy_bundle(toy_corpus, trained_autoencoder):
    """Full metadata-conditioned pre-training on the toy corpus, timed."""
    from polytab.pipeline import pretrain

    autoencoder, _ = trained_autoencoder.value
    start = time.monotonic()
    bundle = pretrain(list(toy_corpus), _desk_config(), autoencoder=autoencoder)
    seconds = time.monotonic() - start + trained_autoencoder.seconds
    return TimedArtifact(value=bundle, seconds=seconds)


@pytest.fixture(scope="session")
def feature_bundle(toy_corpus, toy_bundle):
    """Feature-conditioned diffusion over the same frozen components."""
    from polytab.pipeline import pretrain

    bundle = toy_bundle.value
    config = _desk_config(condition_mode="metadata+features", timesteps=200)
    start = time.monotonic()
    fbundle = pretrain(
        list(toy_corpus), config,
        text_encoder=bundle.text_encoder,
        autoencoder=bundle.autoencoder,
        aggregator=bundle.aggregator,
        decoders=(bundle.cat_decoder, bundle.num_decoder),
    )
    return TimedArtifact(value=fbundle, seconds=time.monotonic() - start)


@pytest.fixture(scope="session")
def finetune_split(toy_corpus):
    """Feature subset A of the vitals table plus its matching holdout."""
    from polytab.data import split_features

    vitals, _ = toy_corpus
    subset_a, _ = split_features(vitals, seed=3)
    holdout = make_toy_holdout(vitals)
    holdout_a = holdout.select_columns(
        [holdout.column_index(name) for name in subset_a.column_names])
    return subset_a, holdout_a


@pytest.fixture(scope="session")
def finetuned_bundle(toy_bundle, finetune_split):
    from polytab.pipeline import finetune

    subset_a, _ = finetune_split
    start = time.monotonic()
    tuned = finetune(toy_bundle.value, subset_a, epochs=400)
    return TimedArtifact(value=tuned, seconds=time.monotonic() - start)


@pytest.fixture(scope="session")
def saved_bundle_dir(toy_bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("checkpoint") / "toy"
    toy_bundle.value.save(str(path))
    return path


def criterion(number: int, description: str, passed: bool, detail: str = "") -> None:
    """One pass/fail line per acceptance criterion, printed before asserting."""
    status = "PASS" if passed else "FAIL"
    line = f"[criterion {number:02d}] {status}  {description}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert passed, line
