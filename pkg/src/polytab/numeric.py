"""Numeric value handling: empirical quantile mapping and the shared number autoencoder."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

NUMBER_CODE_DIM = 768
NUMBER_HIDDEN_DIM = 1024
NUMBER_CODE_BOUND = 10.0


class QuantileTransformer:
    """Monotone map of a numeric column onto [0, 1] via its empirical CDF.

    Reference values are the sorted fitted sample (subsampled to evenly spaced
    order statistics above ``max_references``). Transform and inverse linearly
    interpolate between references and clamp outside the fitted range, so the
    fitted minimum maps to exactly 0 and the maximum to exactly 1, and the
    round trip is exact on reference points.
    """

    def __init__(self, references: np.ndarray):
        references = np.asarray(references, dtype=np.float64)
        if references.ndim != 1 or references.size < 2:
            raise ValueError("need at least 2 reference values")
        if np.any(np.diff(references) < 0):
            raise ValueError("references must be sorted")
        self.references = references
        self.levels = np.linspace(0.0, 1.0, references.size)

    @classmethod
    def fit(cls, values, max_references: int = 1000) -> "QuantileTransformer":
        values = np.asarray(list(values), dtype=np.float64)
        if values.size < 2:
            raise ValueError("need at least 2 values to fit")
        if np.unique(values).size < 2:
            raise ValueError("constant column: quantile transform undefined")
        if values.size <= max_references:
            refs = np.sort(values)
        else:
            refs = np.quantile(values, np.linspace(0.0, 1.0, max_references))
        return cls(refs)

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.interp(x, self.references, self.levels)

    def inverse(self, u):
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        return np.interp(u, self.levels, self.references)

    @property
    def fitted_min(self) -> float:
        return float(self.references[0])

    @property
    def fitted_max(self) -> float:
        return float(self.references[-1])

    def to_dict(self) -> dict:
        return {"references": [float(v) for v in self.references]}

    @classmethod
    def from_dict(cls, payload: dict) -> "QuantileTransformer":
        return cls(np.asarray(payload["references"], dtype=np.float64))


def fit_quantile(values) -> QuantileTransformer:
    return QuantileTransformer.fit(values)


class NumberAutoencoder(nn.Module):
    """Scalar-in, scalar-out autoencoder whose bounded 768-wide code embeds numbers.

    Encoder: 1 -> 1024 (ReLU) -> 768 (Tanh * 10); decoder mirrors back to a
    scalar. Trained once on Uniform(0,1) draws and then frozen, so the same
    code space serves every table.
    """

    def __init__(self):
        super().__init__()
        self.enc_in = nn.Linear(1, NUMBER_HIDDEN_DIM)
        self.enc_out = nn.Linear(NUMBER_HIDDEN_DIM, NUMBER_CODE_DIM)
        self.dec_in = nn.Linear(NUMBER_CODE_DIM, NUMBER_HIDDEN_DIM)
        self.dec_out = nn.Linear(NUMBER_HIDDEN_DIM, 1)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.enc_in(x))
        return torch.tanh(self.enc_out(h)) * NUMBER_CODE_BOUND

    def decode(self, code: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.dec_in(code))
        return self.dec_out(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))

    @torch.no_grad()
    def encode_values(self, values: np.ndarray) -> torch.Tensor:
        """Encode a 1-D array of unit-interval values to (n, 768) codes."""
        was_training = self.training
        self.eval()
        x = torch.as_tensor(np.asarray(values, dtype=np.float32)).reshape(-1, 1)
        codes = self.encode(x)
        if was_training:
            self.train()
        return codes


class TrainingDiagnosticError(RuntimeError):
    """Raised when a training run fails its basic loss sanity check."""


def pretrain_number_autoencoder(
    epochs: int = 800,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 1024,
) -> tuple[NumberAutoencoder, list[float]]:
    """Train the shared number autoencoder on fresh Uniform(0,1) batches.

    One batch of ``batch_size`` uniform draws per epoch, MSE reconstruction
    loss, Adam with cosine-annealed learning rate. Raises
    TrainingDiagnosticError if the loss fails to decrease over the run.
    """
    torch.manual_seed(seed)
    model = NumberAutoencoder()
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(epochs, 1))
    gen = torch.Generator().manual_seed(seed)
    losses = []
    model.train()
    for _ in range(epochs):
        x = torch.rand(batch_size, 1, generator=gen)
        loss = torch.nn.functional.mse_loss(model(x), x)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        losses.append(float(loss.item()))
    model.eval()
    if epochs >= 20:
        head = float(np.mean(losses[:10]))
        tail = float(np.mean(losses[-10:]))
        if tail >= head:
            raise TrainingDiagnosticError(
                f"number autoencoder loss did not decrease ({head:.4g} -> {tail:.4g})"
            )
    return model, losses
