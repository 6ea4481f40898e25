"""Conditional Gaussian diffusion over the 128-d row latent space.

Forward corruption follows the closed-form marginal of the stepwise Gaussian
chain; the reverse process predicts the injected noise with a residual MLP
conditioned on a table-context vector and a sinusoidal timestep embedding,
then walks the chain back with fixed per-step variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .numeric import TrainingDiagnosticError

METADATA_ONLY = "metadata-only"
METADATA_FEATURES = "metadata+features"
CONDITION_MODES = (METADATA_ONLY, METADATA_FEATURES)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep noise parameters; all arrays are length T, indexed by t-1."""

    betas: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("schedule needs at least one timestep")
        if np.any(betas < 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in [0, 1)")
        if np.any(np.diff(betas) < -1e-12):
            raise ValueError("betas must be nondecreasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))
        object.__setattr__(self, "sigmas", np.sqrt(betas))

    @property
    def timesteps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[t - 1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "betas": [float(b) for b in self.betas]}

    @classmethod
    def from_dict(cls, payload: dict) -> "NoiseSchedule":
        return cls(np.asarray(payload["betas"], dtype=np.float64), kind=payload.get("kind", "linear"))


def build_schedule(
    timesteps: int = 2500, kind: str = "linear",
    beta_min: float = 1e-4, beta_max: float = 0.02,
) -> NoiseSchedule:
    """Build a noise schedule. ``linear`` interpolates betas; ``cosine`` derives
    them from a squared-cosine signal-retention curve."""
    if timesteps < 1:
        raise ValueError("need at least one timestep")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, timesteps)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(timesteps + 1, dtype=np.float64)
        f = np.cos((steps / timesteps + s) / (1 + s) * math.pi / 2) ** 2
        alpha_bar = f / f[0]
        betas = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 0.0, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas, kind=kind)


def forward_sample(
    v0: torch.Tensor, t: int, schedule: NoiseSchedule, noise: torch.Tensor
) -> torch.Tensor:
    """Corrupt clean latents to timestep t: sqrt(abar_t) v0 + sqrt(1 - abar_t) noise."""
    if not 1 <= t <= schedule.timesteps:
        raise ValueError(f"t={t} outside schedule of length {schedule.timesteps}")
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * v0 + math.sqrt(1.0 - abar) * noise


def _sinusoidal_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float().unsqueeze(1) * freqs.unsqueeze(0)
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


class _ResBlock(nn.Module):
    def __init__(self, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(hidden, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.t_proj = nn.Linear(hidden, hidden)
        self.y_proj = nn.Linear(hidden, hidden)

    def forward(self, x, t_emb, y_emb):
        residual = x + self.fc2(torch.nn.functional.silu(self.fc1(x)))
        return torch.nn.functional.silu(residual + self.t_proj(t_emb) + self.y_proj(y_emb))


class EpsilonNet(nn.Module):
    """Residual MLP predicting the injected noise from (noisy latent, timestep, condition)."""

    def __init__(self, latent_dim: int, cond_dim: int, hidden: int = 256,
                 depth: int = 4, time_dim: int = 128):
        super().__init__()
        self.latent_dim = latent_dim
        self.cond_dim = cond_dim
        self.time_dim = time_dim
        self.input_linear = nn.Linear(latent_dim, hidden)
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, hidden), nn.SiLU(), nn.Linear(hidden, hidden)
        )
        self.cond_linear = nn.Linear(cond_dim, hidden)
        self.blocks = nn.ModuleList(_ResBlock(hidden) for _ in range(depth))
        self.output_linear = nn.Linear(hidden, latent_dim)

    def forward(self, v_t: torch.Tensor, t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if y.ndim == 1:
            y = y.unsqueeze(0).expand(v_t.shape[0], -1)
        if t.ndim == 0:
            t = t.expand(v_t.shape[0])
        x = torch.nn.functional.silu(self.input_linear(v_t))
        t_emb = self.time_mlp(_sinusoidal_embedding(t, self.time_dim))
        y_emb = torch.nn.functional.silu(self.cond_linear(y))
        for block in self.blocks:
            x = block(x, t_emb, y_emb)
        return self.output_linear(x)


def posterior_mean_from_eps(
    v_t: torch.Tensor, t: int, schedule: NoiseSchedule, eps: torch.Tensor
) -> torch.Tensor:
    if t < 1:
        raise ValueError("t must be >= 1")
    beta = schedule.beta(t)
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    if abar >= 1.0:
        # no noise was ever added at this step
        return v_t / math.sqrt(alpha)
    return (v_t - beta / math.sqrt(1.0 - abar) * eps) / math.sqrt(alpha)


def posterior_mean(
    v_t: torch.Tensor, t: int, y: torch.Tensor, schedule: NoiseSchedule, net: EpsilonNet
) -> torch.Tensor:
    """Reverse-process mean at step t using the net's noise estimate."""
    single = v_t.ndim == 1
    batch = v_t.unsqueeze(0) if single else v_t
    with torch.no_grad():
        eps = net(batch, torch.full((batch.shape[0],), t, dtype=torch.long), y)
    mu = posterior_mean_from_eps(batch, t, schedule, eps)
    return mu[0] if single else mu


@dataclass
class LatentStats:
    """Per-dimension standardization of the latent set fed to diffusion."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, latents: torch.Tensor) -> "LatentStats":
        arr = latents.detach().cpu().numpy().astype(np.float64)
        std = arr.std(axis=0)
        std[std < 1e-8] = 1.0
        return cls(mean=arr.mean(axis=0), std=std)

    def standardize(self, latents: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.mean, dtype=latents.dtype)
        std = torch.as_tensor(self.std, dtype=latents.dtype)
        return (latents - mean) / std

    def destandardize(self, latents: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.mean, dtype=latents.dtype)
        std = torch.as_tensor(self.std, dtype=latents.dtype)
        return latents * std + mean

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, payload: dict) -> "LatentStats":
        return cls(np.asarray(payload["mean"], dtype=np.float64),
                   np.asarray(payload["std"], dtype=np.float64))


@dataclass
class DiffusionTrainingResult:
    net: EpsilonNet
    loss_curve: list[dict] = field(default_factory=list)


def train_diffusion(
    latents: torch.Tensor,
    conditions: torch.Tensor,
    schedule: NoiseSchedule,
    net: EpsilonNet,
    epochs: int,
    batch_size: int = 512,
    lr: float = 5e-4,
    uncon_rate: float = 0.1,
    seed: int = 0,
) -> DiffusionTrainingResult:
    """Train the noise predictor on standardized latents with paired conditions.

    Per sample a uniform timestep is drawn and fresh Gaussian noise injected;
    the loss is the squared error between true and predicted noise. With
    probability ``uncon_rate`` the condition is replaced by the zero null
    token so the net also learns an unconditional estimate.
    """
    if latents.shape[0] != conditions.shape[0]:
        raise ValueError("latents and conditions must align")
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(epochs, 1))
    n = latents.shape[0]
    sqrt_abar = torch.as_tensor(np.sqrt(schedule.alpha_bars), dtype=torch.float32)
    sqrt_one_minus = torch.as_tensor(np.sqrt(1.0 - schedule.alpha_bars), dtype=torch.float32)
    result = DiffusionTrainingResult(net=net)
    net.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss, steps = 0.0, 0
        for start in range(0, n, batch_size):
            idx = torch.as_tensor(order[start:start + batch_size], dtype=torch.long)
            v0 = latents[idx]
            y = conditions[idx].clone()
            if uncon_rate > 0:
                drop = torch.as_tensor(rng.random(idx.shape[0]) < uncon_rate)
                y[drop] = 0.0
            t = torch.as_tensor(rng.integers(1, schedule.timesteps + 1, size=idx.shape[0]),
                                dtype=torch.long)
            noise = torch.randn(v0.shape, generator=gen)
            v_t = sqrt_abar[t - 1].unsqueeze(1) * v0 + sqrt_one_minus[t - 1].unsqueeze(1) * noise
            pred = net(v_t, t, y)
            loss = torch.nn.functional.mse_loss(pred, noise)
            if not torch.isfinite(loss):
                raise TrainingDiagnosticError(
                    f"stage diffusion: non-finite loss at epoch {epoch}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.item())
            steps += 1
        sched.step()
        result.loss_curve.append({"epoch": epoch, "loss": epoch_loss / max(steps, 1)})
    net.eval()
    return result


def sample(
    n: int,
    y: torch.Tensor,
    schedule: NoiseSchedule,
    net: EpsilonNet,
    seed: int = 0,
    guidance_scale: float = 1.0,
) -> torch.Tensor:
    """Ancestral sampling from pure noise down to clean latents, seeded.

    ``y`` is either one condition vector shared by all samples or one row per
    sample. A guidance scale other than 1 blends conditional and null-token
    noise estimates.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    dim = net.latent_dim
    if n == 0:
        return torch.empty((0, dim))
    if y.ndim == 1:
        y = y.unsqueeze(0).expand(n, -1)
    if y.shape[0] != n:
        raise ValueError("condition batch does not match sample count")
    if y.shape[1] != net.cond_dim:
        raise ValueError(f"condition width {y.shape[1]} does not match net ({net.cond_dim})")
    gen = torch.Generator().manual_seed(seed)
    was_training = net.training
    net.eval()
    v = torch.randn((n, dim), generator=gen)
    with torch.no_grad():
        for t in range(schedule.timesteps, 0, -1):
            t_batch = torch.full((n,), t, dtype=torch.long)
            eps = net(v, t_batch, y)
            if guidance_scale != 1.0:
                eps_null = net(v, t_batch, torch.zeros_like(y))
                eps = eps_null + guidance_scale * (eps - eps_null)
            v = posterior_mean_from_eps(v, t, schedule, eps)
            if t > 1:
                v = v + schedule.sigma(t) * torch.randn((n, dim), generator=gen)
    if was_training:
        net.train()
    return v


def build_condition(
    metadata_emb: torch.Tensor,
    mode: str = METADATA_ONLY,
    v_plus: torch.Tensor | None = None,
    v_minus: torch.Tensor | None = None,
) -> torch.Tensor:
    """Assemble the conditioning vector for one sample.

    ``metadata-only`` uses the table context embedding alone. The feature mode
    appends two row latents: one from a sequence whose target value slot is
    masked and one from a sequence whose feature value slots are masked.
    """
    if mode not in CONDITION_MODES:
        raise ValueError(f"unknown condition mode {mode!r}")
    if mode == METADATA_ONLY:
        return metadata_emb
    if v_plus is None or v_minus is None:
        raise ValueError("feature mode needs both masked-sequence latents")
    return torch.cat([metadata_emb, v_plus, v_minus], dim=-1)
