"""Denoising diffusion over STFT windows.

Windows ``[n, channels, timesteps]`` are mapped to stacked real/imaginary
spectrograms ``[n, channels, 2 * freq_bins, frames]``, standardized per
sensor channel, and modelled with a noise-predicting dense denoiser::

    eps_hat = mlp([x_t, emb(t)]) + gate(emb(t)) * x_t

Both the MLP output layer and the gate start at zero, so an untrained model
predicts zero noise. The gate gives the network a per-element linear path
from ``x_t`` that a narrow hidden layer cannot provide on its own.

Every sensor channel has its own linear beta ramp.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .spectral import StftConfig, istft_array, stft_array


# ---------------------------------------------------------------------------
# noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray       # [channels, T]
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.shape[1]

    @property
    def channels(self) -> int:
        return self.betas.shape[0]

    def at(self, table: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Gather ``table[:, t - 1]`` as ``[batch, channels, 1, 1]`` for 1-based ``t``."""
        return table[:, np.asarray(t) - 1].T[:, :, None, None]


def make_linear_schedule(channels: int, T: int, beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    start = np.broadcast_to(np.asarray(beta_start, dtype=np.float64), (channels,))
    end = np.broadcast_to(np.asarray(beta_end, dtype=np.float64), (channels,))
    if T < 1:
        raise ValueError("T must be >= 1")
    if np.any(start <= 0) or np.any(end >= 1) or np.any(start > end):
        raise ValueError("need 0 < beta_start <= beta_end < 1 for every channel")
    frac = np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)
    betas = start[:, None] + (end - start)[:, None] * frac[None, :]
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas, axis=1))


# ---------------------------------------------------------------------------
# data representation
# ---------------------------------------------------------------------------

def windows_to_spectro(windows: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """``[n, C, L]`` windows -> ``[n, C, 2F, frames]`` stacked real/imag."""
    spec = stft_array(windows, cfg)
    return np.concatenate([spec.real, spec.imag], axis=-2)


def spectro_to_windows_raw(state: np.ndarray, cfg: StftConfig, original_len: int) -> np.ndarray:
    f = cfg.freq_bins
    if state.shape[-2] != 2 * f:
        raise ValueError(f"expected {2 * f} stacked frequency rows, got {state.shape[-2]}")
    spec = state[..., :f, :] + 1j * state[..., f:, :]
    return istft_array(spec, cfg, original_len)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray  # [channels]
    std: np.ndarray

    @classmethod
    def fit(cls, spectro: np.ndarray) -> "Standardizer":
        mean = spectro.mean(axis=(0, 2, 3))
        std = spectro.std(axis=(0, 2, 3))
        return cls(mean, np.where(std > 0, std, 1.0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[:, None, None]) / self.std[:, None, None]

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.std[:, None, None] + self.mean[:, None, None]


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps -> ``[batch, dim]``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.size, 1))], axis=1)
    return emb


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 200
    beta_start: tuple[float, ...] | float = 1e-4
    beta_end: tuple[float, ...] | float = 0.05
    hidden: tuple[int, ...] = (256, 256)
    time_embedding_dim: int = 32
    lr: float = 1e-3
    batch_size: int = 64
    repeats: int = 8
    stft: StftConfig = field(default_factory=StftConfig)


class DiffusionModel:
    def __init__(self, data_shape: Sequence[int], cfg: DiffusionConfig = DiffusionConfig(),
                 standardizer: Standardizer | None = None, original_len: int = 160,
                 seed: int = 0):
        self.data_shape = tuple(int(s) for s in data_shape)
        self.cfg = cfg
        channels = self.data_shape[0]
        self.schedule = make_linear_schedule(channels, cfg.T, cfg.beta_start, cfg.beta_end)
        dim = int(np.prod(self.data_shape))
        emb = cfg.time_embedding_dim
        self.mlp = nn.DenseNet([dim + emb, *cfg.hidden, dim], seed=seed, zero_last=True)
        self.gate = nn.DenseNet([emb, dim], ["identity"], seed=seed + 1, zero_last=True)
        self.standardizer = standardizer or Standardizer(np.zeros(channels), np.ones(channels))
        self.original_len = original_len
        self.seed = seed

    @property
    def dim(self) -> int:
        return int(np.prod(self.data_shape))

    @property
    def time_embedding_dim(self) -> int:
        return self.cfg.time_embedding_dim

    @property
    def T(self) -> int:
        return self.schedule.T

    def parameters(self) -> list[np.ndarray]:
        return self.mlp.parameters() + self.gate.parameters()

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def restore(self, params: Sequence[np.ndarray]) -> None:
        n = len(self.mlp.parameters())
        self.mlp.load_parameters(params[:n])
        self.gate.load_parameters(params[n:])

    def copy(self) -> "DiffusionModel":
        clone = DiffusionModel.__new__(DiffusionModel)
        clone.__dict__.update(self.__dict__)
        clone.mlp = self.mlp.copy()
        clone.gate = self.gate.copy()
        return clone

    def predict_noise(self, xt: np.ndarray, t: np.ndarray) -> np.ndarray:
        b = xt.shape[0]
        flat = xt.reshape(b, -1)
        emb = timestep_embedding(np.broadcast_to(t, (b,)), self.time_embedding_dim)
        out = self.mlp(np.concatenate([flat, emb], axis=1)) + self.gate(emb) * flat
        return out.reshape(xt.shape)

    def loss_and_grads(self, xt: np.ndarray, t: np.ndarray, noise: np.ndarray
                       ) -> tuple[float, list[np.ndarray]]:
        b = xt.shape[0]
        flat = xt.reshape(b, -1)
        emb = timestep_embedding(t, self.time_embedding_dim)
        mlp_out, mlp_cache = nn.forward(self.mlp, np.concatenate([flat, emb], axis=1))
        gate_out, gate_cache = nn.forward(self.gate, emb)
        pred = mlp_out + gate_out * flat
        loss, g = nn.mse_loss(pred, noise.reshape(b, -1))
        mlp_grads, _ = nn.backward(self.mlp, mlp_cache, g, input_grad=False)
        gate_grads, _ = nn.backward(self.gate, gate_cache, g * flat, input_grad=False)
        return loss, mlp_grads + gate_grads

    def touch(self) -> None:
        self.mlp.touch()
        self.gate.touch()

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write ``<path>.npz`` (networks) and ``<path>.json`` (schedule sidecar)."""
        path = Path(path)
        nn.save_nets(path.with_suffix(".npz"), {"mlp": self.mlp, "gate": self.gate},
                     mean=self.standardizer.mean, std=self.standardizer.std)
        cfg = asdict(self.cfg)
        sidecar = {
            "data_shape": list(self.data_shape),
            "original_len": self.original_len,
            "seed": self.seed,
            "config": cfg,
            "betas_first": self.schedule.betas[:, 0].tolist(),
            "betas_last": self.schedule.betas[:, -1].tolist(),
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "DiffusionModel":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(".json").read_text())
        c = sidecar["config"]
        c["stft"] = StftConfig(**c["stft"])
        for key in ("beta_start", "beta_end", "hidden"):
            if isinstance(c[key], list):
                c[key] = tuple(c[key])
        cfg = DiffusionConfig(**c)
        nets, extra = nn.load_nets(path.with_suffix(".npz"))
        model = cls(sidecar["data_shape"], cfg, Standardizer(extra["mean"], extra["std"]),
                    sidecar["original_len"], sidecar["seed"])
        model.mlp, model.gate = nets["mlp"], nets["gate"]
        return model


def build_model(windows: np.ndarray, cfg: DiffusionConfig = DiffusionConfig(),
                seed: int = 0) -> tuple[DiffusionModel, np.ndarray]:
    """Fit the standardizer on ``windows`` and return ``(model, standardized data)``."""
    windows = np.asarray(windows, dtype=np.float64)
    spectro = windows_to_spectro(windows, cfg.stft)
    std = Standardizer.fit(spectro)
    model = DiffusionModel(spectro.shape[1:], cfg, std, windows.shape[-1], seed)
    return model, std.apply(spectro)


# ---------------------------------------------------------------------------
# forward process and training
# ---------------------------------------------------------------------------

def forward_diffuse(x0: np.ndarray, t, schedule: NoiseSchedule,
                    noise_seed: int | np.random.Generator | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``x_t`` given ``x_0``; ``t`` is 1-based, scalar or one per batch item."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t), (x0.shape[0],))
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
    noise = rng.standard_normal(x0.shape)
    ab = schedule.at(schedule.alpha_bars, t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise, noise


def train_epoch(model: DiffusionModel, data: np.ndarray, opt: nn.Adam, seed: int) -> float:
    """One pass over ``data`` (each window ``cfg.repeats`` times); returns mean loss."""
    if len(data) == 0:
        raise ValueError("no training data")
    rng = np.random.default_rng(seed)
    idx = np.tile(np.arange(len(data)), model.cfg.repeats)
    rng.shuffle(idx)
    losses, weights = [], []
    for s in range(0, idx.size, model.cfg.batch_size):
        batch = data[idx[s:s + model.cfg.batch_size]]
        t = rng.integers(1, model.T + 1, size=len(batch))
        xt, noise = forward_diffuse(batch, t, model.schedule, rng)
        loss, grads = model.loss_and_grads(xt, t, noise)
        if not np.isfinite(loss):
            raise FloatingPointError("diverged: non-finite training loss")
        opt.step(model.parameters(), grads)
        model.touch()
        losses.append(loss)
        weights.append(len(batch))
    return float(np.average(losses, weights=weights))


# ---------------------------------------------------------------------------
# reverse process
# ---------------------------------------------------------------------------

@dataclass
class SamplingRun:
    current_state: np.ndarray
    step: int
    rng: np.random.Generator
    T: int
    seed: int

    @property
    def finished(self) -> bool:
        return self.step >= self.T


def begin_sampling(model: DiffusionModel, batch: int, seed: int) -> SamplingRun:
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rng = np.random.default_rng(seed)
    state = rng.standard_normal((batch, *model.data_shape))
    return SamplingRun(state, 0, rng, model.T, seed)


def denoise_step(run: SamplingRun, model: DiffusionModel) -> SamplingRun:
    """One ancestral step ``x_t -> x_{t-1}`` with variance ``beta_t``."""
    if run.finished:
        raise ValueError("sampling run already finished")
    t = model.T - run.step
    s = model.schedule
    beta = s.betas[:, t - 1][None, :, None, None]
    alpha = s.alphas[:, t - 1][None, :, None, None]
    ab = s.alpha_bars[:, t - 1][None, :, None, None]
    x = run.current_state
    eps = model.predict_noise(x, np.full(x.shape[0], t))
    # mean = (x - beta / sqrt(1 - ab) * eps) / sqrt(alpha), evaluated with few temporaries
    eps *= -beta / (np.sqrt(1.0 - ab) * np.sqrt(alpha))
    mean = x * (1.0 / np.sqrt(alpha))
    mean += eps
    if t > 1:
        z = run.rng.standard_normal(x.shape)
        z *= np.sqrt(beta)
        mean += z
    if not np.isfinite(mean.sum()):
        raise FloatingPointError(f"non-finite sampling state at step {run.step + 1}")
    run.current_state = mean
    run.step += 1
    return run


def spectro_to_windows(state: np.ndarray, model: DiffusionModel) -> np.ndarray:
    """Standardized sampler state ``[b, C, 2F, frames]`` -> time windows ``[b, C, L]``."""
    return spectro_to_windows_raw(model.standardizer.invert(state), model.cfg.stft,
                                  model.original_len)


def sample(model: DiffusionModel, batch: int, seed: int) -> np.ndarray:
    """Full unmonitored reverse process -> time windows."""
    run = begin_sampling(model, batch, seed)
    while not run.finished:
        denoise_step(run, model)
    return spectro_to_windows(run.current_state, model)
