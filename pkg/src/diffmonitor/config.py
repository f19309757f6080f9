"""Flat run configuration with ``desk`` and ``paper`` presets.

Every key can be overridden with ``key=value`` strings (values parse as
JSON when possible, otherwise as bare strings). Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from .diffusion import DiffusionConfig
from .gak import CalibrationGrid
from .monitor import DenoiseMonitorConfig, TrainingMonitorConfig
from .signal_core import SlidingWindowConfig, SynthConfig
from .similarity import MetricKind
from .spectral import StftConfig, WelchConfig

CONFIG_ENV = "DIFFMONITOR_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    out_dir: str = "runs"
    data_dir: str = ""
    # corpus
    class_names: tuple[str, ...] = ("Walking", "Cycling")
    fundamentals_hz: tuple[float, ...] = (1.8, 1.2)
    harmonics: tuple[tuple[float, ...], ...] = ((1.0, 0.5, 0.25), (1.0, 0.35, 0.1))
    participants: int = 4
    windows_per_class: int = 20
    channels: int = 4
    noise_level: float = 0.1
    amplitude_jitter: float = 0.15
    freq_jitter: float = 0.05
    intensity_drift: float = 0.25
    tempo_drift: float = 0.04
    sample_rate_hz: float = 50.0
    window_width: int = 160
    window_overlap: int = 40
    # spectral
    stft_window: int = 22
    stft_overlap: int = 20
    welch_segment: int = 64
    welch_overlap: int | None = None
    # diffusion
    diffusion_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.05
    hidden: tuple[int, ...] = (128, 128)
    time_embedding_dim: int = 32
    lr: float = 1e-3
    batch_size: int = 64
    repeats: int = 8
    # training monitor
    monitor_metrics: tuple[str, ...] = ("copt_gak", "cosine_psd", "cosine_time")
    max_epochs: int = 600
    monitor_interval: int = 10
    probe_batch: int = 16
    patience: int = 2
    gak_fraction: float = 0.25
    gak_range_rule: str = "best"
    score_aggregate: str = "max"
    # denoising monitor
    denoise_interval: int = 10
    denoise_drops: int = 2
    # calibration
    calib_sigma_min: float = 0.005
    calib_sigma_max: float = 2.0
    calib_points: int = 120
    calib_std_lo: float = 0.09
    calib_std_hi: float = 0.12
    calib_statistic: str = "max"
    gak_range_width: float = 1.0
    # evaluation
    real_per_participant: int = 2
    train_fraction: float = 0.8
    synthetic_per_model: int = 128
    classifier_seeds: int = 5
    classifier_lr: float = 0.01
    classifier_epochs: int = 300
    classifier_patience: int = 30

    # -- derived module configs --------------------------------------------

    def synth(self) -> SynthConfig:
        return SynthConfig(
            class_names=self.class_names, fundamentals_hz=self.fundamentals_hz,
            harmonics=self.harmonics, participants=self.participants,
            windows_per_participant=self.windows_per_class, channels=self.channels,
            noise_level=self.noise_level, amplitude_jitter=self.amplitude_jitter,
            freq_jitter=self.freq_jitter, intensity_drift=self.intensity_drift,
            tempo_drift=self.tempo_drift, sample_rate_hz=self.sample_rate_hz,
            window=self.sliding(), seed=self.seed)

    def sliding(self) -> SlidingWindowConfig:
        return SlidingWindowConfig(self.window_width, self.window_overlap)

    def stft(self) -> StftConfig:
        return StftConfig(self.stft_window, self.stft_overlap)

    def welch(self) -> WelchConfig:
        return WelchConfig(self.welch_segment, self.welch_overlap)

    def diffusion(self) -> DiffusionConfig:
        return DiffusionConfig(
            T=self.diffusion_steps, beta_start=self.beta_start, beta_end=self.beta_end,
            hidden=self.hidden, time_embedding_dim=self.time_embedding_dim, lr=self.lr,
            batch_size=self.batch_size, repeats=self.repeats, stft=self.stft())

    def grid(self) -> CalibrationGrid:
        return CalibrationGrid(self.calib_sigma_min, self.calib_sigma_max, self.calib_points)

    def metrics(self) -> list[MetricKind]:
        return [MetricKind(m) for m in self.monitor_metrics]

    def training_monitor(self, metric: MetricKind, sigma: float | None = None,
                         target_range: tuple[float, float] | None = None,
                         probe_seed: int = 0) -> TrainingMonitorConfig:
        gak = metric is MetricKind.COPT_GAK
        return TrainingMonitorConfig(
            metric=metric, interval_epochs=self.monitor_interval, probe_batch=self.probe_batch,
            patience_probes=self.patience, gak_fraction_required=self.gak_fraction,
            max_epochs=self.max_epochs, gak_target_range=target_range if gak else None,
            sigma=sigma if gak else None, range_rule=self.gak_range_rule,
            aggregate=self.score_aggregate, probe_seed=probe_seed, welch=self.welch())

    def denoise_monitor(self, metric: MetricKind, sigma: float | None = None,
                        target_range: tuple[float, float] | None = None) -> DenoiseMonitorConfig:
        gak = metric is MetricKind.COPT_GAK
        return DenoiseMonitorConfig(
            metric=metric, interval_steps=self.denoise_interval,
            consecutive_drops_to_stop=self.denoise_drops, sigma=sigma if gak else None,
            gak_target_range=target_range if gak else None, aggregate=self.score_aggregate,
            welch=self.welch())

    def validate(self) -> "RunConfig":
        """Build every derived config so bad values fail early, naming the key."""
        if self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r}")
        try:
            self.metrics()
        except ValueError as exc:
            raise ConfigError(f"monitor_metrics: {exc}") from None
        for key in ("gak_range_rule",):
            if getattr(self, key) not in ("best", "any"):
                raise ConfigError(f"{key}: expected 'best' or 'any'")
        if self.score_aggregate not in ("max", "mean"):
            raise ConfigError("score_aggregate: expected 'max' or 'mean'")
        if self.calib_statistic not in ("max", "all"):
            raise ConfigError("calib_statistic: expected 'max' or 'all'")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction: must lie in (0, 1)")
        if self.classifier_seeds < 1:
            raise ConfigError("classifier_seeds: must be >= 1")
        for build in (self.synth, self.stft, self.diffusion, self.grid):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


PRESETS: dict[str, RunConfig] = {}
PRESETS["desk"] = RunConfig()
PRESETS["paper"] = RunConfig(
    preset="paper",
    class_names=("Walking", "Running", "JumpUp", "Cycling"),
    fundamentals_hz=(1.8, 2.6, 1.4, 1.2),
    harmonics=((1.0, 0.5, 0.25), (1.0, 0.7, 0.4), (1.0, 0.2, 0.6), (1.0, 0.35, 0.1)),
    participants=12, channels=6,
    diffusion_steps=3000, beta_end=0.02, hidden=(256, 256),
    max_epochs=4500, monitor_interval=50, probe_batch=128,
    denoise_interval=30, synthetic_per_model=3840,
)

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _coerce(key: str, value, current):
    """Match ``value`` to the type of the field's current value."""
    value = _tuplify(value)
    if key == "welch_overlap":
        if value is None or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"{key}: expected an integer or null, got {value!r}")
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(current, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(current, str):
        return str(value)
    elif isinstance(current, tuple):
        if isinstance(value, tuple):
            return value
        if isinstance(value, str) and current and isinstance(current[0], str):
            return tuple(v for v in value.split(",") if v)
    raise ConfigError(f"{key}: cannot use {value!r} (expected {type(current).__name__})")


def _merge(base: RunConfig, updates: dict) -> RunConfig:
    unknown = sorted(set(updates) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    clean = {k: _coerce(k, v, getattr(base, k)) for k, v in updates.items()}
    return dataclasses.replace(base, **clean)


def from_dict(d: dict) -> RunConfig:
    """Start from the named preset (default ``desk``) and apply every other key."""
    preset = d.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}")
    return _merge(PRESETS[preset], d)


def parse_overrides(pairs: Iterable[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        key = key.strip()
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def load(path: str | Path | None = None, overrides: Iterable[str] = (),
         preset: str | None = None) -> RunConfig:
    """Resolve a config from file (or ``$DIFFMONITOR_CONFIG``), preset and overrides."""
    base: dict = {}
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is not None:
        try:
            base = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    extra = parse_overrides(overrides)
    if preset is not None:
        base["preset"] = preset
    if "preset" in extra:
        base["preset"] = extra["preset"]
    cfg = from_dict(base)
    return _merge(cfg, extra).validate()
