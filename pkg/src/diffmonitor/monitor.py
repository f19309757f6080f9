"""Similarity-monitored early stopping for diffusion training and sampling.

Training: every ``interval_epochs`` a batch is sampled from the current model
and scored against the real training windows. Each synthetic sequence gets
the score of its most similar real window; the record keeps the per-sequence
scores and their mean. Training stops on a local maximum of the mean that
has not been beaten for ``patience_probes`` probes; with the calibrated GAK
the best record must also have at least ``gak_fraction_required`` of its
scores inside the calibration range. The best checkpoint is kept.

Denoising: every ``interval_steps`` reverse steps the partially denoised
batch is scored the same way, and sampling stops once the mean has dropped
on ``consecutive_drops_to_stop`` probes in a row. The state at the best
probe is returned.

Probes draw from their own seeded generators and never touch the training
or sampling random streams.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import diffusion
from .similarity import MetricKind, degenerate_items, metric_items, pairwise_scores
from .spectral import WelchConfig


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"
    STOP_AND_ROLLBACK = "stop_and_rollback"


@dataclass(frozen=True)
class TrainingMonitorConfig:
    metric: MetricKind = MetricKind.COSINE_PSD
    interval_epochs: int = 50
    probe_batch: int = 128
    patience_probes: int = 2
    gak_fraction_required: float = 0.25
    max_epochs: int = 4500
    gak_target_range: tuple[float, float] | None = None
    sigma: float | None = None
    # "best": the best record must satisfy the range rule; "any": any record may
    range_rule: Literal["best", "any"] = "best"
    aggregate: Literal["max", "mean"] = "max"
    probe_seed: int = 0
    welch: WelchConfig = field(default_factory=WelchConfig)

    def __post_init__(self):
        if self.interval_epochs < 1:
            raise ValueError("interval_epochs must be >= 1")
        if self.patience_probes < 1:
            raise ValueError("patience_probes must be >= 1")
        if not 0 < self.gak_fraction_required <= 1:
            raise ValueError("gak_fraction_required must lie in (0, 1]")
        if self.metric is MetricKind.COPT_GAK and (self.sigma is None or self.gak_target_range is None):
            raise ValueError("C-Opt GAK monitoring needs sigma and gak_target_range")


@dataclass(frozen=True)
class DenoiseMonitorConfig:
    metric: MetricKind = MetricKind.COSINE_PSD
    interval_steps: int = 30
    consecutive_drops_to_stop: int = 2
    sigma: float | None = None
    gak_target_range: tuple[float, float] | None = None
    aggregate: Literal["max", "mean"] = "max"
    welch: WelchConfig = field(default_factory=WelchConfig)

    def __post_init__(self):
        if self.interval_steps < 1:
            raise ValueError("interval_steps must be >= 1")
        if self.consecutive_drops_to_stop < 1:
            raise ValueError("consecutive_drops_to_stop must be >= 1")
        if self.metric is MetricKind.COPT_GAK and self.sigma is None:
            raise ValueError("C-Opt GAK monitoring needs sigma")


@dataclass
class MonitorRecord:
    position: int
    scores: np.ndarray
    mean: float
    std: float
    in_range_fraction: float | None = None
    decision: Decision = Decision.CONTINUE
    excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "position": self.position,
            "mean": self.mean,
            "std": self.std,
            "in_range_fraction": self.in_range_fraction,
            "decision": self.decision.value,
            "excluded": self.excluded,
            "scores": [float(s) for s in self.scores],
        }


@dataclass
class MonitorTrace:
    records: list[MonitorRecord] = field(default_factory=list)
    best_position: int | None = None
    best_mean: float = -np.inf
    stopped_at: int | None = None

    def add(self, record: MonitorRecord) -> None:
        self.records.append(record)
        if record.mean > self.best_mean:
            self.best_mean = record.mean
            self.best_position = record.position

    @property
    def best_record(self) -> MonitorRecord:
        return next(r for r in self.records if r.position == self.best_position)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["position", "mean", "std", "in_range_fraction", "decision"])
            for r in self.records:
                frac = "" if r.in_range_fraction is None else repr(r.in_range_fraction)
                w.writerow([r.position, repr(r.mean), repr(r.std), frac, r.decision.value])

    def to_dict(self) -> dict:
        return {
            "best_position": self.best_position,
            "best_mean": self.best_mean,
            "stopped_at": self.stopped_at,
            "records": [r.to_dict() for r in self.records],
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def trace_from_means(means: Sequence[float], positions: Sequence[int] | None = None,
                     fractions: Sequence[float | None] | None = None) -> MonitorTrace:
    """Build a trace from bare means (for rule walks and tests)."""
    trace = MonitorTrace()
    positions = positions or list(range(1, len(means) + 1))
    fractions = fractions or [None] * len(means)
    for pos, m, f in zip(positions, means, fractions):
        trace.add(MonitorRecord(pos, np.array([m]), float(m), 0.0, f))
    return trace


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def score_against_real(synthetic: np.ndarray, real: np.ndarray, metric: MetricKind,
                       sigma: float | None = None, aggregate: str = "max",
                       welch: WelchConfig = WelchConfig()) -> tuple[np.ndarray, int]:
    """Per-synthetic-window scores against a set of real windows.

    Windows are ``[n, channels, timesteps]``. Synthetic windows for which the
    metric is undefined are dropped; the count is returned alongside.
    """
    syn_items = metric_items(synthetic, metric, welch)
    real_items = metric_items(real, metric, welch)
    bad = degenerate_items(syn_items, metric)
    if bad.all():
        raise ValueError("all synthetic sequences are degenerate for this metric")
    mat = pairwise_scores(syn_items[~bad], real_items, metric, sigma)
    if aggregate == "mean":
        scores = mat.mean(axis=1)
    elif aggregate == "max":
        scores = mat.max(axis=1) if metric.higher_is_better else mat.min(axis=1)
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    return scores, int(bad.sum())


def make_record(position: int, scores: np.ndarray, excluded: int = 0,
                target_range: tuple[float, float] | None = None) -> MonitorRecord:
    frac = None
    if target_range is not None:
        lo, hi = target_range
        frac = float(np.mean((scores >= lo) & (scores <= hi)))
    return MonitorRecord(position, np.asarray(scores), float(np.mean(scores)),
                         float(np.std(scores)), frac, Decision.CONTINUE, excluded)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def probe_seed(base: int, position: int) -> int:
    return derive_seed(base, position, 0x5EED)


def probe_training(model: diffusion.DiffusionModel, real_train_windows: np.ndarray,
                   cfg: TrainingMonitorConfig, epoch: int, seed: int | None = None,
                   synthetic: np.ndarray | None = None) -> MonitorRecord:
    """Sample a probe batch with the full reverse process and score it.

    ``synthetic`` lets several monitors share one sampled batch.
    """
    if epoch % cfg.interval_epochs:
        raise ValueError(f"epoch {epoch} is not a multiple of {cfg.interval_epochs}")
    if synthetic is None:
        s = probe_seed(cfg.probe_seed if seed is None else seed, epoch)
        synthetic = diffusion.sample(model, cfg.probe_batch, s)
    scores, excluded = score_against_real(synthetic[:cfg.probe_batch], real_train_windows,
                                          cfg.metric, cfg.sigma, cfg.aggregate, cfg.welch)
    target = cfg.gak_target_range if cfg.metric is MetricKind.COPT_GAK else None
    return make_record(epoch, scores, excluded, target)


def _stop(trace: MonitorTrace) -> Decision:
    last = trace.records[-1]
    return Decision.STOP if trace.best_position == last.position else Decision.STOP_AND_ROLLBACK


def patience_exhausted(trace: MonitorTrace, patience: int) -> bool:
    """The last ``patience`` records all failed to improve on the best mean."""
    recs = trace.records
    if len(recs) < patience + 1:
        return False
    best_idx = next(i for i, r in enumerate(recs) if r.position == trace.best_position)
    return best_idx <= len(recs) - 1 - patience


def training_should_stop(trace: MonitorTrace, cfg: TrainingMonitorConfig) -> Decision:
    if not trace.records:
        raise ValueError("empty trace")
    if trace.records[-1].position >= cfg.max_epochs:
        return _stop(trace)
    if not patience_exhausted(trace, cfg.patience_probes):
        return Decision.CONTINUE
    if cfg.metric is MetricKind.COPT_GAK:
        if cfg.range_rule == "best":
            candidates = [trace.best_record]
        else:
            candidates = trace.records
        if not any((r.in_range_fraction or 0.0) >= cfg.gak_fraction_required for r in candidates):
            return Decision.CONTINUE
    return _stop(trace)


def probe_denoising(run: diffusion.SamplingRun, model: diffusion.DiffusionModel,
                    real_train_windows: np.ndarray, cfg: DenoiseMonitorConfig) -> MonitorRecord:
    if run.step % cfg.interval_steps and not run.finished:
        raise ValueError(f"step {run.step} is neither a probe step nor the final step")
    windows = diffusion.spectro_to_windows(run.current_state, model)
    scores, excluded = score_against_real(windows, real_train_windows, cfg.metric, cfg.sigma,
                                          cfg.aggregate, cfg.welch)
    target = cfg.gak_target_range if cfg.metric is MetricKind.COPT_GAK else None
    return make_record(run.step, scores, excluded, target)


def denoising_should_stop(trace: MonitorTrace, cfg: DenoiseMonitorConfig) -> Decision:
    if not trace.records:
        raise ValueError("empty trace")
    k = cfg.consecutive_drops_to_stop
    recs = trace.records
    if len(recs) < k + 1:
        return Decision.CONTINUE
    tail = recs[-(k + 1):]
    if all(b.mean < a.mean for a, b in zip(tail[:-1], tail[1:])):
        return _stop(trace)
    return Decision.CONTINUE


# ---------------------------------------------------------------------------
# monitored loops
# ---------------------------------------------------------------------------

@dataclass
class MonitoredTraining:
    """Outcome for one monitor attached to a training run."""

    cfg: TrainingMonitorConfig
    trace: MonitorTrace = field(default_factory=MonitorTrace)
    best_params: list[np.ndarray] | None = None
    stopped: bool = False

    @property
    def epochs_used(self) -> int:
        return self.trace.stopped_at if self.trace.stopped_at is not None else self.cfg.max_epochs

    @property
    def rolled_back(self) -> bool:
        return self.trace.best_position is not None and self.trace.best_position != self.trace.stopped_at


@dataclass
class TrainingOutcome:
    monitors: dict[str, MonitoredTraining]
    losses: list[float]
    final_params: list[np.ndarray]
    epochs_trained: int


def train_with_monitors(model: diffusion.DiffusionModel, data: np.ndarray,
                        real_windows: np.ndarray, monitors: dict[str, TrainingMonitorConfig],
                        max_epochs: int, seed: int = 0, lr: float | None = None,
                        run_to_cap: bool = True) -> TrainingOutcome:
    """Train ``model`` with any number of independent monitors attached.

    Monitoring does not change the parameter trajectory, so every monitor
    sees exactly what it would see in a run of its own: a monitor's stop
    freezes its best checkpoint while training continues for the others.
    With ``run_to_cap`` the model keeps training to ``max_epochs`` after all
    monitors stopped (the unmonitored baseline); otherwise the loop ends
    when the last monitor stops.
    """
    from . import nn

    opt = nn.Adam(lr=model.cfg.lr if lr is None else lr)
    state = {name: MonitoredTraining(cfg) for name, cfg in monitors.items()}
    losses = []
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        losses.append(diffusion.train_epoch(model, data, opt, seed=derive_seed(seed, epoch, 0x7A1)))
        due = [m for m in state.values() if not m.stopped and epoch % m.cfg.interval_epochs == 0]
        if due:
            batch = max(m.cfg.probe_batch for m in due)
            # one shared batch per epoch: identical to separate runs with the same probe seed
            seeds = {m.cfg.probe_seed for m in due}
            samples = {s: diffusion.sample(model, batch, probe_seed(s, epoch)) for s in seeds}
            for m in due:
                rec = probe_training(model, real_windows, m.cfg, epoch,
                                     synthetic=samples[m.cfg.probe_seed])
                m.trace.add(rec)
                if m.trace.best_position == epoch:
                    m.best_params = model.snapshot()
                rec.decision = training_should_stop(m.trace, m.cfg)
                if rec.decision is not Decision.CONTINUE:
                    m.stopped = True
                    m.trace.stopped_at = epoch
        if not run_to_cap and state and all(m.stopped for m in state.values()):
            break
    for m in state.values():
        if m.best_params is None:
            m.best_params = model.snapshot()
        if m.trace.stopped_at is None:
            m.trace.stopped_at = epoch
    return TrainingOutcome(state, losses, model.snapshot(), epoch)


@dataclass
class DenoiseOutcome:
    windows: np.ndarray
    trace: MonitorTrace
    steps_used: int
    returned_step: int
    final_windows: np.ndarray | None = None


def sample_with_monitor(model: diffusion.DiffusionModel, batch: int, seed: int,
                        real_windows: np.ndarray, cfg: DenoiseMonitorConfig | None,
                        run_to_end: bool = False) -> DenoiseOutcome:
    """Reverse process with an optional denoising monitor.

    Without a monitor, or if the monitor never fires, the final state is
    returned. On a stop the state from the best probe is returned. With
    ``run_to_end`` the chain keeps going after a stop and the fully denoised
    batch is returned as ``final_windows``; since probes never touch the
    sampling generator it equals an unmonitored run with the same seed.
    """
    run = diffusion.begin_sampling(model, batch, seed)
    trace = MonitorTrace()
    best_state = None
    stopped = None

    def probe() -> Decision:
        nonlocal best_state
        rec = probe_denoising(run, model, real_windows, cfg)
        trace.add(rec)
        if trace.best_position == run.step:
            best_state = run.current_state.copy()
        rec.decision = denoising_should_stop(trace, cfg)
        return rec.decision

    monitoring = cfg is not None
    if monitoring:
        probe()
    while not run.finished:
        diffusion.denoise_step(run, model)
        if monitoring and (run.step % cfg.interval_steps == 0 or run.finished):
            if probe() is not Decision.CONTINUE:
                monitoring = False
                trace.stopped_at = run.step
                stopped = diffusion.spectro_to_windows(best_state, model)
                if not run_to_end:
                    return DenoiseOutcome(stopped, trace, run.step, trace.best_position)
    final = diffusion.spectro_to_windows(run.current_state, model)
    if stopped is not None:
        return DenoiseOutcome(stopped, trace, trace.stopped_at, trace.best_position, final)
    return DenoiseOutcome(final, trace, run.step, run.step, final if run_to_end else None)
