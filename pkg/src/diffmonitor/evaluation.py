"""Downstream evaluation: training-set construction, proxy classifier, LOSOCV.

The proxy classifier is multinomial logistic regression on standardized,
concatenated per-channel Welch PSD vectors. It stands in for a CNN: what is
checked here is how the training sets rank against each other, not absolute
scores.
"""
from __future__ import annotations

import csv
import enum
import json
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import diffusion, gak, monitor, nn
from .config import RunConfig
from .signal_core import (ActivityLabel, Dataset, LabeledWindow, ParticipantId, TimeWindow,
                          load_csv_dataset, subsample_per_participant, synth_activity_dataset,
                          train_val_split)
from .similarity import Domain, MetricKind, metric_items
from .spectral import WelchConfig, welch_array


class SetName(str, enum.Enum):
    TWO_SAMPLE = "TwoSample"
    FULL_SET = "FullSet"
    FULL_DDPM = "FullDdpm"
    OT_COPT_GAK = "OtCOptGak"
    OTD_COPT_GAK = "OtdCOptGak"
    OT_COSINE_PSD = "OtCosinePsd"
    OTD_COSINE_PSD = "OtdCosinePsd"
    OT_COSINE_TIME = "OtCosineTime"
    OTD_COSINE_TIME = "OtdCosineTime"


ALL_REAL = -1  # real_samples sentinel: every training window of the split


@dataclass(frozen=True)
class TrainingSetSpec:
    """One row of the training-set table.

    ``real_samples`` and ``synthetic_per_model`` count windows per class.
    """

    name: SetName
    real_samples: int
    synthetic_per_model: int = 0
    monitor_training: bool = False
    monitor_denoising: bool = False
    metric: MetricKind | None = None

    def __post_init__(self):
        if self.monitor_denoising and not self.monitor_training:
            raise ValueError("denoising monitoring implies training monitoring")
        if self.monitor_training and self.metric is None:
            raise ValueError(f"{self.name.value}: monitored sets need a metric")
        if self.synthetic_per_model < 0:
            raise ValueError("synthetic_per_model must be >= 0")

    @property
    def domain(self) -> Domain | None:
        return None if self.metric is None else self.metric.domain

    @property
    def synthetic(self) -> bool:
        return self.synthetic_per_model > 0

    @property
    def artifact_key(self) -> str | None:
        """Which generated batch this set draws from."""
        if not self.synthetic:
            return None
        if self.metric is None:
            return "full"
        return f"{'otd' if self.monitor_denoising else 'ot'}:{self.metric.value}"

    def total_synthetic(self, num_classes: int) -> int:
        return self.synthetic_per_model * num_classes


_MONITORED = (
    (MetricKind.COPT_GAK, SetName.OT_COPT_GAK, SetName.OTD_COPT_GAK),
    (MetricKind.COSINE_PSD, SetName.OT_COSINE_PSD, SetName.OTD_COSINE_PSD),
    (MetricKind.COSINE_TIME, SetName.OT_COSINE_TIME, SetName.OTD_COSINE_TIME),
)


def table1_specs(real_per_class: int, synthetic_per_model: int) -> list[TrainingSetSpec]:
    """The nine training sets, in table order."""
    specs = [
        TrainingSetSpec(SetName.TWO_SAMPLE, real_per_class),
        TrainingSetSpec(SetName.FULL_SET, ALL_REAL),
        TrainingSetSpec(SetName.FULL_DDPM, real_per_class, synthetic_per_model),
    ]
    for metric, ot, otd in _MONITORED:
        specs.append(TrainingSetSpec(ot, real_per_class, synthetic_per_model, True, False, metric))
        specs.append(TrainingSetSpec(otd, real_per_class, synthetic_per_model, True, True, metric))
    return specs


def preset_specs(cfg: RunConfig, train_participants: int) -> list[TrainingSetSpec]:
    return table1_specs(cfg.real_per_participant * train_participants, cfg.synthetic_per_model)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = truth, columns = prediction

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")

    @classmethod
    def from_labels(cls, truth, pred, num_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(truth), np.asarray(pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(np.asarray(self.counts).sum())


def macro_f1(cm: ConfusionMatrix) -> float:
    c = np.asarray(cm.counts, dtype=np.float64)
    if c.sum() <= 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(c)
    pred = c.sum(axis=0)
    true = c.sum(axis=1)
    denom = pred + true
    # 2PR/(P+R) == 2tp/(pred+true); zero when the class is neither predicted nor present
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


# ---------------------------------------------------------------------------
# proxy classifier
# ---------------------------------------------------------------------------

def psd_features(windows: np.ndarray, welch: WelchConfig = WelchConfig(),
                 sample_rate_hz: float = 50.0) -> np.ndarray:
    """``[n, channels, L]`` -> ``[n, channels * bins]`` concatenated PSD vectors."""
    psd = welch_array(np.asarray(windows, dtype=np.float64), welch, sample_rate_hz)
    return psd.reshape(psd.shape[0], -1)


@dataclass
class ClassifierModel:
    net: nn.DenseNet
    mean: np.ndarray
    scale: np.ndarray
    labels: tuple[ActivityLabel, ...]
    welch: WelchConfig
    sample_rate_hz: float
    epochs_trained: int = 0

    def logits(self, windows: np.ndarray) -> np.ndarray:
        x = (psd_features(windows, self.welch, self.sample_rate_hz) - self.mean) / self.scale
        return self.net(x)

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(windows), axis=1)

    def evaluate(self, ds: Dataset) -> ConfusionMatrix:
        X, y, _ = ds.arrays()
        return ConfusionMatrix.from_labels(y, self.predict(X), len(self.labels))


def train_proxy_classifier(train: Dataset, val: Dataset | None, seed: int = 0,
                           lr: float = 0.01, max_epochs: int = 300, patience: int = 30,
                           welch: WelchConfig = WelchConfig(), weight_decay: float = 0.0
                           ) -> ClassifierModel:
    """Full-batch softmax regression, early-stopped on validation loss."""
    X, y, _ = train.arrays()
    num_classes = len(train.labels)
    if len(np.unique(y)) < 2:
        raise ValueError("proxy classifier needs at least two classes in the training set")
    fs = train.windows[0].window.sample_rate_hz
    feats = psd_features(X, welch, fs)
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (feats - mean) / scale
    net = nn.DenseNet([xs.shape[1], num_classes], ["identity"], seed=seed)
    model = ClassifierModel(net, mean, scale, train.labels, welch, fs)
    if val is not None and len(val.windows):
        Xv, yv, _ = val.arrays()
        xv = (psd_features(Xv, welch, fs) - mean) / scale
    else:
        xv = yv = None
    opt = nn.Adam(lr=lr)
    best_loss, best_params, best_epoch, waited = np.inf, net.parameters(), 0, 0
    best_params = [p.copy() for p in best_params]
    for epoch in range(1, max_epochs + 1):
        out, cache = nn.forward(net, xs)
        _, g = nn.softmax_cross_entropy(out, y)
        grads, _ = nn.backward(net, cache, g, input_grad=False)
        if weight_decay:
            grads[0] = grads[0] + weight_decay * net.layers[0].weights
        opt.step(net.parameters(), grads)
        net.touch()
        if xv is None:
            continue
        vloss, _ = nn.softmax_cross_entropy(net(xv), yv)
        if vloss < best_loss - 1e-12:
            best_loss, best_epoch, waited = vloss, epoch, 0
            best_params = [p.copy() for p in net.parameters()]
        else:
            waited += 1
            if waited >= patience:
                break
    if xv is not None:
        net.load_parameters(best_params)
        model.epochs_trained = best_epoch
    else:
        model.epochs_trained = max_epochs
    return model


# ---------------------------------------------------------------------------
# training-set assembly
# ---------------------------------------------------------------------------

SYNTHETIC_PARTICIPANT = ParticipantId(-1)


@dataclass
class SplitData:
    test_participant: int
    full_train: Dataset
    full_val: Dataset
    two_train: Dataset
    two_val: Dataset
    test: Dataset


def make_split(ds: Dataset, test_participant: int, cfg: RunConfig) -> SplitData:
    others = [p for p in ds.participants if p != test_participant]
    pool = ds.select(participants=others)
    seed = monitor.derive_seed(cfg.seed, test_participant, 1)
    full_train, full_val = train_val_split(pool, cfg.train_fraction, seed)
    two_train = subsample_per_participant(full_train, cfg.real_per_participant, seed + 1)
    two_val = subsample_per_participant(full_val, cfg.real_per_participant, seed + 2)
    return SplitData(test_participant, full_train, full_val, two_train, two_val,
                     ds.select(participants=[test_participant]))


def synthetic_dataset(batches: Mapping[str, np.ndarray], like: Dataset,
                      sample_rate_hz: float) -> list[LabeledWindow]:
    """Wrap generated ``[n, C, L]`` batches keyed by class name as labeled windows."""
    out = []
    for name, arr in batches.items():
        label = like.label_by_name(name)
        for i, w in enumerate(np.asarray(arr)):
            out.append(LabeledWindow(TimeWindow(w, sample_rate_hz), label,
                                     SYNTHETIC_PARTICIPANT, i))
    return out


def build_training_set(spec: TrainingSetSpec, split: SplitData,
                       artifacts: Mapping[str, Mapping[str, np.ndarray]]) -> Dataset:
    """Real windows per the set definition plus the matching synthetic batches.

    ``artifacts`` maps an artifact key (``"full"``, ``"ot:<metric>"``,
    ``"otd:<metric>"``) to per-class generated windows.
    """
    real = split.full_train if spec.real_samples == ALL_REAL else split.two_train
    if not spec.synthetic:
        return real
    key = spec.artifact_key
    batches = artifacts.get(key)
    names = [lab.name for lab in real.labels]
    if batches is None or any(n not in batches for n in names):
        missing = [n for n in names if batches is None or n not in batches]
        raise KeyError(f"{spec.name.value}: missing synthetic windows for {', '.join(missing)}")
    fs = real.windows[0].window.sample_rate_hz
    trimmed = {n: np.asarray(batches[n])[:spec.synthetic_per_model] for n in names}
    for n, arr in trimmed.items():
        if len(arr) < spec.synthetic_per_model:
            raise ValueError(f"{spec.name.value}: {n} has {len(arr)} synthetic windows, "
                             f"need {spec.synthetic_per_model}")
    return real.replace(tuple(real.windows) + tuple(synthetic_dataset(trimmed, real, fs)))


def validation_set(spec: TrainingSetSpec, split: SplitData) -> Dataset:
    return split.full_val if spec.real_samples == ALL_REAL else split.two_val


# ---------------------------------------------------------------------------
# reduction arithmetic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Reduction:
    mean_epochs: float
    reduction_pct: float
    saved_epochs: float
    models: int


def reduction_report(epochs_used: Mapping | Sequence[float], max_epochs: int) -> Reduction:
    """``1 - mean(used) / max`` and the total ``sum(max - used)``."""
    used = np.asarray(list(epochs_used.values()) if isinstance(epochs_used, Mapping)
                      else list(epochs_used), dtype=np.float64)
    if used.size == 0:
        raise ValueError("empty usage table")
    mean = float(used.mean())
    return Reduction(mean, 100.0 * (1.0 - mean / max_epochs),
                     float(np.sum(max_epochs - used)), int(used.size))


def reduction_from_class_means(class_means: Sequence[float], participants: int,
                               max_epochs: int) -> Reduction:
    """Reduction from per-class mean epochs (each mean over ``participants`` models).

    Per-class totals are recovered as ``round(mean * participants)``: the
    means are reported to two decimals, and the integer epoch totals are
    what the saved-epoch count is built from.
    """
    means = np.asarray(class_means, dtype=np.float64)
    totals = np.round(means * participants)
    models = participants * means.size
    mean = float(means.mean())
    return Reduction(mean, 100.0 * (1.0 - mean / max_epochs),
                     float(models * max_epochs - totals.sum()), models)


# Mean stopping epochs per class (Walking, Running, Jump Up, Cycling) over 12
# participants, early stopping against a cap of 4500 epochs.
PUBLISHED_USAGE = {
    "cosine_psd": (3857.33, 3315.67, 3219.83, 3715.67),
    "cosine_time": (3657.33, 2924.00, 3144.83, 3107.33),
    "copt_gak": (3507.33, 3744.83, 3861.50, 3457.33),
}
PUBLISHED_PARTICIPANTS = 12
PUBLISHED_MAX_EPOCHS = 4500


def published_reductions() -> dict[str, Reduction]:
    return {k: reduction_from_class_means(v, PUBLISHED_PARTICIPANTS, PUBLISHED_MAX_EPOCHS)
            for k, v in PUBLISHED_USAGE.items()}


def write_reduction_csv(path: str | Path, rows: Mapping[str, Reduction],
                        class_means: Mapping[str, Sequence[float]] | None = None,
                        class_names: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", *class_names, "mean_epochs", "reduction_pct", "saved_epochs",
                    "models"])
        for name, r in rows.items():
            per_class = list(class_means[name]) if class_means else []
            w.writerow([name, *[f"{m:.2f}" for m in per_class], f"{r.mean_epochs:.4f}",
                        f"{r.reduction_pct:.2f}", f"{r.saved_epochs:.0f}", r.models])


# ---------------------------------------------------------------------------
# LOSOCV experiment
# ---------------------------------------------------------------------------

@dataclass
class ModelRecord:
    """Bookkeeping for one (split, class) diffusion model."""

    participant: int
    label: str
    sigma: float | None = None
    target_range: tuple[float, float] | None = None
    calibration_fallback: bool | None = None
    epochs_used: dict[str, int] = field(default_factory=dict)
    best_epoch: dict[str, int] = field(default_factory=dict)
    steps_used: dict[str, int] = field(default_factory=dict)
    noise_psd_score: float | None = None
    final_psd_score: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class EvalReport:
    set_names: list[str]
    participants: list[int]
    class_names: list[str]
    max_epochs: int
    diffusion_steps: int
    f1: dict[str, dict[int, list[float]]]
    models: list[ModelRecord]
    failures: list[str]
    seconds: float = 0.0

    def participant_f1(self, set_name: str) -> dict[int, float]:
        return {p: float(np.mean(v)) for p, v in self.f1.get(set_name, {}).items() if v}

    def mean_f1(self, set_name: str) -> float:
        vals = list(self.participant_f1(set_name).values())
        return float(np.mean(vals)) if vals else float("nan")

    def seed_mean_f1(self, set_name: str) -> np.ndarray:
        """Macro F1 averaged over participants, one value per classifier seed."""
        rows = [v for v in self.f1.get(set_name, {}).values() if v]
        return np.mean(np.array(rows), axis=0) if rows else np.array([])

    def epochs_used(self, metric: str) -> dict[tuple[int, str], int]:
        return {(m.participant, m.label): m.epochs_used[metric]
                for m in self.models if metric in m.epochs_used}

    def steps_used(self, metric: str) -> dict[tuple[int, str], int]:
        return {(m.participant, m.label): m.steps_used[metric]
                for m in self.models if metric in m.steps_used}

    def reductions(self) -> dict[str, Reduction]:
        metrics = sorted({k for m in self.models for k in m.epochs_used})
        return {k: reduction_report(self.epochs_used(k), self.max_epochs) for k in metrics}

    def to_dict(self) -> dict:
        return {
            "set_names": self.set_names,
            "participants": self.participants,
            "class_names": self.class_names,
            "max_epochs": self.max_epochs,
            "diffusion_steps": self.diffusion_steps,
            "f1": {s: {str(p): v for p, v in d.items()} for s, d in self.f1.items()},
            "mean_f1": {s: self.mean_f1(s) for s in self.set_names},
            "models": [m.__dict__ for m in self.models],
            "reductions": {k: r.__dict__ for k, r in self.reductions().items()},
            "failures": self.failures,
            "seconds": self.seconds,
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(out / "f1.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["participant", *self.set_names])
            for p in self.participants:
                row = [self.participant_f1(s).get(p) for s in self.set_names]
                w.writerow([p, *["" if v is None else f"{v:.6f}" for v in row]])
            w.writerow(["mean", *[f"{self.mean_f1(s):.6f}" for s in self.set_names]])
        with open(out / "usage.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            metrics = sorted({k for m in self.models for k in m.epochs_used})
            w.writerow(["participant", "class", "sigma", "fallback",
                        *[f"epochs_{k}" for k in metrics], *[f"best_{k}" for k in metrics],
                        *[f"steps_{k}" for k in metrics]])
            for m in self.models:
                w.writerow([m.participant, m.label, m.sigma, m.calibration_fallback,
                            *[m.epochs_used.get(k, "") for k in metrics],
                            *[m.best_epoch.get(k, "") for k in metrics],
                            *[m.steps_used.get(k, "") for k in metrics]])
        means = {}
        for k in self.reductions():
            used = self.epochs_used(k)
            means[k] = [float(np.mean([v for (p, c), v in used.items() if c == name] or [np.nan]))
                        for name in self.class_names]
        write_reduction_csv(out / "reduction.csv", self.reductions(), means, self.class_names)


def load_corpus(cfg: RunConfig) -> Dataset:
    if cfg.data_dir:
        return load_csv_dataset(cfg.data_dir, cfg.class_names, cfg.sliding(),
                                cfg.sample_rate_hz)
    return synth_activity_dataset(cfg.synth())


def class_seed(cfg: RunConfig, participant: int, label: ActivityLabel) -> int:
    return monitor.derive_seed(cfg.seed, participant, label.index)


def class_windows(split: SplitData, label: ActivityLabel) -> tuple[np.ndarray, np.ndarray]:
    """TwoSample train and validation windows of one class."""
    real = split.two_train.select(label=label)
    val = split.two_val.select(label=label)
    if len(real) == 0 or len(val) == 0:
        raise ValueError(f"class {label.name!r} has no windows in split "
                         f"{split.test_participant}")
    return real.arrays()[0], val.arrays()[0]


def calibrate_class(cfg: RunConfig, split: SplitData, label: ActivityLabel) -> gak.GakCalibration:
    real, val = class_windows(split, label)
    welch = cfg.welch()
    return gak.calibrate_sigma(metric_items(real, MetricKind.COPT_GAK, welch),
                               metric_items(val, MetricKind.COPT_GAK, welch), cfg.grid(),
                               (cfg.calib_std_lo, cfg.calib_std_hi), cfg.calib_statistic,
                               cfg.gak_range_width)


def run_class_model(cfg: RunConfig, split: SplitData, label: ActivityLabel,
                    record: ModelRecord) -> dict[str, np.ndarray]:
    """Calibrate, train with every monitor attached, and generate all batches.

    Returns generated windows keyed by artifact key.
    """
    t0 = time.perf_counter()
    pid = split.test_participant
    real, _ = class_windows(split, label)
    welch = cfg.welch()
    metrics = cfg.metrics()
    sigma = target = None
    if MetricKind.COPT_GAK in metrics:
        cal = calibrate_class(cfg, split, label)
        sigma, target = cal.sigma, cal.target_range
        record.sigma, record.target_range = sigma, target
        record.calibration_fallback = cal.fallback

    base = class_seed(cfg, pid, label)
    model, data = diffusion.build_model(real, cfg.diffusion(), seed=base % (2 ** 31))
    monitors = {m.value: cfg.training_monitor(m, sigma, target, probe_seed=base + 1)
                for m in metrics}
    outcome = monitor.train_with_monitors(model, data, real, monitors, cfg.max_epochs,
                                          seed=base + 2, run_to_cap=True)
    n = cfg.synthetic_per_model
    sample_seed = monitor.derive_seed(base, 3)
    artifacts: dict[str, np.ndarray] = {}
    model.restore(outcome.final_params)
    artifacts["full"] = diffusion.sample(model, n, sample_seed)

    noise = diffusion.spectro_to_windows(
        diffusion.begin_sampling(model, cfg.probe_batch, sample_seed).current_state, model)
    record.noise_psd_score = float(monitor.score_against_real(
        noise, real, MetricKind.COSINE_PSD, welch=welch)[0].mean())
    record.final_psd_score["full"] = float(monitor.score_against_real(
        artifacts["full"], real, MetricKind.COSINE_PSD, welch=welch)[0].mean())

    for name, m in outcome.monitors.items():
        record.epochs_used[name] = m.epochs_used
        record.best_epoch[name] = m.trace.best_position
        model.restore(m.best_params)
        den = monitor.sample_with_monitor(model, n, sample_seed, real,
                                          cfg.denoise_monitor(MetricKind(name), sigma, target),
                                          run_to_end=True)
        artifacts[f"ot:{name}"] = den.final_windows
        artifacts[f"otd:{name}"] = den.windows
        record.steps_used[name] = den.steps_used
        for key in (f"ot:{name}", f"otd:{name}"):
            record.final_psd_score[key] = float(monitor.score_against_real(
                artifacts[key], real, MetricKind.COSINE_PSD, welch=welch)[0].mean())
    record.seconds = time.perf_counter() - t0
    return artifacts


def losocv_experiment(cfg: RunConfig, dataset: Dataset | None = None,
                      participants: Sequence[int] | None = None,
                      log: Callable[[str], None] | None = None) -> EvalReport:
    """Leave-one-participant-out evaluation of all nine training sets.

    Failures are recorded with their (participant, class, set) context and
    the run continues with whatever else can still be evaluated.
    """
    t0 = time.perf_counter()
    log = log or (lambda msg: None)
    ds = dataset if dataset is not None else load_corpus(cfg)
    if len(ds.participants) < 2:
        raise ValueError("LOSOCV needs at least two participants")
    held_out = list(participants) if participants is not None else list(ds.participants)
    specs = preset_specs(cfg, len(ds.participants) - 1)
    f1: dict[str, dict[int, list[float]]] = {s.name.value: {} for s in specs}
    records: list[ModelRecord] = []
    failures: list[str] = []
    for pid in held_out:
        split = make_split(ds, pid, cfg)
        artifacts: dict[str, dict[str, np.ndarray]] = {}
        for label in ds.labels:
            rec = ModelRecord(pid, label.name)
            records.append(rec)
            try:
                made = run_class_model(cfg, split, label, rec)
            except Exception as exc:  # recorded, run continues
                failures.append(f"participant={pid} class={label.name} spec=*: "
                                f"{type(exc).__name__}: {exc}")
                log(traceback.format_exc())
                continue
            for key, arr in made.items():
                artifacts.setdefault(key, {})[label.name] = arr
            log(f"participant {pid} class {label.name}: epochs {rec.epochs_used} "
                f"steps {rec.steps_used} ({rec.seconds:.1f}s)")
        for spec in specs:
            try:
                train = build_training_set(spec, split, artifacts)
                val = validation_set(spec, split)
                scores = []
                for s in range(cfg.classifier_seeds):
                    clf = train_proxy_classifier(train, val, seed=s, lr=cfg.classifier_lr,
                                                 max_epochs=cfg.classifier_epochs,
                                                 patience=cfg.classifier_patience,
                                                 welch=cfg.welch())
                    scores.append(macro_f1(clf.evaluate(split.test)))
                f1[spec.name.value][pid] = scores
            except Exception as exc:
                failures.append(f"participant={pid} class=* spec={spec.name.value}: "
                                f"{type(exc).__name__}: {exc}")
        log(f"participant {pid}: " + ", ".join(
            f"{s.name.value}={np.mean(f1[s.name.value].get(pid, [np.nan])):.3f}" for s in specs))
    return EvalReport([s.name.value for s in specs], held_out, [l.name for l in ds.labels],
                      cfg.max_epochs, cfg.diffusion_steps, f1, records, failures,
                      time.perf_counter() - t0)
