"""Time-domain data types, windowing, participant splits and a synthetic
cyclic-activity generator.

Windows are stored as ``[channels, timesteps]`` float64 arrays sampled at
50 Hz. Participants are plain integers.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NewType, Sequence

import numpy as np

ParticipantId = NewType("ParticipantId", int)

DEFAULT_SAMPLE_RATE_HZ = 50.0
SAMPLE_PERIOD_TOLERANCE = 0.01


@dataclass(frozen=True)
class TimeWindow:
    data: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"window must be [channels, timesteps], got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise ValueError(f"window must be non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("window contains non-finite values")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def timesteps(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ActivityLabel:
    name: str
    index: int


@dataclass(frozen=True)
class LabeledWindow:
    window: TimeWindow
    label: ActivityLabel
    participant: ParticipantId
    # position of the window within its (participant, label) recording
    index: int = 0

    @property
    def key(self) -> tuple[int, int, int]:
        return (int(self.participant), self.label.index, self.index)


def make_labels(names: Sequence[str]) -> tuple[ActivityLabel, ...]:
    if len(set(names)) != len(names):
        raise ValueError(f"label names must be unique, got {list(names)}")
    return tuple(ActivityLabel(name, i) for i, name in enumerate(names))


@dataclass(frozen=True)
class Dataset:
    windows: tuple[LabeledWindow, ...]
    channels: int
    labels: tuple[ActivityLabel, ...]
    meta: str = ""

    def __post_init__(self):
        windows = tuple(self.windows)
        object.__setattr__(self, "windows", windows)
        if any(lw.window.channels != self.channels for lw in windows):
            raise ValueError("all windows must share the dataset channel count")
        if len({lw.window.timesteps for lw in windows}) > 1:
            raise ValueError("all windows must share the same timestep count")
        label_set = set(self.labels)
        for lw in windows:
            if lw.label not in label_set:
                raise ValueError(f"window label {lw.label} not in configured label set")
        indices = sorted(lab.index for lab in self.labels)
        if indices != list(range(len(indices))):
            raise ValueError("label indices must be contiguous from 0")

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def participants(self) -> list[ParticipantId]:
        return sorted({lw.participant for lw in self.windows})

    @property
    def timesteps(self) -> int:
        return self.windows[0].window.timesteps if self.windows else 0

    def label_by_name(self, name: str) -> ActivityLabel:
        for lab in self.labels:
            if lab.name == name:
                return lab
        raise KeyError(name)

    def replace(self, windows: Iterable[LabeledWindow], meta: str | None = None) -> "Dataset":
        return Dataset(tuple(windows), self.channels, self.labels,
                       self.meta if meta is None else meta)

    def select(self, participants: Iterable[int] | None = None,
               label: ActivityLabel | None = None) -> "Dataset":
        pids = None if participants is None else {int(p) for p in participants}
        return self.replace(
            lw for lw in self.windows
            if (pids is None or int(lw.participant) in pids)
            and (label is None or lw.label == label)
        )

    def without(self, other: "Dataset") -> "Dataset":
        drop = {lw.key for lw in other.windows}
        return self.replace(lw for lw in self.windows if lw.key not in drop)

    def merge(self, other: "Dataset") -> "Dataset":
        if other.channels != self.channels or other.labels != self.labels:
            raise ValueError("cannot merge datasets with different channels or labels")
        return self.replace(self.windows + other.windows)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(X [n, channels, timesteps], y [n], participants [n])``."""
        if not self.windows:
            return (np.zeros((0, self.channels, 0)), np.zeros(0, dtype=int),
                    np.zeros(0, dtype=int))
        X = np.stack([lw.window.data for lw in self.windows])
        y = np.array([lw.label.index for lw in self.windows])
        p = np.array([int(lw.participant) for lw in self.windows])
        return X, y, p

    def strata(self) -> dict[tuple[int, int], list[LabeledWindow]]:
        out: dict[tuple[int, int], list[LabeledWindow]] = {}
        for lw in self.windows:
            out.setdefault((int(lw.participant), lw.label.index), []).append(lw)
        return dict(sorted(out.items()))


@dataclass(frozen=True)
class SlidingWindowConfig:
    width: int = 160
    overlap: int = 40

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("width must be positive")
        if not 0 <= self.overlap < self.width:
            raise ValueError(f"overlap must satisfy 0 <= overlap < width, got {self.overlap}")

    @property
    def stride(self) -> int:
        return self.width - self.overlap


def slide_windows(signal: np.ndarray, cfg: SlidingWindowConfig = SlidingWindowConfig(),
                  sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> list[TimeWindow]:
    """Cut a ``[channels, N]`` signal into fixed-width windows.

    Windows start every ``width - overlap`` samples; a trailing remainder
    shorter than ``width`` is dropped.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[None, :]
    n = signal.shape[1]
    if n < cfg.width:
        raise ValueError(f"signal too short: {n} samples < window width {cfg.width}")
    starts = range(0, n - cfg.width + 1, cfg.stride)
    return [TimeWindow(signal[:, s:s + cfg.width], sample_rate_hz) for s in starts]


def label_runs(labels: Sequence[str]) -> list[tuple[str, int, int]]:
    """Contiguous same-label runs as ``(label, start, stop)``."""
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append((labels[start], start, i))
            start = i
    return runs


def loso_splits(ds: Dataset) -> list[tuple[list[ParticipantId], ParticipantId]]:
    """Leave-one-subject-out splits: one ``(train_participants, test)`` per participant."""
    pids = ds.participants
    if len(pids) < 2:
        raise ValueError(f"leave-one-subject-out needs >= 2 participants, got {len(pids)}")
    return [([q for q in pids if q != p], p) for p in pids]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_val_split(ds: Dataset, train_fraction: float = 0.8,
                    seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified (participant, label) split, deterministic for a given seed."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for members in ds.strata().values():
        order = rng.permutation(len(members))
        n_train = _round_half_up(train_fraction * len(members))
        train.extend(members[i] for i in sorted(order[:n_train]))
        val.extend(members[i] for i in sorted(order[n_train:]))
    return ds.replace(train), ds.replace(val)


def subsample_per_participant(ds: Dataset, k: int, seed: int = 0) -> Dataset:
    """Keep ``k`` random windows per participant and class.

    On a single-class dataset this is exactly ``k`` windows per participant.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    rng = np.random.default_rng(seed)
    keep = []
    for (pid, label_index), members in ds.strata().items():
        if len(members) < k:
            name = ds.labels[label_index].name
            raise ValueError(
                f"participant {pid} has {len(members)} windows of class {name!r}, need {k}")
        order = rng.permutation(len(members))[:k]
        keep.extend(members[i] for i in sorted(order))
    return ds.replace(keep)


# ---------------------------------------------------------------------------
# synthetic activities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    class_names: tuple[str, ...] = ("Walking", "Running", "JumpUp", "Cycling")
    fundamentals_hz: tuple[float, ...] = (1.8, 2.6, 1.4, 1.2)
    harmonics: tuple[tuple[float, ...], ...] = (
        (1.0, 0.5, 0.25),
        (1.0, 0.7, 0.4),
        (1.0, 0.2, 0.6),
        (1.0, 0.35, 0.1),
    )
    participants: int = 12
    windows_per_participant: int = 20
    channels: int = 6
    noise_level: float = 0.1
    amplitude_jitter: float = 0.15
    freq_jitter: float = 0.05
    # slow within-recording variation of effort and cadence
    intensity_drift: float = 0.25
    tempo_drift: float = 0.04
    amplitude: float = 1.0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    window: SlidingWindowConfig = field(default_factory=SlidingWindowConfig)
    seed: int = 0

    def __post_init__(self):
        n = len(self.class_names)
        if len(self.fundamentals_hz) != n or len(self.harmonics) != n:
            raise ValueError("class_names, fundamentals_hz and harmonics must align")
        nyquist = self.sample_rate_hz / 2
        for name, f0, harm in zip(self.class_names, self.fundamentals_hz, self.harmonics):
            if not 0 < f0 < nyquist:
                raise ValueError(
                    f"fundamentals_hz: class {name!r} fundamental {f0} Hz must lie in "
                    f"(0, {nyquist}) Hz (Nyquist)")
            top = f0 * len(harm) * (1 + self.freq_jitter) * (1 + self.tempo_drift)
            if top >= nyquist:
                raise ValueError(
                    f"harmonics: class {name!r} harmonic at {top:.2f} Hz reaches Nyquist")
        if self.participants < 1 or self.windows_per_participant < 1 or self.channels < 1:
            raise ValueError("participants, windows_per_participant and channels must be >= 1")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if not 0 <= self.intensity_drift < 1 or not 0 <= self.tempo_drift < 1:
            raise ValueError("intensity_drift and tempo_drift must lie in [0, 1)")


def _recording_rng(seed: int, pid: int, class_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, pid, class_index, stream])


def synth_recording(cfg: SynthConfig, pid: int, class_index: int) -> np.ndarray:
    """One continuous ``[channels, N]`` recording for a participant and class."""
    n = cfg.window.width + (cfg.windows_per_participant - 1) * cfg.window.stride
    t = np.arange(n) / cfg.sample_rate_hz
    # class-specific channel gains shared by all participants
    gains = 0.5 + _recording_rng(cfg.seed, 0, class_index, 1).random(cfg.channels)
    rng = _recording_rng(cfg.seed, pid + 1, class_index, 2)
    f0 = cfg.fundamentals_hz[class_index] * (1 + cfg.freq_jitter * rng.uniform(-1, 1))
    drift = _recording_rng(cfg.seed, pid + 1, class_index, 4)
    mod_f, mod_phase = drift.uniform(0.02, 0.06, 2), drift.uniform(0, 2 * np.pi, 2)
    envelope = 1 + cfg.intensity_drift * np.sin(2 * np.pi * mod_f[0] * t + mod_phase[0])
    inst_f = f0 * (1 + cfg.tempo_drift * np.sin(2 * np.pi * mod_f[1] * t + mod_phase[1]))
    base_phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(inst_f[:-1])]) / cfg.sample_rate_hz
    out = np.zeros((cfg.channels, n))
    for c in range(cfg.channels):
        for h, amp in enumerate(cfg.harmonics[class_index], start=1):
            jitter = 1 + cfg.amplitude_jitter * rng.uniform(-1, 1)
            phase = rng.uniform(0, 2 * np.pi)
            out[c] += gains[c] * amp * jitter * np.sin(h * base_phase + phase)
    out *= cfg.amplitude * envelope
    noise = _recording_rng(cfg.seed, pid + 1, class_index, 3).standard_normal(out.shape)
    return out + cfg.noise_level * noise


def synth_recordings(cfg: SynthConfig) -> dict[int, list[tuple[str, np.ndarray]]]:
    """Per participant, one ``(label_name, signal)`` recording per class."""
    return {
        pid: [(name, synth_recording(cfg, pid, ci)) for ci, name in enumerate(cfg.class_names)]
        for pid in range(1, cfg.participants + 1)
    }


def windows_from_recordings(recordings: dict[int, list[tuple[str, np.ndarray]]],
                            labels: Sequence[ActivityLabel], channels: int,
                            cfg: SlidingWindowConfig = SlidingWindowConfig(),
                            sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
                            meta: str = "") -> Dataset:
    """Window each same-label recording segment; windows never cross label runs."""
    by_name = {lab.name: lab for lab in labels}
    out = []
    for pid in sorted(recordings):
        counters: dict[str, int] = {}
        for name, signal in recordings[pid]:
            if name not in by_name:
                raise ValueError(f"label {name!r} not in configured label set")
            if signal.shape[1] < cfg.width:
                continue
            for w in slide_windows(signal, cfg, sample_rate_hz):
                idx = counters.get(name, 0)
                counters[name] = idx + 1
                out.append(LabeledWindow(w, by_name[name], ParticipantId(pid), idx))
    return Dataset(tuple(out), channels, tuple(labels), meta)


def synth_activity_dataset(cfg: SynthConfig = SynthConfig()) -> Dataset:
    labels = make_labels(cfg.class_names)
    return windows_from_recordings(
        synth_recordings(cfg), labels, cfg.channels, cfg.window, cfg.sample_rate_hz,
        meta=f"synthetic seed={cfg.seed} participants={cfg.participants}")


# ---------------------------------------------------------------------------
# CSV ingestion: one file per participant, columns t, ch0..chN, label
# ---------------------------------------------------------------------------

def write_participant_csv(path: str | Path, segments: Sequence[tuple[str, np.ndarray]],
                          sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> None:
    channels = segments[0][1].shape[0]
    period = 1.0 / sample_rate_hz
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *[f"ch{c}" for c in range(channels)], "label"])
        n = 0
        for name, signal in segments:
            for j in range(signal.shape[1]):
                writer.writerow([f"{n * period:.6f}", *[repr(float(v)) for v in signal[:, j]], name])
                n += 1


def read_participant_csv(path: str | Path,
                         sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
                         ) -> list[tuple[str, np.ndarray]]:
    """Read one participant file into contiguous same-label segments."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[0] != "t" or header[-1] != "label" or len(header) < 3:
            raise ValueError(f"{path}: header must be t, ch0..chN, label; got {header}")
        rows = [r for r in reader if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two samples")
    t = np.array([float(r[0]) for r in rows])
    values = np.array([[float(v) for v in r[1:-1]] for r in rows]).T
    labels = [r[-1].strip() for r in rows]
    period = float(np.median(np.diff(t)))
    expected = 1.0 / sample_rate_hz
    if abs(period - expected) > SAMPLE_PERIOD_TOLERANCE * expected:
        raise ValueError(
            f"{path}: sample period {period * 1000:.3f} ms differs from "
            f"{expected * 1000:.3f} ms by more than 1%")
    return [(name, values[:, a:b]) for name, a, b in label_runs(labels)]


def load_csv_dataset(directory: str | Path, label_names: Sequence[str],
                     cfg: SlidingWindowConfig = SlidingWindowConfig(),
                     sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> Dataset:
    """Load ``participant_<id>.csv`` files from ``directory``."""
    directory = Path(directory)
    files = sorted(directory.glob("participant_*.csv"))
    if not files:
        raise FileNotFoundError(f"no participant_*.csv files in {directory}")
    recordings = {}
    channels = None
    for f in files:
        pid = int(f.stem.split("_", 1)[1])
        segments = read_participant_csv(f, sample_rate_hz)
        # labels outside the configured set are ignored
        segments = [(name, sig) for name, sig in segments if name in label_names]
        recordings[pid] = segments
        for _, sig in segments:
            if channels is None:
                channels = sig.shape[0]
            elif sig.shape[0] != channels:
                raise ValueError(f"{f}: inconsistent channel count")
    if channels is None:
        raise ValueError(f"no segments with labels {list(label_names)} in {directory}")
    return windows_from_recordings(recordings, make_labels(label_names), channels, cfg,
                                   sample_rate_hz, meta=f"csv {directory}")
