"""STFT / inverse STFT with a Hanning window, and Welch PSD estimation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signal_core import DEFAULT_SAMPLE_RATE_HZ, TimeWindow


def hanning(n: int) -> np.ndarray:
    """Symmetric Hann window, ``w[k] = 0.5 * (1 - cos(2 pi k / (n - 1)))``."""
    if n < 1:
        raise ValueError(f"window length must be >= 1, got {n}")
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def _as_array(x) -> tuple[np.ndarray, float]:
    if isinstance(x, TimeWindow):
        return x.data, x.sample_rate_hz
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr, DEFAULT_SAMPLE_RATE_HZ


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StftConfig:
    window_size: int = 22
    overlap: int = 20
    window_fn: Literal["hanning"] = "hanning"

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if not 0 <= self.overlap < self.window_size:
            raise ValueError("overlap must satisfy 0 <= overlap < window_size")
        if self.window_fn != "hanning":
            raise ValueError(f"unsupported window function {self.window_fn!r}")

    @property
    def hop(self) -> int:
        return self.window_size - self.overlap

    @property
    def freq_bins(self) -> int:
        return self.window_size // 2 + 1

    def window(self) -> np.ndarray:
        return hanning(self.window_size)

    def num_frames(self, n: int) -> int:
        return (n - self.window_size) // self.hop + 1


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray  # complex [channels, freq_bins, num_frames]
    cfg: StftConfig
    original_len: int
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        if frames.ndim != 3 or frames.shape[1] != self.cfg.freq_bins:
            raise ValueError(
                f"frames must be [channels, {self.cfg.freq_bins}, num_frames], got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[2]


def stft_array(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """STFT over the last axis of ``x`` -> ``[..., freq_bins, num_frames]``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < cfg.window_size:
        raise ValueError(f"window longer than signal: {cfg.window_size} > {n}")
    segs = sliding_window_view(x, cfg.window_size, axis=-1)[..., ::cfg.hop, :]
    spec = np.fft.rfft(segs * cfg.window(), axis=-1)
    return np.swapaxes(spec, -1, -2)


def stft(x, cfg: StftConfig = StftConfig()) -> Spectrogram:
    data, fs = _as_array(x)
    return Spectrogram(stft_array(data, cfg), cfg, data.shape[-1], fs)


def _synthesis_norm(cfg: StftConfig, num_frames: int, original_len: int) -> np.ndarray:
    """Summed squared window per output sample, with unrecoverable edges set to inf."""
    w = cfg.window()
    covered = (num_frames - 1) * cfg.hop + cfg.window_size
    if original_len > covered:
        raise ValueError(
            f"original_len {original_len} exceeds the {covered} samples covered by the frames")
    energy = np.zeros(covered)
    for f in range(num_frames):
        energy[f * cfg.hop:f * cfg.hop + cfg.window_size] += w * w
    nz = np.flatnonzero(w)
    lead, trail = nz[0], cfg.window_size - 1 - nz[-1]
    zero = np.flatnonzero(energy <= 0)
    # zero taps at the window ends leave the first/last samples unrecoverable;
    # any other zero-energy position means the frames do not tile the signal
    interior = zero[(zero >= lead) & (zero < covered - trail)]
    if interior.size:
        raise ValueError(f"COLA violation: zero window energy at samples {interior[:5].tolist()}")
    energy[zero] = np.inf
    return energy[:original_len]


def istft_array(spec: np.ndarray, cfg: StftConfig, original_len: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft_array` over the last two axes."""
    spec = np.asarray(spec)
    num_frames = spec.shape[-1]
    norm = _synthesis_norm(cfg, num_frames, original_len)
    frames = np.fft.irfft(np.swapaxes(spec, -1, -2), n=cfg.window_size, axis=-1)
    frames = frames * cfg.window()
    covered = (num_frames - 1) * cfg.hop + cfg.window_size
    out = np.zeros(spec.shape[:-2] + (covered,))
    for f in range(num_frames):
        out[..., f * cfg.hop:f * cfg.hop + cfg.window_size] += frames[..., f, :]
    return out[..., :original_len] / norm


def istft(s: Spectrogram) -> TimeWindow:
    return TimeWindow(istft_array(s.frames, s.cfg, s.original_len), s.sample_rate_hz)


# ---------------------------------------------------------------------------
# Welch PSD
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WelchConfig:
    """Welch segmentation. ``overlap=None`` means half the segment length.

    ``scaling="periodogram"`` divides by the segment length only;
    ``scaling="density"`` divides by ``fs * sum(w**2)`` so that the
    integral over frequency equals the mean signal power. With
    ``clamp=False`` a segment longer than the signal is an error instead of
    being shortened to the signal length.
    """

    segment_len: int = 64
    overlap: int | None = None
    window_fn: Literal["hanning"] = "hanning"
    scaling: Literal["periodogram", "density"] = "periodogram"
    clamp: bool = True

    def __post_init__(self):
        if self.segment_len < 1:
            raise ValueError("segment_len must be >= 1")
        if self.overlap is not None and not 0 <= self.overlap < self.segment_len:
            raise ValueError("overlap must satisfy 0 <= overlap < segment_len")
        if self.scaling not in ("periodogram", "density"):
            raise ValueError(f"unknown scaling {self.scaling!r}")

    def resolved(self, n: int) -> tuple[int, int]:
        """Segment length clamped to ``n`` and the matching overlap."""
        m = min(self.segment_len, n)
        if self.overlap is None:
            return m, m // 2
        return m, min(self.overlap, m - 1)


@dataclass(frozen=True)
class PsdVector:
    power: np.ndarray
    freq_axis: np.ndarray


def psd_freqs(m: int, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> np.ndarray:
    return np.fft.rfftfreq(m, d=1.0 / sample_rate_hz)


def welch_array(x: np.ndarray, cfg: WelchConfig = WelchConfig(),
                sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> np.ndarray:
    """One-sided Welch PSD over the last axis of ``x`` -> ``[..., m // 2 + 1]``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if cfg.segment_len > n and not cfg.clamp:
        raise ValueError(f"segment_len {cfg.segment_len} > timesteps {n}")
    m, overlap = cfg.resolved(n)
    step = m - overlap
    w = hanning(m)
    segs = sliding_window_view(x, m, axis=-1)[..., ::step, :]
    spec = np.fft.rfft(segs * w, axis=-1)
    power = (spec.real ** 2 + spec.imag ** 2).mean(axis=-2)
    if cfg.scaling == "density":
        power = power / (sample_rate_hz * np.sum(w * w))
    else:
        power = power / m
    stop = power.shape[-1] - 1 if m % 2 == 0 else power.shape[-1]
    power[..., 1:stop] *= 2.0
    return power


def welch_psd(x, cfg: WelchConfig = WelchConfig()) -> list[PsdVector]:
    """Per-channel Welch PSD of a window.

    The segment length is clamped to the window length; see :class:`WelchConfig`.
    """
    data, fs = _as_array(x)
    m, _ = cfg.resolved(data.shape[-1])
    power = welch_array(data, cfg, fs)
    freqs = psd_freqs(m, fs)
    return [PsdVector(p, freqs) for p in power]
