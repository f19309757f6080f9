"""Vector similarity scores and multi-axis aggregation.

All pairwise helpers take multi-axis items as ``[items, axes, length]``
arrays; a score between two items is the unweighted mean of the per-axis
scores.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import gak
from .spectral import WelchConfig, welch_array


class MetricKind(str, enum.Enum):
    COSINE_PSD = "cosine_psd"
    COSINE_TIME = "cosine_time"
    PEARSON = "pearson"
    RMSE = "rmse"
    COPT_GAK = "copt_gak"

    @property
    def domain(self) -> "Domain":
        return Domain.TIME if self is MetricKind.COSINE_TIME else Domain.PSD

    @property
    def higher_is_better(self) -> bool:
        return self is not MetricKind.RMSE


class Domain(str, enum.Enum):
    TIME = "time"
    PSD = "psd"


@dataclass(frozen=True)
class ScoreMatrix:
    scores: np.ndarray
    metric: MetricKind
    domain: Domain


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def cosine(x, y) -> float:
    x, y = _pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("undefined cosine: zero-magnitude vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 2:
        raise ValueError("pearson needs at least two samples")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise ValueError("undefined correlation: constant vector")
    return float(np.clip(xc @ yc / (sx * sy), -1.0, 1.0))


def rmse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


_SCALAR = {
    MetricKind.COSINE_PSD: cosine,
    MetricKind.COSINE_TIME: cosine,
    MetricKind.PEARSON: pearson,
    MetricKind.RMSE: rmse,
}


def multi_axis_score(a, b, metric: MetricKind, sigma: float | None = None) -> float:
    """Mean of per-axis scores between two multi-axis items."""
    if len(a) != len(b):
        raise ValueError(f"axis-count mismatch: {len(a)} vs {len(b)}")
    if metric is MetricKind.COPT_GAK:
        if sigma is None:
            raise ValueError("C-Opt GAK needs a calibrated sigma")
        params = gak.GakParams(sigma)
        return float(np.mean([gak.gak_normalized(x, y, params) for x, y in zip(a, b)]))
    fn = _SCALAR[metric]
    return float(np.mean([fn(x, y) for x, y in zip(a, b)]))


# ---------------------------------------------------------------------------
# vectorized pairwise scoring
# ---------------------------------------------------------------------------

def _prepare(A, B) -> tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim == 2:
        A = A[:, None, :]
    if B.ndim == 2:
        B = B[:, None, :]
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("score matrix needs non-empty inputs")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"axis-count mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def degenerate_items(X: np.ndarray, metric: MetricKind) -> np.ndarray:
    """Boolean mask of items for which ``metric`` is undefined on some axis."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    if metric in (MetricKind.COSINE_PSD, MetricKind.COSINE_TIME):
        return np.any(np.linalg.norm(X, axis=2) == 0, axis=1)
    if metric is MetricKind.PEARSON:
        return np.any(np.ptp(X, axis=2) == 0, axis=1)
    return np.zeros(X.shape[0], dtype=bool)


def pairwise_scores(A, B, metric: MetricKind, sigma: float | None = None) -> np.ndarray:
    """``[na, nb]`` matrix of axis-averaged scores."""
    A, B = _prepare(A, B)
    for name, X in (("A", A), ("B", B)):
        bad = np.flatnonzero(degenerate_items(X, metric))
        if bad.size:
            raise ValueError(f"{metric.value} undefined for {name}[{bad[0]}] (degenerate vector)")
    if metric is MetricKind.COPT_GAK:
        if sigma is None:
            raise ValueError("C-Opt GAK needs a calibrated sigma")
        return gak.normalized_gak_matrix(A, B, sigma)
    if metric is MetricKind.RMSE:
        if A.shape[2] != B.shape[2]:
            raise ValueError("length mismatch")
        diff = A[:, None] - B[None]
        return np.sqrt(np.mean(diff ** 2, axis=3)).mean(axis=2)
    if metric is MetricKind.PEARSON:
        A = A - A.mean(axis=2, keepdims=True)
        B = B - B.mean(axis=2, keepdims=True)
    An = A / np.linalg.norm(A, axis=2, keepdims=True)
    Bn = B / np.linalg.norm(B, axis=2, keepdims=True)
    per_axis = np.einsum("iak,jak->ija", An, Bn)
    return np.clip(per_axis, -1.0, 1.0).mean(axis=2)


def score_matrix(A, B, metric: MetricKind, sigma: float | None = None) -> ScoreMatrix:
    return ScoreMatrix(pairwise_scores(A, B, metric, sigma), metric, metric.domain)


def metric_items(windows: np.ndarray, metric: MetricKind,
                 welch: WelchConfig = WelchConfig(), sample_rate_hz: float = 50.0) -> np.ndarray:
    """Turn ``[n, channels, timesteps]`` windows into the metric's working items."""
    windows = np.asarray(windows, dtype=np.float64)
    if metric.domain is Domain.TIME:
        return windows
    return welch_array(windows, welch, sample_rate_hz)
