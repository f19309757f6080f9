"""Global alignment kernel with a class-calibrated bandwidth.

The kernel sums, over every monotone alignment path between two sequences,
the product of local kernels along the path. It is computed by a log-domain
dynamic program; :func:`brute_force_gak` enumerates the paths explicitly and
serves as an oracle for short sequences.

Local kernel between two scalars, with ``t = |x - y| / (2 sigma**2)``::

    kappa = exp(-t) / (2 - exp(-t))

``kappa`` lies in ``(0, 1]`` and equals 1 only for ``x == y``. Passing
``literal_sign=True`` evaluates the cost with the opposite sign of ``t``,
which gives per-element factors ``2 exp(t) - 1 >= 1``; it exists only for
comparison.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

SIGMA_FLOOR = 1e-12
ORACLE_MAX_LEN = 8
DEFAULT_STD_RANGE = (0.09, 0.12)


@dataclass(frozen=True)
class GakParams:
    sigma: float
    literal_sign: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be a positive finite number, got {self.sigma}")


def log_local_kernel(x, y, sigma: float, literal_sign: bool = False) -> np.ndarray:
    """Elementwise ``log kappa(x, y)`` with broadcasting."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t = np.abs(x - y) / (2.0 * sigma * sigma)
    if literal_sign:
        # log(2 e^t - 1) = t + log(2 - e^-t)
        return t + np.log(2.0 - np.exp(-t))
    # log(e^-t / (2 - e^-t)) = -t - log1p(1 - e^-t)
    return -t - np.log1p(-np.expm1(-t))


def local_kernel(xi: float, yj: float, sigma: float, literal_sign: bool = False) -> float:
    if not (np.isfinite(xi) and np.isfinite(yj)):
        raise ValueError("local kernel inputs must be finite")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return float(np.exp(log_local_kernel(xi, yj, sigma, literal_sign)))


def _check_sequence(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("sequence contains non-finite values")
    return x


def log_gak_batch(X: np.ndarray, Y: np.ndarray, sigma: float,
                  literal_sign: bool = False) -> np.ndarray:
    """``log k(X[b], Y[b])`` for a batch of equal-length pairs.

    ``X`` is ``[B, n]`` and ``Y`` is ``[B, m]``. The recursion
    ``M(i, j) = kappa(i, j) * (M(i-1, j) + M(i, j-1) + M(i-1, j-1))`` is
    swept along anti-diagonals so each step is vectorized over the batch
    and the diagonal.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    B, n = X.shape
    m = Y.shape[1]
    if n == 0 or m == 0:
        raise ValueError("empty sequence")
    log_k = log_local_kernel(X[:, :, None], Y[:, None, :], sigma, literal_sign)
    log_m = np.full((B, n + 1, m + 1), -np.inf)
    log_m[:, 0, 0] = 0.0
    for d in range(2, n + m + 1):
        i = np.arange(max(1, d - m), min(n, d - 1) + 1)
        j = d - i
        acc = np.logaddexp(np.logaddexp(log_m[:, i - 1, j], log_m[:, i, j - 1]),
                           log_m[:, i - 1, j - 1])
        log_m[:, i, j] = log_k[:, i - 1, j - 1] + acc
    return log_m[:, n, m]


def gak_kernel(x, y, params: GakParams) -> float:
    """``log k(x, y)`` for two scalar sequences."""
    x, y = _check_sequence(x), _check_sequence(y)
    return float(log_gak_batch(x[None], y[None], params.sigma, params.literal_sign)[0])


def enumerate_alignments(n: int, m: int) -> Iterator[tuple[tuple[int, int], ...]]:
    """All monotone paths from ``(0, 0)`` to ``(n-1, m-1)`` with unit steps."""
    def walk(i, j, path):
        if (i, j) == (n - 1, m - 1):
            yield tuple(path)
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                path.append((a, b))
                yield from walk(a, b, path)
                path.pop()
    yield from walk(0, 0, [(0, 0)])


def brute_force_gak(x, y, params: GakParams) -> float:
    """Linear-domain kernel by explicit path enumeration (``n, m <= 8``)."""
    x, y = _check_sequence(x), _check_sequence(y)
    if x.size > ORACLE_MAX_LEN or y.size > ORACLE_MAX_LEN:
        raise ValueError(f"oracle limit: sequences longer than {ORACLE_MAX_LEN}")
    kappa = np.exp(log_local_kernel(x[:, None], y[None, :], params.sigma, params.literal_sign))
    total = 0.0
    for path in enumerate_alignments(x.size, y.size):
        prod = 1.0
        for i, j in path:
            prod *= kappa[i, j]
        total += prod
    return total


def gak_normalized(x, y, params: GakParams) -> float:
    x, y = _check_sequence(x), _check_sequence(y)
    kxy = gak_kernel(x, y, params)
    kxx = gak_kernel(x, x, params)
    kyy = gak_kernel(y, y, params)
    return float(np.clip(np.exp(kxy - 0.5 * (kxx + kyy)), 0.0, 1.0))


def normalized_gak_matrix(A: np.ndarray, B: np.ndarray, sigma: float,
                          literal_sign: bool = False, chunk: int = 4096) -> np.ndarray:
    """Axis-averaged normalized kernel between multi-axis items.

    ``A`` is ``[na, axes, n]`` and ``B`` is ``[nb, axes, m]``; returns ``[na, nb]``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 3 or B.ndim != 3 or A.shape[1] != B.shape[1]:
        raise ValueError(f"expected [items, axes, length] inputs, got {A.shape} and {B.shape}")
    na, axes, n = A.shape
    nb = B.shape[0]

    def batched(X, Y):
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], chunk):
            out[s:s + chunk] = log_gak_batch(X[s:s + chunk], Y[s:s + chunk], sigma, literal_sign)
        return out

    self_a = batched(A.reshape(-1, n), A.reshape(-1, n)).reshape(na, axes)
    self_b = batched(B.reshape(-1, B.shape[2]), B.reshape(-1, B.shape[2])).reshape(nb, axes)
    Xa = np.broadcast_to(A[:, None], (na, nb, axes, n)).reshape(-1, n)
    Yb = np.broadcast_to(B[None], (na, nb, axes, B.shape[2])).reshape(-1, B.shape[2])
    cross = batched(Xa, Yb).reshape(na, nb, axes)
    log_theta = cross - 0.5 * (self_a[:, None, :] + self_b[None, :, :])
    return np.clip(np.exp(log_theta), 0.0, 1.0).mean(axis=2)


# ---------------------------------------------------------------------------
# bandwidth calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationGrid:
    sigma_min: float = 0.005
    sigma_max: float = 2.0
    num_points: int = 120
    spacing: Literal["log", "linear"] = "log"

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("grid needs 0 < sigma_min < sigma_max")
        if self.num_points < 2:
            raise ValueError("grid needs at least 2 points")
        if self.spacing not in ("log", "linear"):
            raise ValueError(f"unknown spacing {self.spacing!r}")

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.sigma_min, self.sigma_max, self.num_points)
        return np.linspace(self.sigma_min, self.sigma_max, self.num_points)


@dataclass(frozen=True)
class GakCalibration:
    sigma: float
    mean_score: float
    std_score: float
    target_range: tuple[float, float]
    grid: list[tuple[float, float, float]] = field(default_factory=list)
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "mean": self.mean_score,
            "std": self.std_score,
            "range_lo": self.target_range[0],
            "range_hi": self.target_range[1],
            "fallback": self.fallback,
            "grid": [list(g) for g in self.grid],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "GakCalibration":
        return cls(
            sigma=float(d["sigma"]), mean_score=float(d["mean"]), std_score=float(d["std"]),
            target_range=(float(d["range_lo"]), float(d["range_hi"])),
            grid=[tuple(float(v) for v in g) for g in d.get("grid", [])],
            fallback=bool(d["fallback"]))

    @classmethod
    def from_json(cls, text: str) -> "GakCalibration":
        return cls.from_dict(json.loads(text))


def calibration_scores(train: np.ndarray, val: np.ndarray, sigma: float,
                       statistic: Literal["max", "all"] = "max") -> np.ndarray:
    """Scores whose mean/std drive calibration.

    ``"max"``: for each train item, its best match among validation items.
    ``"all"``: every train/validation pair.
    """
    mat = normalized_gak_matrix(train, val, sigma)
    if statistic == "max":
        return mat.max(axis=1)
    if statistic == "all":
        return mat.ravel()
    raise ValueError(f"unknown calibration statistic {statistic!r}")


def calibrate_sigma(train: np.ndarray, val: np.ndarray,
                    grid: CalibrationGrid = CalibrationGrid(),
                    std_range: tuple[float, float] = DEFAULT_STD_RANGE,
                    statistic: Literal["max", "all"] = "max",
                    range_width: float = 1.0) -> GakCalibration:
    """Pick the bandwidth maximizing the mean score subject to a std band.

    ``train`` and ``val`` are ``[items, axes, length]`` arrays (PSD vectors
    of one class). If no grid point satisfies the band, the point whose std
    is nearest the band midpoint is returned with ``fallback=True``. The
    monitoring target range is ``mean +/- range_width * std`` clipped to
    ``[0, 1]``.
    """
    train = np.asarray(train, dtype=np.float64)
    val = np.asarray(val, dtype=np.float64)
    if train.shape[0] == 0 or val.shape[0] == 0:
        raise ValueError("calibration needs non-empty train and validation sets")
    lo, hi = std_range
    rows = []
    for sigma in grid.values():
        scores = calibration_scores(train, val, float(sigma), statistic)
        rows.append((float(sigma), float(scores.mean()), float(scores.std())))

    feasible = [r for r in rows if lo <= r[2] <= hi]
    fallback = not feasible
    if feasible:
        best_mean = max(r[1] for r in feasible)
        # ties broken toward the smaller sigma; rows are in ascending sigma order
        chosen = next(r for r in feasible if r[1] >= best_mean - 1e-12)
    else:
        mid = 0.5 * (lo + hi)
        chosen = min(rows, key=lambda r: (abs(r[2] - mid), r[0]))
    sigma, mean, std = chosen
    rng = (max(0.0, mean - range_width * std), min(1.0, mean + range_width * std))
    return GakCalibration(sigma, mean, std, rng, rows, fallback)


def median_heuristic_sigma(train: np.ndarray, val: np.ndarray, multiplier: float = 1.0,
                           max_pairs: int = 200_000, seed: int = 0) -> float:
    """Median absolute element difference across train x validation items.

    Pairs are taken on matching axes. When the number of element pairs exceeds
    ``max_pairs`` a seeded random subset is used.
    """
    train = np.asarray(train, dtype=np.float64)
    val = np.asarray(val, dtype=np.float64)
    if train.size == 0 or val.size == 0:
        raise ValueError("median heuristic needs non-empty inputs")
    if train.ndim == 1:
        train = train[None, None]
    if val.ndim == 1:
        val = val[None, None]
    if train.ndim == 2:
        train = train[:, None]
    if val.ndim == 2:
        val = val[:, None]
    axes = train.shape[1]
    # per axis: all values from train items vs all values from val items
    a = np.moveaxis(train, 1, 0).reshape(axes, -1)
    b = np.moveaxis(val, 1, 0).reshape(axes, -1)
    total = axes * a.shape[1] * b.shape[1]
    if total <= max_pairs:
        diffs = np.abs(a[:, :, None] - b[:, None, :]).ravel()
    else:
        rng = np.random.default_rng(seed)
        ax = rng.integers(0, axes, max_pairs)
        diffs = np.abs(a[ax, rng.integers(0, a.shape[1], max_pairs)]
                       - b[ax, rng.integers(0, b.shape[1], max_pairs)])
    sigma = float(np.median(diffs)) * multiplier
    if sigma < SIGMA_FLOOR:
        warnings.warn("median distance is zero; using sigma floor 1e-12", RuntimeWarning,
                      stacklevel=2)
        sigma = SIGMA_FLOOR
    return sigma
