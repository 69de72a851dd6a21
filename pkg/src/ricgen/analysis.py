"""Feature engineering: mutual-information ranking, efficiency of compaction
and kernel density estimation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .data import DataError, Dataset


@dataclass
class MiEstimate:
    feature: str
    mi_nats: float
    k: int


@dataclass
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def efficiency_of_compaction(qc_ini, qc_post) -> np.ndarray:
    """Percent change in cone resistance per depth: negative values mark
    strength reduction (punching)."""
    qc_ini = np.asarray(qc_ini, dtype=np.float64)
    qc_post = np.asarray(qc_post, dtype=np.float64)
    if qc_ini.shape != qc_post.shape:
        raise DataError(f"profile shapes differ: {qc_ini.shape} vs {qc_post.shape}")
    if np.any(qc_ini <= 0):
        raise DataError("qc_ini must be positive at every depth")
    return (qc_post - qc_ini) / qc_ini * 100.0


def _maybe_jitter(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Discrete-valued columns (e.g. blows levels) break nearest-neighbor
    distances with ties; add uniform jitter of 1e-6 * range."""
    span = np.ptp(x)
    span = span if span > 0 else 1.0
    if np.unique(x).size < max(25, x.size // 100):
        scale = 1e-6 * span
    else:
        # exact duplicates still need a tie-break for the kNN distances
        scale = 1e-10 * span
    return x + rng.uniform(-scale, scale, size=x.shape)


def mutual_info(x, y, k: int = 3, jitter_seed: int = 0) -> MiEstimate:
    """Nearest-neighbor (Kraskov) MI estimate in nats for a continuous pair,
    clamped at zero. Inputs are standardized, which makes the estimate
    invariant to affine rescaling of either variable."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DataError(f"sample counts differ: {x.size} vs {y.size}")
    n = x.size
    if n < 10:
        raise DataError(f"need at least 10 samples, got {n}")
    if not 1 <= k < n:
        raise DataError(f"neighbor count k={k} out of range for n={n}")
    rng = np.random.default_rng(jitter_seed)
    x = _maybe_jitter(x, rng)
    y = _maybe_jitter(y, rng)
    xs = (x - x.mean()) / max(x.std(), 1e-12)
    ys = (y - y.mean()) / max(y.std(), 1e-12)

    z = np.column_stack([xs, ys])
    dist, _ = cKDTree(z).query(z, k=k + 1, p=np.inf)
    eps = dist[:, k]

    def marginal_counts(v):
        order = np.sort(v)
        hi = np.searchsorted(order, v + eps, side="left")
        lo = np.searchsorted(order, v - eps, side="right")
        return hi - lo - 1   # exclude the point itself

    nx = marginal_counts(xs)
    ny = marginal_counts(ys)
    mi = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return MiEstimate(feature="", mi_nats=max(0.0, float(mi)), k=k)


FEATURE_NAMES = ("qc_ini", "fine_content", "fill_thickness", "blows")


def rank_features(dataset: Dataset, k: int = 3, jitter_seed: int = 0) -> list[MiEstimate]:
    """MI of each input feature against qc_post over pooled (sample, depth)
    rows, sorted descending."""
    if not dataset.has_targets():
        raise DataError("targets required: some samples lack qc_post")
    n = len(dataset)
    if n == 0:
        raise DataError("empty dataset")
    y = np.concatenate([s.qc_post for s in dataset.samples])
    columns = {
        "qc_ini": np.concatenate([s.qc_ini for s in dataset.samples]),
        "fine_content": np.repeat([s.features.fine_content for s in dataset.samples], 28),
        "fill_thickness": np.repeat([s.features.fill_thickness for s in dataset.samples], 28),
        "blows": np.repeat([s.features.blows for s in dataset.samples], 28),
    }
    estimates = []
    for name in FEATURE_NAMES:
        est = mutual_info(columns[name], y, k=k, jitter_seed=jitter_seed)
        est.feature = name
        estimates.append(est)
    return sorted(estimates, key=lambda e: -e.mi_nats)


def scott_bandwidth(values: np.ndarray) -> float:
    sigma = np.std(values, ddof=1)
    if sigma <= 0:
        raise DataError("cannot pick a bandwidth for constant data; supply one")
    return float(sigma * values.size ** (-0.2))


def kde(values, bandwidth: float | None = None, grid=None,
        grid_points: int = 512) -> KdeCurve:
    """Gaussian-kernel density estimate. Default bandwidth is Scott's rule;
    the default grid spans the data range plus six bandwidths each side so
    the curve carries essentially unit mass."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise DataError(f"kde needs at least 2 values, got {values.size}")
    if bandwidth is None:
        bandwidth = scott_bandwidth(values)
    elif bandwidth <= 0:
        raise DataError("bandwidth must be positive")
    if grid is None:
        lo = values.min() - 6.0 * bandwidth
        hi = values.max() + 6.0 * bandwidth
        grid = np.linspace(lo, hi, grid_points)
    else:
        grid = np.asarray(grid, dtype=np.float64)
    u = (grid[:, None] - values[None, :]) / bandwidth
    density = np.exp(-0.5 * u * u).sum(axis=1) / (values.size * bandwidth * np.sqrt(2 * np.pi))
    return KdeCurve(grid=grid, density=density, bandwidth=float(bandwidth))
