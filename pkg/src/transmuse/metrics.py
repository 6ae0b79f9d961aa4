"""Distance kernels, forecast error metrics and silhouette scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

VALUE_DISTRIBUTION = "value-distribution"
TEMPORAL_MASS = "temporal-mass"


@dataclass(frozen=True)
class DistanceKind:
    """Which distance to use: ``wasserstein`` (with order and mode),
    ``euclidean`` or ``cosine``."""

    name: str = "wasserstein"
    p: int = 1
    mode: str = VALUE_DISTRIBUTION

    def __post_init__(self):
        if self.name not in ("wasserstein", "euclidean", "cosine"):
            raise ValidationError(f"unknown distance {self.name!r}")
        if self.name == "wasserstein":
            if self.p not in (1, 2):
                raise ValidationError(f"wasserstein order p must be 1 or 2, got {self.p}")
            if self.mode not in (VALUE_DISTRIBUTION, TEMPORAL_MASS):
                raise ValidationError(f"unknown wasserstein mode {self.mode!r}")

    @classmethod
    def parse(cls, spec):
        """Build from short names: ``wasserstein``, ``wasserstein2``,
        ``wasserstein-temporal``, ``euclidean``, ``cosine``."""
        if isinstance(spec, cls):
            return spec
        s = str(spec).lower()
        if s in ("euclidean", "euc"):
            return cls("euclidean")
        if s in ("cosine", "cos"):
            return cls("cosine")
        if s.startswith("wasserstein") or s.startswith("wass"):
            p = 2 if "2" in s else 1
            mode = TEMPORAL_MASS if "temporal" in s else VALUE_DISTRIBUTION
            return cls("wasserstein", p, mode)
        raise ValidationError(f"unknown distance {spec!r}")

    def __call__(self, x, y):
        if self.name == "euclidean":
            return euclidean_dist(x, y)
        if self.name == "cosine":
            return cosine_dist(x, y)
        return wasserstein_1d(x, y, p=self.p, mode=self.mode)


def _as_1d(x, name):
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValidationError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _weighted_quantile_distance(xs, wx, ys, wy, p):
    # Exact integral of |F^-1(u) - G^-1(u)|^p over u in [0, 1] for discrete
    # measures with sorted supports xs, ys and weights summing to 1.
    cx = np.cumsum(wx)
    cy = np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    breaks = np.union1d(cx, cy)
    du = np.diff(np.concatenate(([0.0], breaks)))
    mids = breaks - du / 2
    ix = np.minimum(np.searchsorted(cx, mids, side="right"), xs.size - 1)
    iy = np.minimum(np.searchsorted(cy, mids, side="right"), ys.size - 1)
    return float(np.sum(du * np.abs(xs[ix] - ys[iy]) ** p))


def wasserstein_1d(x, y, p=1, mode=VALUE_DISTRIBUTION):
    """Order-``p`` Wasserstein distance between two 1-D series.

    In value-distribution mode each series is the empirical distribution of
    its values (uniform weights). For equal lengths this is the sorted
    matching; unequal lengths integrate the quantile functions on a grid of
    ``len(x) * len(y)`` equal cells, which is exact.

    In temporal-mass mode series are normalized to unit mass placed at their
    time indices and compared with ground metric ``|t - t'|``.
    """
    if p < 1:
        raise ValidationError(f"order p must be >= 1, got {p}")
    x = _as_1d(x, "x")
    y = _as_1d(y, "y")
    if mode == VALUE_DISTRIBUTION:
        xs = np.sort(x)
        ys = np.sort(y)
        if xs.size == ys.size:
            cost = np.mean(np.abs(xs - ys) ** p)
        else:
            nx, ny = xs.size, ys.size
            grid = (np.arange(nx * ny) + 0.5) / (nx * ny)
            cost = np.mean(np.abs(xs[(grid * nx).astype(np.int64)] - ys[(grid * ny).astype(np.int64)]) ** p)
        return float(cost ** (1.0 / p))
    if mode == TEMPORAL_MASS:
        if np.any(x < 0) or np.any(y < 0):
            raise ValidationError("temporal-mass mode needs non-negative series")
        sx, sy = x.sum(), y.sum()
        if sx == 0 or sy == 0:
            raise ValidationError("temporal-mass mode needs series with positive total mass")
        cost = _weighted_quantile_distance(
            np.arange(x.size, dtype=np.float64), x / sx, np.arange(y.size, dtype=np.float64), y / sy, p
        )
        return float(cost ** (1.0 / p))
    raise ValidationError(f"unknown wasserstein mode {mode!r}")


def euclidean_dist(x, y):
    x = _as_1d(x, "x")
    y = _as_1d(y, "y")
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    return float(np.sqrt(np.sum((x - y) ** 2)))


def cosine_dist(x, y):
    x = _as_1d(x, "x")
    y = _as_1d(y, "y")
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValidationError("cosine distance is undefined for a zero vector")
    sim = float(np.dot(x, y) / (nx * ny))
    return float(min(2.0, max(0.0, 1.0 - sim)))


def _check_pair(truth, pred):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValidationError(f"shape mismatch: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValidationError("empty input")
    return truth, pred


def mae(truth, pred):
    truth, pred = _check_pair(truth, pred)
    return float(np.mean(np.abs(truth - pred)))


def rmse(truth, pred):
    truth, pred = _check_pair(truth, pred)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def pairwise_distances(items, dist):
    """Symmetric distance matrix of ``items`` under ``dist``."""
    dist = DistanceKind.parse(dist)
    items = [np.asarray(it, dtype=np.float64) for it in items]
    n = len(items)
    D = np.zeros((n, n))
    if dist.name == "wasserstein" and dist.mode == VALUE_DISTRIBUTION and len({it.size for it in items}) == 1:
        # equal lengths: sort once, then every pair is a sorted matching
        S = np.sort(np.stack(items), axis=1)
        for i in range(n):
            D[i] = np.mean(np.abs(S - S[i]) ** dist.p, axis=1) ** (1.0 / dist.p)
        np.fill_diagonal(D, 0.0)
        return np.maximum(D, D.T)
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = dist(items[i], items[j])
    return D


def silhouette_from_distances(D, labels):
    D = np.asarray(D, dtype=np.float64)
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ValidationError("silhouette needs at least 2 clusters")
    n = labels.size
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own == 1:
            continue
        a = D[i, own].sum() / (n_own - 1)
        b = min(D[i, labels == c].mean() for c in clusters if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(np.mean(scores))


def silhouette(items, labels, dist="euclidean"):
    """Mean silhouette coefficient of ``labels`` over ``items``.

    Members of singleton clusters score 0, as do points whose intra- and
    nearest-cluster mean distances are both 0.
    """
    labels = getattr(labels, "labels", labels)
    if len(items) != len(labels):
        raise ValidationError(f"{len(items)} items but {len(labels)} labels")
    return silhouette_from_distances(pairwise_distances(items, dist), labels)
