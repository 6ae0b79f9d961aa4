"""Ingestion, normalization, chronological splitting and windowing of
per-minute multi-service traffic.

A node's traffic is held as a ``(length, K)`` array: one row per minute, one
column per service.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ParseError, ValidationError

CSV_HEADER = ("timestamp", "node_id", "service_id", "volume_mb")


@dataclass(frozen=True)
class ServiceSeries:
    service_id: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("service series must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError(f"service {self.service_id}: values must be finite and >= 0")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class NodeDataset:
    """Aligned traffic of all services at one edge node."""

    node_id: str
    values: np.ndarray  # (length, K)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ValidationError(
                f"node {self.node_id}: expected a non-empty (length, K) matrix, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"node {self.node_id}: non-finite volume")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_series(cls, node_id, series):
        series = sorted(series, key=lambda s: s.service_id)
        ids = [s.service_id for s in series]
        if ids != list(range(len(series))):
            raise ValidationError(f"node {node_id}: service ids must be contiguous 0..K-1, got {ids}")
        lengths = {len(s.values) for s in series}
        if len(lengths) != 1:
            raise ValidationError(f"node {node_id}: series lengths differ: {sorted(lengths)}")
        return cls(node_id, np.column_stack([s.values for s in series]))

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def num_services(self):
        return self.values.shape[1]

    @property
    def series(self):
        return [ServiceSeries(k, self.values[:, k]) for k in range(self.num_services)]

    def total_volume(self):
        return float(self.values.sum())

    def select_services(self, service_ids):
        return NodeDataset(self.node_id, self.values[:, list(service_ids)])

    def slice(self, start, stop):
        return NodeDataset(self.node_id, self.values[start:stop])


@dataclass(frozen=True)
class NormStats:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64).reshape(-1)
        maxs = np.asarray(self.maxs, dtype=np.float64).reshape(-1)
        if mins.shape != maxs.shape:
            raise ValidationError("mins and maxs must have the same length")
        if np.any(mins > maxs):
            raise ValidationError("min must not exceed max for any service")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def num_services(self):
        return self.mins.size

    @classmethod
    def from_values(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values.min(axis=0), values.max(axis=0))

    def subset(self, service_ids):
        idx = list(service_ids)
        return NormStats(self.mins[idx], self.maxs[idx])

    def to_dict(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mins"], d["maxs"])


@dataclass(frozen=True)
class WindowSample:
    input: np.ndarray  # (T, K)
    target: np.ndarray  # (F, K)
    origin_index: int = field(default=0)


def _check_coverage(stats, num_services):
    if stats.num_services < num_services:
        raise ValidationError(
            f"normalization stats cover {stats.num_services} services, data has {num_services}"
        )
    if stats.num_services > num_services:
        raise ValidationError(
            f"normalization stats cover {stats.num_services} services, data has only {num_services}"
        )


def scale_values(values, stats, clip=False):
    values = np.asarray(values, dtype=np.float64)
    _check_coverage(stats, values.shape[-1])
    span = stats.maxs - stats.mins
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    out = (values - stats.mins) / safe
    out = np.where(degenerate, 0.0, out)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def unscale_values(values, stats):
    values = np.asarray(values, dtype=np.float64)
    _check_coverage(stats, values.shape[-1])
    return values * (stats.maxs - stats.mins) + stats.mins


def normalize(dataset, stats=None):
    """Min-max scale every service of ``dataset`` into [0, 1].

    Without ``stats`` the per-service range is taken from ``dataset`` itself.
    External stats are applied with clamping, so val/test values outside the
    training range saturate at 0 or 1.
    """
    if stats is None:
        stats = NormStats.from_values(dataset.values)
        scaled = scale_values(dataset.values, stats)
    else:
        scaled = scale_values(dataset.values, stats, clip=True)
    return NodeDataset(dataset.node_id, scaled), stats


def denormalize(data, stats):
    if isinstance(data, NodeDataset):
        return NodeDataset(data.node_id, unscale_values(data.values, stats))
    return unscale_values(data, stats)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-service min-max scaler with clamping on transform.

    Unlike ``sklearn.preprocessing.MinMaxScaler`` a constant service maps to
    all zeros and the inverse of a constant service returns its minimum.
    """

    def __init__(self, clip=True):
        self.clip = clip

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.stats_ = NormStats.from_values(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, dtype=np.float64)
        return scale_values(X, self.stats_, clip=self.clip)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, dtype=np.float64)
        return unscale_values(X, self.stats_)


def split(dataset, fractions=(0.8, 0.1, 0.1)):
    """Contiguous chronological train/val/test split."""
    if len(fractions) != 3:
        raise ValidationError("fractions must be (train, val, test)")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must be positive and sum to 1, got {fractions}")
    n = dataset.length
    n_train = math.floor(n * fractions[0])
    n_val = math.floor(n * fractions[1])
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValidationError(
            f"split of length {n} by {fractions} leaves an empty segment ({n_train}/{n_val}/{n_test})"
        )
    return (
        dataset.slice(0, n_train),
        dataset.slice(n_train, n_train + n_val),
        dataset.slice(n_train + n_val, n),
    )


def window_count(length, T, F, stride=1):
    if length < T + F:
        return 0
    return (length - T - F) // stride + 1


def window_arrays(values, T, F, stride=1):
    """Stack sliding windows of a ``(length, K)`` array.

    Returns ``(X, Y, origins)`` with shapes ``(n, T, K)``, ``(n, F, K)``, ``(n,)``.
    """
    values = np.asarray(values, dtype=np.float64)
    if T < 1 or F < 1 or stride < 1:
        raise ValidationError(f"T, F and stride must be >= 1, got T={T}, F={F}, stride={stride}")
    length = values.shape[0]
    if length < T + F:
        raise ValidationError(f"series of length {length} is too short for T={T} + F={F}")
    origins = np.arange(0, length - T - F + 1, stride)
    steps = np.arange(T + F)
    blocks = values[origins[:, None] + steps[None, :]]
    return blocks[:, :T], blocks[:, T:], origins


def window(dataset, T, F, stride=1):
    X, Y, origins = window_arrays(dataset.values, T, F, stride)
    return [WindowSample(x, y, int(o)) for x, y, o in zip(X, Y, origins)]


def load_csv(path):
    """Read the long-format traffic CSV into one dataset per node.

    Missing (node, service, timestamp) cells are filled with 0.
    """
    path = Path(path)
    cells = {}
    max_t = -1
    max_k = -1
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line=line_no)
            ts, node, svc, vol = (c.strip() for c in row)
            try:
                t = int(ts)
                k = int(svc)
                v = float(vol)
            except ValueError as exc:
                raise ParseError(str(exc), line=line_no) from None
            if not node:
                raise ParseError("empty node_id", line=line_no)
            if t < 0 or k < 0:
                raise ParseError("timestamp and service_id must be >= 0", line=line_no)
            if not math.isfinite(v):
                raise ValidationError(f"line {line_no}: non-finite volume {vol!r}")
            if v < 0:
                raise ValidationError(f"line {line_no}: negative volume {vol!r}")
            key = (node, k, t)
            if key in cells:
                raise ParseError(f"duplicate cell node={node} service={k} timestamp={t}", line=line_no)
            cells[key] = v
            max_t = max(max_t, t)
            max_k = max(max_k, k)
    if not cells:
        raise ParseError("no data rows", line=2)
    nodes = sorted({node for node, _, _ in cells})
    arrays = {node: np.zeros((max_t + 1, max_k + 1)) for node in nodes}
    for (node, k, t), v in cells.items():
        arrays[node][t, k] = v
    return [NodeDataset(node, arrays[node]) for node in nodes]


def write_csv(datasets, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for ds in datasets:
            for t in range(ds.length):
                for k in range(ds.num_services):
                    writer.writerow((t, ds.node_id, k, repr(float(ds.values[t, k]))))
    return path
