"""Service clustering (WK-means), edge-node clustering, global pattern voting
and reference-node selection."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ValidationError
from .metrics import DistanceKind, pairwise_distances, silhouette_from_distances


def canonical_labels(labels):
    """Renumber clusters by order of first occurrence."""
    mapping = {}
    out = []
    for lab in labels:
        lab = lab.item() if hasattr(lab, "item") else lab
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return tuple(out)


@dataclass(frozen=True)
class Partition:
    """Cluster assignment in canonical form; equality ignores label names."""

    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", canonical_labels(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def n_clusters(self):
        return len(set(self.labels))

    def members(self, cluster):
        return [i for i, lab in enumerate(self.labels) if lab == cluster]

    def groups(self):
        return [self.members(c) for c in range(self.n_clusters)]


# --- WK-means -------------------------------------------------------------


def _medoid_from_distances(D, members):
    members = np.asarray(members)
    totals = D[np.ix_(members, members)].sum(axis=1)
    return int(members[int(np.argmin(totals))])


def wd_medoid(cluster_members, dist="wasserstein"):
    """Index of the member with the smallest summed distance to the others
    (first one on ties)."""
    if len(cluster_members) == 0:
        raise ValidationError("medoid of an empty cluster")
    D = pairwise_distances(cluster_members, dist)
    return int(np.argmin(D.sum(axis=1)))


def _segment_init(means, n_clusters):
    order = np.argsort(means, kind="stable")
    S = order.size
    seg = S // n_clusters
    labels = np.empty(S, dtype=np.int64)
    centers = []
    for c in range(n_clusters):
        stop = (c + 1) * seg if c < n_clusters - 1 else S
        segment = order[c * seg : stop]
        labels[segment] = c
        centers.append(int(segment[(segment.size - 1) // 2]))
    return labels, centers


class WKMeans(ClusterMixin, BaseEstimator):
    """K-means-style clustering of service series under 1-D Wasserstein distance.

    Services are first sorted by mean volume and cut into ``n_clusters``
    contiguous segments whose middle services seed the centers. Each pass
    assigns every service to its nearest center (lowest center index on ties)
    and moves each center to its cluster's medoid. Iteration stops once a pass
    reproduces both the labels and the centers, or after ``max_iter`` passes.

    ``fit`` takes an ``(n_services, length)`` array or a list of 1-D series.
    """

    def __init__(self, n_clusters=2, max_iter=100, distance="wasserstein"):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.distance = distance

    def fit(self, X, y=None):
        series = [np.asarray(s, dtype=np.float64).reshape(-1) for s in X]
        S = len(series)
        if S == 0:
            raise ValidationError("no series to cluster")
        if self.n_clusters < 1 or self.n_clusters > S:
            raise ValidationError(f"n_clusters={self.n_clusters} must lie in [1, {S}]")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        D = pairwise_distances(series, self.distance)
        means = np.array([s.mean() for s in series])

        labels, centers = _segment_init(means, self.n_clusters)
        self.init_centers_ = list(centers)
        n_iter = 0
        converged = False
        while n_iter < self.max_iter:
            new_labels = np.argmin(D[:, centers], axis=1)
            new_centers = [
                _medoid_from_distances(D, np.flatnonzero(new_labels == c)) if np.any(new_labels == c) else centers[c]
                for c in range(self.n_clusters)
            ]
            n_iter += 1
            converged = np.array_equal(new_labels, labels) and new_centers == centers
            labels, centers = new_labels, new_centers
            if converged:
                break

        self.distances_ = D
        self.raw_labels_ = labels
        self.centers_ = centers
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.partition_ = Partition(labels)
        self.labels_ = np.asarray(self.partition_.labels)
        return self


def wkmeans(series, N, I=100, dist="wasserstein"):
    return WKMeans(n_clusters=N, max_iter=I, distance=dist).fit(series).partition_


# --- edge-node features and K-means ---------------------------------------


@dataclass(frozen=True)
class NodeFeatures:
    node_id: str
    vector: np.ndarray


FEATURE_STATS = ("mean", "std", "max", "min")


def node_features(dataset):
    """Per-service (mean, std, max, min) of raw volume, flattened service by service."""
    v = dataset.values
    if v.size == 0:
        raise ValidationError("empty dataset")
    block = np.stack([v.mean(axis=0), v.std(axis=0), v.max(axis=0), v.min(axis=0)], axis=1)
    return NodeFeatures(dataset.node_id, block.reshape(-1))


def standardize(X):
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    return (X - mu) / sd


def _farthest_point_seeds(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d_min = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        cand = d_min.copy()
        cand[chosen] = -1.0
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        d_min = np.minimum(d_min, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)


def _repair_empty(X, labels, centroids):
    k = centroids.shape[0]
    for j in range(k):
        if np.any(labels == j):
            continue
        own = np.sum((X - centroids[labels]) ** 2, axis=1)
        sizes = np.bincount(labels, minlength=k)
        own[sizes[labels] <= 1] = -1.0
        i = int(np.argmax(own))
        labels[i] = j
        centroids[j] = X[i]
    return labels, centroids


def _lloyd(X, centroids, max_iter):
    labels = None
    history = []
    for _ in range(max_iter):
        new_labels = np.argmin(_sq_dists(X, centroids), axis=1)
        new_labels, centroids = _repair_empty(X, new_labels, centroids)
        centroids = np.stack([X[new_labels == j].mean(axis=0) for j in range(centroids.shape[0])])
        history.append(float(np.sum((X - centroids[new_labels]) ** 2)))
        if labels is not None and np.array_equal(labels, new_labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centroids, history


class NodeKMeans(ClusterMixin, BaseEstimator):
    """Lloyd's K-means with deterministic farthest-point seeding.

    Features are z-scored per dimension before clustering unless
    ``standardize=False``. Each of ``n_init`` restarts draws its first seed
    from a stream derived from ``(random_state, restart)``; the lowest-inertia
    run wins (earliest restart on ties).
    """

    def __init__(self, n_clusters=2, n_init=10, max_iter=300, random_state=0, standardize=True):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state
        self.standardize = standardize

    def _prepare(self, X):
        X = check_array(X, dtype=np.float64)
        if not self.standardize:
            return X
        return (X - self.mean_) / self.scale_

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if not 1 <= self.n_clusters <= n:
            raise ValidationError(f"n_clusters={self.n_clusters} must lie in [1, {n}]")
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd == 0, 1.0, sd)
        Z = self._prepare(X)
        seed = 0 if self.random_state is None else int(self.random_state)
        best = None
        for restart in range(max(1, self.n_init)):
            rng = np.random.default_rng([seed, restart])
            init = _farthest_point_seeds(Z, self.n_clusters, rng)
            labels, centroids, history = _lloyd(Z, init, self.max_iter)
            if best is None or history[-1] < best[2][-1]:
                best = (labels, centroids, history)
        labels, centroids, history = best
        self.cluster_centers_ = centroids
        self.inertia_ = history[-1]
        self.inertia_history_ = history
        self.partition_ = Partition(labels)
        self.labels_ = np.asarray(self.partition_.labels)
        self.raw_labels_ = labels
        return self

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.sqrt(_sq_dists(self._prepare(X), self.cluster_centers_))

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        raw = np.argmin(_sq_dists(self._prepare(X), self.cluster_centers_), axis=1)
        # report in the canonical numbering of labels_
        mapping = {int(r): int(c) for r, c in zip(self.raw_labels_, self.labels_)}
        return np.array([mapping.get(int(r), int(r)) for r in raw])


def _feature_matrix(features):
    rows = [f.vector if isinstance(f, NodeFeatures) else f for f in features]
    return np.asarray(rows, dtype=np.float64)


def kmeans(features, k, restarts=10, seed=0):
    return NodeKMeans(n_clusters=k, n_init=restarts, random_state=seed).fit(_feature_matrix(features)).partition_


# --- model selection --------------------------------------------------------


def choose_k_silhouette(items, k_range, dist=None, clusterer="kmeans", *, seed=0, restarts=10, max_iter=100):
    """Pick the cluster count with the highest silhouette score.

    ``items`` are node feature vectors for ``clusterer="kmeans"`` (scored with
    Euclidean distance on the standardized features) or service series for
    ``"wkmeans"`` (scored with ``dist``, Wasserstein by default). A clustering
    that collapses to a single cluster scores 0. Ties go to the smaller k.

    Returns ``(k, scores, partitions)`` keyed by k.
    """
    ks = list(k_range)
    if not ks:
        raise ValidationError("empty k range")
    n = len(items)
    if min(ks) < 2 or max(ks) > n:
        raise ValidationError(f"k range {ks[0]}..{ks[-1]} must lie within [2, {n}]")
    if clusterer == "kmeans":
        X = _feature_matrix(items)
        D = pairwise_distances(standardize(X), dist or "euclidean")

        def fit(k):
            return NodeKMeans(n_clusters=k, n_init=restarts, random_state=seed).fit(X).partition_

    elif clusterer == "wkmeans":
        series = [np.asarray(s, dtype=np.float64).reshape(-1) for s in items]
        dist = DistanceKind.parse(dist or "wasserstein")
        D = pairwise_distances(series, dist)

        def fit(k):
            return WKMeans(n_clusters=k, max_iter=max_iter, distance=dist).fit(series).partition_

    else:
        raise ValidationError(f"unknown clusterer {clusterer!r}")

    scores = {}
    partitions = {}
    for k in sorted(ks):
        part = fit(k)
        partitions[k] = part
        scores[k] = silhouette_from_distances(D, part.labels) if part.n_clusters >= 2 else 0.0
    best_k = sorted(ks)[0]
    for k in sorted(ks):
        if scores[k] > scores[best_k]:
            best_k = k
    return best_k, scores, partitions


# --- transfer scope ----------------------------------------------------------


def vote_global_pattern(partitions, node_volumes=None):
    """Most frequent canonical partition; ties go to the pattern held by the
    highest-volume node."""
    if not partitions:
        raise ValidationError("no partitions to vote on")
    parts = [p if isinstance(p, Partition) else Partition(p) for p in partitions]
    if len({len(p) for p in parts}) != 1:
        raise ValidationError("partitions cover different item counts")
    if node_volumes is None:
        node_volumes = [0.0] * len(parts)
    if len(node_volumes) != len(parts):
        raise ValidationError("one volume per partition is required")
    counts = Counter(parts)
    top = max(counts.values())
    tied = {p for p, c in counts.items() if c == top}
    if len(tied) == 1:
        return next(iter(tied))
    best = None
    for part, vol in zip(parts, node_volumes):
        if part in tied and (best is None or vol > best[1]):
            best = (part, vol)
    return best[0]


def _rank_by_volume(cluster_members):
    if not cluster_members:
        raise ValidationError("empty node cluster")
    return [(ds.total_volume(), ds.node_id) for ds in cluster_members]


def select_reference(cluster_members):
    """Node id with the largest total traffic; smallest id on ties."""
    ranked = _rank_by_volume(cluster_members)
    top = max(v for v, _ in ranked)
    return min(nid for v, nid in ranked if v == top)


def select_control(cluster_members):
    """Node id with the smallest total traffic; smallest id on ties."""
    ranked = _rank_by_volume(cluster_members)
    low = min(v for v, _ in ranked)
    return min(nid for v, nid in ranked if v == low)
