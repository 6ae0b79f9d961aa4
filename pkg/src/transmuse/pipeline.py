"""Five-stage transfer pipeline and the transfer-evaluation harness.

1. cluster edge nodes on per-service statistics (K-means, silhouette-chosen k);
2. pick a reference node (highest volume) per node cluster;
3. cluster services per node with WK-means and vote a global pattern;
4. train one forecaster per service cluster at the nodes a scheme needs;
5. score every requested scheme on every node's test split, in MB.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .clustering import (
    Partition,
    choose_k_silhouette,
    node_features,
    select_control,
    select_reference,
    vote_global_pattern,
)
from .data import NormStats, denormalize, load_csv, normalize, scale_values, split, window_arrays
from .exceptions import StageError, ValidationError
from .metrics import DistanceKind, mae, rmse
from .synth import GenConfig, generate
from .tmtpn import TmtpnConfig, TmtpnModel, forecast, save_checkpoint, train

log = logging.getLogger(__name__)

SCHEMES = ("original", "transmuse", "ctrl_exp")


@dataclass(frozen=True)
class ExperimentConfig:
    csv_path: str | None = None
    synth: GenConfig | None = None
    T: int = 30
    F: int = 5
    stride: int = 1
    fractions: tuple = (0.8, 0.1, 0.1)
    service_k_range: tuple = (2, 5)
    node_k_range: tuple = (2, 4)
    service_k: int | None = None
    node_k: int | None = None
    wkmeans_max_iter: int = 100
    distance: str = "wasserstein"
    kmeans_restarts: int = 10
    model: dict = field(default_factory=dict)
    schemes: tuple = ("original", "transmuse", "ctrl_exp")
    output_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.T < 1 or self.F < 1 or self.stride < 1:
            raise ValidationError("T, F and stride must be >= 1")
        for name in ("service_k_range", "node_k_range"):
            lo, hi = getattr(self, name)
            if lo < 2 or hi < lo:
                raise ValidationError(f"{name} must be an inclusive range lo..hi with 2 <= lo <= hi")
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown or not self.schemes:
            raise ValidationError(f"schemes must be a non-empty subset of {SCHEMES}, got {self.schemes}")
        DistanceKind.parse(self.distance)
        if self.csv_path is None and self.synth is None:
            raise ValidationError("either a CSV path or a synthetic generator config is required")
        object.__setattr__(self, "fractions", tuple(self.fractions))
        object.__setattr__(self, "schemes", tuple(s for s in SCHEMES if s in self.schemes))

    def model_config(self, K, seed):
        params = {k: v for k, v in self.model.items() if k not in ("K", "T", "F", "seed")}
        return TmtpnConfig(K=K, T=self.T, F=self.F, seed=seed, **params)

    def to_dict(self):
        d = asdict(self)
        d["synth"] = self.synth.to_dict() if self.synth is not None else None
        d["fractions"] = list(self.fractions)
        d["service_k_range"] = list(self.service_k_range)
        d["node_k_range"] = list(self.node_k_range)
        d["schemes"] = list(self.schemes)
        d.pop("output_dir")
        return d


def load_datasets(config):
    if config.csv_path is not None:
        return load_csv(config.csv_path)
    datasets, _ = generate(config.synth)
    return datasets


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0] >> 1)


# --- per-node preparation -------------------------------------------------


@dataclass(frozen=True)
class PreparedNode:
    dataset: object
    train: object
    val: object
    test: object
    stats: NormStats

    @property
    def node_id(self):
        return self.dataset.node_id


def prepare(dataset, fractions):
    train_raw, val_raw, test_raw = split(dataset, fractions)
    _, stats = normalize(train_raw)
    return PreparedNode(dataset, train_raw, val_raw, test_raw, stats)


def _windows(raw, stats, services, T, F, stride):
    scaled = scale_values(raw.values, stats, clip=True)[:, services]
    X, Y, _ = window_arrays(scaled, T, F, stride)
    return X, Y


# --- stages 1-3 --------------------------------------------------------------


@dataclass
class NodeClustering:
    node_ids: list
    k: int
    partition: Partition
    silhouette_by_k: dict
    references: dict
    controls: dict

    def cluster_of(self, node_id):
        return self.partition.labels[self.node_ids.index(node_id)]

    def to_dict(self):
        return {
            "k": self.k,
            "node_ids": list(self.node_ids),
            "labels": list(self.partition.labels),
            "silhouette_by_k": {str(k): v for k, v in self.silhouette_by_k.items()},
            "reference_nodes": {str(c): n for c, n in self.references.items()},
            "control_nodes": {str(c): n for c, n in self.controls.items()},
        }


def cluster_nodes(datasets, k_range=(2, 4), *, fixed_k=None, seed=0, restarts=10):
    """Stages 1 and 2: node clusters, plus reference and control node per cluster."""
    ids = [ds.node_id for ds in datasets]
    feats = [node_features(ds) for ds in datasets]
    n = len(datasets)
    if fixed_k is not None:
        ks = [fixed_k]
    else:
        ks = [k for k in range(k_range[0], k_range[1] + 1) if k <= n]
    if n < 2 or not ks:
        partition, scores, k = Partition([0] * n), {}, 1
    else:
        if fixed_k is not None and not 2 <= fixed_k <= n:
            raise ValidationError(f"node_k={fixed_k} must lie in [2, {n}]")
        k, scores, parts = choose_k_silhouette(feats, ks, clusterer="kmeans", seed=seed, restarts=restarts)
        partition = parts[k]
    references, controls = {}, {}
    for c, members in enumerate(partition.groups()):
        group = [datasets[i] for i in members]
        references[c] = select_reference(group)
        controls[c] = select_control(group)
    return NodeClustering(ids, partition.n_clusters, partition, scores, references, controls)


@dataclass
class ServiceClustering:
    k: int
    partition: Partition
    silhouette_by_k: dict
    per_node: dict

    def to_dict(self):
        return {
            "k": self.k,
            "labels": list(self.partition.labels),
            "silhouette_by_k": {str(k): v for k, v in self.silhouette_by_k.items()},
            "per_node": {
                nid: {
                    "k": r["k"],
                    "labels": list(r["partition"].labels),
                    "silhouette_by_k": {str(k): v for k, v in r["scores"].items()},
                }
                for nid, r in self.per_node.items()
            },
        }


def cluster_services(series_by_node, volumes, k_range=(2, 5), *, fixed_k=None, max_iter=100,
                     distance="wasserstein"):
    """Stage 3: WK-means at every node, then the most frequent pattern wins.

    ``series_by_node`` maps node id to a ``(length, K)`` raw-volume array.
    """
    per_node = {}
    for nid, values in series_by_node.items():
        services = list(np.asarray(values).T)
        K = len(services)
        ks = [fixed_k] if fixed_k is not None else [k for k in range(k_range[0], k_range[1] + 1) if k <= K]
        if K < 2 or not ks:
            per_node[nid] = {"k": 1, "partition": Partition([0] * K), "scores": {}}
            continue
        k, scores, parts = choose_k_silhouette(services, ks, dist=distance, clusterer="wkmeans", max_iter=max_iter)
        per_node[nid] = {"k": k, "partition": parts[k], "scores": scores}
    ids = list(per_node)
    winner = vote_global_pattern([per_node[n]["partition"] for n in ids], [volumes[n] for n in ids])
    all_k = sorted({k for r in per_node.values() for k in r["scores"]})
    mean_scores = {
        k: float(np.mean([r["scores"][k] for r in per_node.values() if k in r["scores"]])) for k in all_k
    }
    return ServiceClustering(winner.n_clusters, winner, mean_scores, per_node)


# --- stage 4 -----------------------------------------------------------------


def train_node_models(node, service_partition, config, *, save_dir=None):
    """One forecaster per service cluster, trained on ``node``'s training split.

    The seed of cluster ``c``'s model depends only on ``(config.seed, c)``, so
    models for the same cluster at different nodes differ only by their data.
    """
    models, logs = {}, {}
    for c, services in enumerate(service_partition.groups()):
        X, Y = _windows(node.train, node.stats, services, config.T, config.F, config.stride)
        Xv, Yv = _windows(node.val, node.stats, services, config.T, config.F, config.stride)
        cfg = config.model_config(len(services), derive_seed(config.seed, c))
        model, train_log = train(TmtpnModel(cfg), (X, Y), (Xv, Yv))
        models[c] = model
        logs[c] = train_log
        if save_dir is not None:
            out = Path(save_dir) / node.node_id
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, out / f"cluster{c}.tmse")
    return models, logs


# --- stage 5 -----------------------------------------------------------------


def _predictor(model):
    if isinstance(model, TmtpnModel):
        return lambda X: forecast(model, X)
    if hasattr(model, "predict"):
        return model.predict
    return model


def evaluate_scheme(models, service_partition, node, T, F, stride=1):
    """MAE and RMSE in MB of ``models`` on ``node``'s test split.

    ``models`` maps service-cluster index to a ``TmtpnModel``, an estimator
    with ``predict`` or a callable taking normalized ``(n, T, k)`` windows.
    Forecasts are reassembled to all K services and denormalized with the
    node's own training-split statistics.
    """
    groups = service_partition.groups()
    missing = [c for c in range(len(groups)) if c not in models]
    if missing:
        raise ValidationError(f"no model for service clusters {missing}")
    scaled = scale_values(node.test.values, node.stats, clip=True)
    X, Y, _ = window_arrays(scaled, T, F, stride)
    pred = np.empty_like(Y)
    for c, services in enumerate(groups):
        pred[..., services] = np.asarray(_predictor(models[c])(X[..., services]), dtype=np.float64)
    truth_mb = denormalize(Y, node.stats)
    pred_mb = denormalize(pred, node.stats)
    return mae(truth_mb, pred_mb), rmse(truth_mb, pred_mb)


# --- report --------------------------------------------------------------------


@dataclass
class TransferReport:
    rows: list
    node_clustering: NodeClustering
    service_clustering: ServiceClustering
    model_sources: dict
    config: dict
    timing: dict = field(default_factory=dict)

    def lookup(self, node_id, scheme):
        for r in self.rows:
            if r["node"] == node_id and r["scheme"] == scheme:
                return r
        raise KeyError((node_id, scheme))

    def recipients(self, scheme=None):
        """Nodes that run models trained elsewhere.

        With ``scheme`` given, that scheme's recipients; otherwise the nodes
        that are recipients under every transfer scheme in the report, so a
        cross-scheme comparison never pits a node's own model against a
        foreign one.
        """
        schemes = [scheme] if scheme else [s for s in self.model_sources if s != "original"]
        return [
            n for n in self.node_clustering.node_ids
            if all(self.model_sources[s][n] != n for s in schemes)
        ]

    def to_dict(self, include_timing=True):
        d = {
            "config": self.config,
            "node_clusters": self.node_clustering.to_dict(),
            "service_clusters": self.service_clustering.to_dict(),
            "model_sources": self.model_sources,
            "results": self.rows,
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(self.to_json(), encoding="utf-8")
        write_report_csv(self.rows, out_dir / "report.csv")
        return out_dir


def write_report_csv(rows, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("node", "scheme", "mae_mb", "rmse_mb"))
        for r in rows:
            writer.writerow((r["node"], r["scheme"], repr(r["mae_mb"]), repr(r["rmse_mb"])))


class _Stage:
    def __init__(self, name, timing):
        self.name = name
        self.timing = timing

    def __enter__(self):
        self.start = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timing[self.name] = time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def model_sources(node_clustering, schemes):
    """For each scheme, which node's models each node uses."""
    sources = {}
    for scheme in schemes:
        per_node = {}
        for nid in node_clustering.node_ids:
            c = node_clustering.cluster_of(nid)
            if scheme == "original":
                per_node[nid] = nid
            elif scheme == "transmuse":
                per_node[nid] = node_clustering.references[c]
            else:
                per_node[nid] = node_clustering.controls[c]
        sources[scheme] = per_node
    return sources


def run_pipeline(config, datasets=None):
    """Run all five stages and return a ``TransferReport``.

    When ``config.output_dir`` is set, checkpoints go to ``models/`` under it
    and ``report.json`` / ``report.csv`` are written only after every stage
    succeeded.
    """
    timing = {}
    out_dir = Path(config.output_dir) if config.output_dir else None
    with torch.random.fork_rng(devices=[]):
        with _Stage("load", timing):
            if datasets is None:
                datasets = load_datasets(config)
            if not datasets:
                raise ValidationError("no node datasets")
            prepared = {ds.node_id: prepare(ds, config.fractions) for ds in datasets}

        with _Stage("node_clustering", timing):
            nodes = cluster_nodes(
                datasets, config.node_k_range, fixed_k=config.node_k, seed=config.seed,
                restarts=config.kmeans_restarts,
            )

        with _Stage("service_clustering", timing):
            services = cluster_services(
                {nid: p.train.values for nid, p in prepared.items()},
                {nid: p.dataset.total_volume() for nid, p in prepared.items()},
                config.service_k_range, fixed_k=config.service_k, max_iter=config.wkmeans_max_iter,
                distance=config.distance,
            )

        sources = model_sources(nodes, config.schemes)
        with _Stage("training", timing):
            needed = sorted({src for per_node in sources.values() for src in per_node.values()})
            models = {}
            save_dir = out_dir / "models" if out_dir else None
            for nid in needed:
                models[nid], _ = train_node_models(prepared[nid], services.partition, config, save_dir=save_dir)

        with _Stage("evaluation", timing):
            rows = []
            for nid in nodes.node_ids:
                for scheme in config.schemes:
                    m, r = evaluate_scheme(
                        models[sources[scheme][nid]], services.partition, prepared[nid], config.T, config.F,
                        config.stride,
                    )
                    rows.append({"node": nid, "scheme": scheme, "mae_mb": m, "rmse_mb": r})

    report = TransferReport(rows, nodes, services, sources, config.to_dict(), timing)
    if out_dir is not None:
        report.write(out_dir)
    return report
