"""Command-line interface: ``transmuse <subcommand> --config FILE [options]``.

Every subcommand writes under the run directory and exits 0 on success. On
failure a single ``error: <kind>: <message>`` line goes to stderr, with exit
status 2 for usage and configuration-path problems and 1 otherwise.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .clustering import Partition
from .data import load_csv, write_csv
from .exceptions import TransmuseError
from .pipeline import (
    cluster_nodes,
    cluster_services,
    evaluate_scheme,
    load_datasets,
    model_sources,
    prepare,
    run_pipeline,
    train_node_models,
    write_report_csv,
)
from .synth import generate
from .tmtpn import load_checkpoint

log = logging.getLogger("transmuse")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _context(args):
    raw = cfgmod.read_raw(args.config, args.set or (), seed=args.seed, run_dir=args.run_dir)
    return raw, cfgmod.experiment_config(raw), cfgmod.run_dir(raw)


def cmd_gen(args):
    raw, _, run = _context(args)
    synth = cfgmod.synth_config(raw)
    if synth is None:
        raise cfgmod.ConfigError("gen needs a [data.synth] table")
    out = Path(args.out) if args.out else run / "data"
    out.mkdir(parents=True, exist_ok=True)
    datasets, truth = generate(synth)
    write_csv(datasets, out / "traffic.csv")
    _dump(truth.to_dict(), out / "ground_truth.json")
    print(out / "traffic.csv")


def cmd_ingest(args):
    _, exp, run = _context(args)
    datasets = load_datasets(exp)
    summary = {
        "source": exp.csv_path or "synthetic",
        "nodes": [
            {"node_id": d.node_id, "length": d.length, "num_services": d.num_services,
             "total_volume_mb": d.total_volume()}
            for d in datasets
        ],
    }
    print(_dump(summary, run / "ingest.json"))


def _node_stage(exp, datasets):
    return cluster_nodes(datasets, exp.node_k_range, fixed_k=exp.node_k, seed=exp.seed, restarts=exp.kmeans_restarts)


def _service_stage(exp, prepared):
    return cluster_services(
        {nid: p.train.values for nid, p in prepared.items()},
        {nid: p.dataset.total_volume() for nid, p in prepared.items()},
        exp.service_k_range, fixed_k=exp.service_k, max_iter=exp.wkmeans_max_iter, distance=exp.distance,
    )


def cmd_cluster_nodes(args):
    _, exp, run = _context(args)
    nodes = _node_stage(exp, load_datasets(exp))
    print(_dump(nodes.to_dict(), run / "cluster_nodes.json"))


def cmd_cluster_services(args):
    _, exp, run = _context(args)
    datasets = load_datasets(exp)
    prepared = {d.node_id: prepare(d, exp.fractions) for d in datasets}
    nodes = _node_stage(exp, datasets)
    services = _service_stage(exp, prepared)
    out = services.to_dict()
    out["reference_nodes"] = {str(c): n for c, n in nodes.references.items()}
    print(_dump(out, run / "cluster_services.json"))


def cmd_train(args):
    _, exp, run = _context(args)
    datasets = load_datasets(exp)
    prepared = {d.node_id: prepare(d, exp.fractions) for d in datasets}
    nodes = _node_stage(exp, datasets)
    services = _service_stage(exp, prepared)
    if args.nodes == "reference":
        targets = sorted(set(nodes.references.values()))
    elif args.nodes == "all":
        targets = list(nodes.node_ids)
    else:
        sources = model_sources(nodes, exp.schemes)
        targets = sorted({s for per_node in sources.values() for s in per_node.values()})
    summary = {"service_labels": list(services.partition.labels), "models": {}}
    for nid in targets:
        _, logs = train_node_models(prepared[nid], services.partition, exp, save_dir=run / "models")
        _dump({"labels": list(services.partition.labels)}, run / "models" / nid / "services.json")
        summary["models"][nid] = {
            str(c): {"path": f"models/{nid}/cluster{c}.tmse", "best_epoch": lg.best_epoch,
                     "best_val_loss": lg.val_loss[lg.best_epoch]}
            for c, lg in logs.items()
        }
    print(_dump(summary, run / "train.json"))


def cmd_transfer(args):
    _, exp, run = _context(args)
    report = run_pipeline(exp)
    print(run / "report.json")
    log.info("stage timing: %s", report.timing)


def cmd_eval(args):
    _, exp, run = _context(args)
    models_dir = Path(args.models)
    services_file = models_dir / "services.json"
    if not services_file.is_file():
        raise cfgmod.ConfigError(f"missing {services_file}")
    partition = Partition(json.loads(services_file.read_text(encoding="utf-8"))["labels"])
    models = {c: load_checkpoint(models_dir / f"cluster{c}.tmse") for c in range(partition.n_clusters)}
    datasets = {d.node_id: d for d in (load_csv(args.csv) if args.csv else load_datasets(exp))}
    if args.node not in datasets:
        raise cfgmod.ConfigError(f"unknown node {args.node!r}")
    m, r = evaluate_scheme(models, partition, prepare(datasets[args.node], exp.fractions), exp.T, exp.F, exp.stride)
    result = {"node": args.node, "models": str(models_dir), "mae_mb": m, "rmse_mb": r}
    print(_dump(result, run / f"eval_{args.node}.json"))


def cmd_report(args):
    _, _, run = _context(args)
    path = run / "report.json"
    if not path.is_file():
        raise cfgmod.ConfigError(f"no report at {path}; run `transfer` first")
    report = json.loads(path.read_text(encoding="utf-8"))
    rows = report["results"]
    write_report_csv(rows, run / "report.csv")
    print(f"{'node':<12} {'scheme':<10} {'mae_mb':>12} {'rmse_mb':>12}")
    for r in rows:
        print(f"{r['node']:<12} {r['scheme']:<10} {r['mae_mb']:>12.4f} {r['rmse_mb']:>12.4f}")


COMMANDS = {
    "gen": (cmd_gen, "generate synthetic traffic CSV and ground truth"),
    "ingest": (cmd_ingest, "load and validate traffic, write a summary"),
    "cluster-nodes": (cmd_cluster_nodes, "cluster edge nodes and pick reference nodes"),
    "cluster-services": (cmd_cluster_services, "WK-means per node and global pattern vote"),
    "train": (cmd_train, "train per-service-cluster forecasters"),
    "transfer": (cmd_transfer, "run the full pipeline and transfer evaluation"),
    "eval": (cmd_eval, "evaluate a saved model set on one node"),
    "report": (cmd_report, "print and re-export a transfer report"),
}


def build_parser():
    parser = _Parser(prog="transmuse", description="Transferable multi-service traffic forecasting.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--run-dir", help="override run_dir from the config")
        p.add_argument("--seed", type=int, help="override the seed (wins over TRANSMUSE_SEED)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        if name == "gen":
            p.add_argument("--out", help="output directory (default: <run_dir>/data)")
        if name == "train":
            p.add_argument("--nodes", choices=("schemes", "reference", "all"), default="schemes",
                           help="which nodes get models (default: those the configured schemes need)")
        if name == "eval":
            p.add_argument("--models", required=True, help="directory with cluster<c>.tmse and services.json")
            p.add_argument("--node", required=True, help="node id to evaluate on")
            p.add_argument("--csv", help="evaluate on this CSV instead of the configured data")
    return parser


def _fail(kind, message, code):
    print(f"error: {kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command][0](args)
    except cfgmod.ConfigNotFoundError as exc:
        return _fail("config", exc, EXIT_USAGE)
    except (TransmuseError, OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_FAILURE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
