"""TOML experiment configuration.

Layout::

    seed = 0
    run_dir = "runs/demo"          # relative paths resolve against the config file

    [data]
    csv = "traffic.csv"            # or a [data.synth] table
    fractions = [0.8, 0.1, 0.1]

    [data.synth]                   # GenConfig fields; seed defaults to the top-level seed
    num_nodes = 8
    noise_std = 0.05               # applied to every default service profile

    [pipeline]                     # T, F, stride, ranges, fixed k, schemes, ...
    [model]                        # TmtpnConfig hyperparameters

``TRANSMUSE_SEED`` in the environment overrides ``seed``; command-line
overrides (``section.key=value``) win over both.
"""
from __future__ import annotations

import dataclasses
import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import ValidationError
from .pipeline import ExperimentConfig
from .synth import GenConfig, ServiceProfile, default_profiles
from .tmtpn import TmtpnConfig

SEED_ENV = "TRANSMUSE_SEED"

_PIPELINE_KEYS = {
    "T", "F", "stride", "service_k_range", "node_k_range", "service_k", "node_k", "wkmeans_max_iter",
    "distance", "kmeans_restarts", "schemes",
}
_MODEL_KEYS = {f.name for f in dataclasses.fields(TmtpnConfig)} - {"K", "T", "F", "seed"}
_PROFILE_SHORTCUTS = {"noise_std", "diurnal_amplitude", "weekly_dip"}


class ConfigError(ValidationError):
    pass


class ConfigNotFoundError(ConfigError, FileNotFoundError):
    pass


def parse_value(text):
    """Parse a TOML scalar or array; bare words stay strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw, assignment):
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-table value")
    node[parts[-1]] = parse_value(value.strip())
    return raw


def read_raw(path, overrides=(), seed=None, run_dir=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFoundError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            raw["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env_seed!r} is not an integer") from None
    for assignment in overrides:
        apply_override(raw, assignment)
    if seed is not None:
        raw["seed"] = int(seed)
    if run_dir is not None:
        raw["run_dir"] = str(run_dir)
    raw["_base_dir"] = str(path.resolve().parent)
    return raw


def _resolve(base_dir, p):
    p = Path(p)
    return p if p.is_absolute() else Path(base_dir) / p


def synth_config(raw):
    data = raw.get("data", {})
    synth = data.get("synth")
    if synth is None:
        return None
    synth = dict(synth)
    synth.setdefault("seed", int(raw.get("seed", 0)))
    shortcuts = {k: synth.pop(k) for k in list(synth) if k in _PROFILE_SHORTCUTS}
    magnitude_ratio = synth.pop("magnitude_ratio", None)
    profiles = synth.pop("service_profiles", None)
    if profiles is not None:
        profiles = tuple(ServiceProfile(**p) for p in profiles)
    elif shortcuts or magnitude_ratio is not None:
        n = int(synth.get("num_services", 20))
        kw = {} if magnitude_ratio is None else {"magnitude_ratio": float(magnitude_ratio)}
        profiles = tuple(dataclasses.replace(p, **shortcuts) for p in default_profiles(n, **kw))
    known = {f.name for f in dataclasses.fields(GenConfig)}
    unknown = set(synth) - known
    if unknown:
        raise ConfigError(f"unknown [data.synth] keys: {sorted(unknown)}")
    return GenConfig(service_profiles=profiles, **synth)


def run_dir(raw):
    return _resolve(raw["_base_dir"], raw.get("run_dir", "run"))


def experiment_config(raw):
    data = raw.get("data", {})
    pipeline = dict(raw.get("pipeline", {}))
    model = dict(raw.get("model", {}))
    bad = set(pipeline) - _PIPELINE_KEYS
    if bad:
        raise ConfigError(f"unknown [pipeline] keys: {sorted(bad)}")
    bad = set(model) - _MODEL_KEYS
    if bad:
        raise ConfigError(f"unknown [model] keys: {sorted(bad)}")
    csv_path = data.get("csv")
    synth = None if csv_path is not None else synth_config(raw)
    for key in ("service_k_range", "node_k_range", "schemes"):
        if key in pipeline:
            pipeline[key] = tuple(pipeline[key])
    return ExperimentConfig(
        csv_path=str(_resolve(raw["_base_dir"], csv_path)) if csv_path is not None else None,
        synth=synth,
        fractions=tuple(data.get("fractions", (0.8, 0.1, 0.1))),
        model=model,
        output_dir=str(run_dir(raw)),
        seed=int(raw.get("seed", 0)),
        **pipeline,
    )


def load_config(path, overrides=(), seed=None, run_dir=None):
    return experiment_config(read_raw(path, overrides, seed, run_dir))
