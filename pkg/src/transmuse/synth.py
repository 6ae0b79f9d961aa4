"""Seeded synthetic multi-node, multi-service traffic with known structure.

Nodes are dealt round-robin into cohorts; cohort ``c`` multiplies every
service's base volume by ``cohort_volume_ratio ** c``. Each node then draws a
single scale factor from ``[1 - jitter, 1 + jitter]``. Per-minute volume of
service ``k`` at step ``t`` is::

    base * scale * (1 + amp * sin(2*pi*t/steps_per_day + phase))
         * (1 - dip * weekend(t)) + N(0, noise_std * base)

floored at zero.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .clustering import Partition
from .data import NodeDataset
from .exceptions import ValidationError


@dataclass(frozen=True)
class ServiceProfile:
    base_volume: float
    diurnal_amplitude: float = 0.5
    weekly_dip: float = 0.05
    noise_std: float = 0.05
    phase: float = 0.0
    family: int = 0


def default_profiles(num_services=20, magnitude_ratio=10.0):
    """Two service families: the first half heavy, the second light and phase-shifted."""
    n_heavy = (num_services + 1) // 2
    profiles = []
    for k in range(num_services):
        heavy = k < n_heavy
        j = k if heavy else k - n_heavy
        profiles.append(
            ServiceProfile(
                base_volume=(100.0 if heavy else 100.0 / magnitude_ratio) * (1.0 + 0.05 * j),
                diurnal_amplitude=0.6 if heavy else 0.3,
                weekly_dip=0.05 if heavy else 0.02,
                noise_std=0.05,
                phase=(0.0 if heavy else np.pi / 2) + 0.1 * j,
                family=0 if heavy else 1,
            )
        )
    return tuple(profiles)


@dataclass(frozen=True)
class GenConfig:
    num_nodes: int = 8
    num_cohorts: int = 2
    num_services: int = 20
    num_days: int = 14
    steps_per_day: int = 1440
    seed: int = 0
    service_profiles: tuple = field(default=None)
    cohort_scale_jitter: float = 0.05
    cohort_volume_ratio: float = 3.0

    def __post_init__(self):
        profiles = self.service_profiles
        if profiles is None:
            profiles = default_profiles(self.num_services)
        profiles = tuple(p if isinstance(p, ServiceProfile) else ServiceProfile(**p) for p in profiles)
        object.__setattr__(self, "service_profiles", profiles)
        self.validate()

    def validate(self):
        for name in ("num_nodes", "num_cohorts", "num_services", "num_days", "steps_per_day"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.num_cohorts > self.num_nodes:
            raise ValidationError("num_cohorts must not exceed num_nodes")
        if len(self.service_profiles) != self.num_services:
            raise ValidationError(
                f"{len(self.service_profiles)} service profiles given for {self.num_services} services"
            )
        if not 0 <= self.cohort_scale_jitter <= 1:
            raise ValidationError("cohort_scale_jitter must lie in [0, 1]")
        if self.cohort_volume_ratio <= 0:
            raise ValidationError("cohort_volume_ratio must be > 0")
        for k, p in enumerate(self.service_profiles):
            if p.base_volume <= 0:
                raise ValidationError(f"service {k}: base_volume must be > 0")
            for name in ("diurnal_amplitude", "weekly_dip", "noise_std"):
                if not 0 <= getattr(p, name) <= 1:
                    raise ValidationError(f"service {k}: {name} must lie in [0, 1]")

    @property
    def length(self):
        return self.num_days * self.steps_per_day

    def to_dict(self):
        d = asdict(self)
        d["service_profiles"] = [asdict(p) for p in self.service_profiles]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("service_profiles") is not None:
            d["service_profiles"] = tuple(ServiceProfile(**p) for p in d["service_profiles"])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    node_cohort: Partition
    service_groups: Partition

    def to_dict(self):
        return {"node_cohort": list(self.node_cohort.labels), "service_groups": list(self.service_groups.labels)}


def node_ids(num_nodes):
    width = max(2, len(str(num_nodes - 1)))
    return [f"node{i:0{width}d}" for i in range(num_nodes)]


def _node_series(config, node_index, cohort):
    rng = np.random.default_rng([config.seed, node_index])
    jitter = config.cohort_scale_jitter
    scale = rng.uniform(1.0 - jitter, 1.0 + jitter) if jitter > 0 else 1.0
    profiles = config.service_profiles
    t = np.arange(config.length, dtype=np.float64)
    weekend = ((t // config.steps_per_day) % 7 >= 5).astype(np.float64)
    cohort_mult = config.cohort_volume_ratio**cohort
    base = np.array([p.base_volume for p in profiles]) * cohort_mult
    amp = np.array([p.diurnal_amplitude for p in profiles])
    dip = np.array([p.weekly_dip for p in profiles])
    phase = np.array([p.phase for p in profiles])
    noise = np.array([p.noise_std for p in profiles])

    angle = 2 * np.pi * t[:, None] / config.steps_per_day + phase[None, :]
    clean = base * scale * (1.0 + amp * np.sin(angle)) * (1.0 - dip * weekend[:, None])
    eps = rng.standard_normal(clean.shape)
    return np.maximum(clean + eps * (noise * base), 0.0)


def generate(config):
    """Return ``(datasets, ground_truth)``; a pure function of ``config``."""
    config.validate()
    ids = node_ids(config.num_nodes)
    cohorts = [i % config.num_cohorts for i in range(config.num_nodes)]
    datasets = [NodeDataset(ids[i], _node_series(config, i, cohorts[i])) for i in range(config.num_nodes)]
    truth = GroundTruth(
        node_cohort=Partition(cohorts),
        service_groups=Partition([p.family for p in config.service_profiles]),
    )
    return datasets, truth
