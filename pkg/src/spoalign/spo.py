"""Per-listener standardization of raw ratings ("standard preference scores").

Each listener's ratings are z-scored with that listener's own population mean
and standard deviation, so a positive value means "rated above this
listener's personal average".  Global statistics of the raw training ratings
are kept separately; they map model outputs onto the same standardized scale
when computing the loss.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import DegenerateStatsError

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class ListenerStats:
    listener_id: str
    mu: float
    sigma: float
    count: int


@dataclass(frozen=True)
class GlobalStats:
    mu_train: float
    sigma_train: float

    def __post_init__(self):
        if not self.sigma_train > 0:
            raise DegenerateStatsError(f"sigma_train must be positive, got {self.sigma_train}")


class Target(NamedTuple):
    pair_id: str
    listener_id: str
    value: float


@dataclass
class TargetSet:
    """Training targets plus bookkeeping about what had to be dropped."""

    targets: list[Target]
    dropped_records: int = 0
    dropped_listeners: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    def values(self) -> np.ndarray:
        return np.array([t.value for t in self.targets], dtype=np.float64)


def _population_stats(values: np.ndarray) -> tuple[float, float]:
    mu = math.fsum(values) / len(values)
    sigma = math.sqrt(math.fsum((values - mu) ** 2) / len(values))
    return mu, sigma


def compute_listener_stats(dataset: Dataset) -> dict[str, ListenerStats]:
    if len(dataset) == 0:
        raise DegenerateStatsError("cannot compute listener statistics of an empty dataset")
    by_listener: dict[str, list[int]] = defaultdict(list)
    for rec in dataset.records:
        by_listener[rec.listener_id].append(rec.score)
    out = {}
    for lid in sorted(by_listener):
        values = np.array(by_listener[lid], dtype=np.float64)
        mu, sigma = _population_stats(values)
        out[lid] = ListenerStats(lid, mu, sigma, len(values))
    return out


def standardize(score: float, stats: ListenerStats) -> float:
    if stats.sigma < SIGMA_FLOOR:
        raise DegenerateStatsError(
            f"listener {stats.listener_id!r} has sigma={stats.sigma:g}; cannot standardize"
        )
    return (score - stats.mu) / stats.sigma


def compute_global_stats(dataset: Dataset) -> GlobalStats:
    if len(dataset) == 0:
        raise DegenerateStatsError("degenerate global std: empty dataset")
    mu, sigma = _population_stats(dataset.scores())
    if sigma < SIGMA_FLOOR:
        raise DegenerateStatsError(f"degenerate global std: all scores equal {mu:g}")
    return GlobalStats(mu, sigma)


def make_training_targets(dataset: Dataset) -> TargetSet:
    """One standardized target per record; records of constant listeners are dropped."""
    if len(dataset) == 0:
        return TargetSet([])
    stats = compute_listener_stats(dataset)
    degenerate = sorted(lid for lid, s in stats.items() if s.sigma < SIGMA_FLOOR)
    skip = set(degenerate)
    targets = [
        Target(rec.pair_id, rec.listener_id, standardize(rec.score, stats[rec.listener_id]))
        for rec in dataset.records
        if rec.listener_id not in skip
    ]
    dropped = sum(stats[lid].count for lid in degenerate)
    return TargetSet(targets, dropped, degenerate)


def make_raw_targets(dataset: Dataset, global_stats: GlobalStats) -> TargetSet:
    """Raw ratings mapped through the global training normalization (the no-SPO ablation)."""
    return TargetSet(
        [
            Target(
                rec.pair_id,
                rec.listener_id,
                (rec.score - global_stats.mu_train) / global_stats.sigma_train,
            )
            for rec in dataset.records
        ]
    )


def stats_to_json(dataset: Dataset) -> dict:
    listeners = compute_listener_stats(dataset)
    targets = make_training_targets(dataset)
    out = {
        "listeners": {
            lid: {"mu": s.mu, "sigma": s.sigma, "count": s.count} for lid, s in listeners.items()
        },
        "dropped_records": targets.dropped_records,
        "dropped_listeners": targets.dropped_listeners,
    }
    g = compute_global_stats(dataset)
    out["mu_train"] = g.mu_train
    out["sigma_train"] = g.sigma_train
    return out
