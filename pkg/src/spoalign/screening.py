"""Listener screening.

A rating x on a pair is an NG score when no *other* rating of that pair falls
in the closed interval [x - tau, x + tau].  Listeners whose share of NG
scores is strictly greater than ``rate_threshold`` are dropped entirely.
Pairs rated by a single listener carry no flag and do not count toward any
listener's rate.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .data import Dataset

FlagKey = tuple[str, str]  # (pair_id, listener_id)


@dataclass(frozen=True)
class ScreeningConfig:
    tau: float = 5.0
    rate_threshold: float = 0.2

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 <= self.rate_threshold <= 1.0:
            raise ValueError(f"rate_threshold must be in [0, 1], got {self.rate_threshold}")


@dataclass
class ScreeningReport:
    ng_flags: dict[FlagKey, bool]
    listener_ng_rate: dict[str, float]
    excluded_listeners: set[str]
    records_before: int
    records_after: int
    config: ScreeningConfig | None = None

    def to_json(self) -> dict:
        out = {
            "records_before": self.records_before,
            "records_after": self.records_after,
            "excluded_listeners": sorted(self.excluded_listeners),
            "listener_ng_rate": dict(sorted(self.listener_ng_rate.items())),
            "ng_flags": [
                {"pair_id": p, "listener_id": l, "ng": flag}
                for (p, l), flag in sorted(self.ng_flags.items())
            ],
        }
        if self.config is not None:
            out["tau"] = self.config.tau
            out["rate_threshold"] = self.config.rate_threshold
        return out


def flag_ng_scores(dataset: Dataset, tau: float) -> dict[FlagKey, bool]:
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    by_pair: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for rec in dataset.records:
        by_pair[rec.pair_id].append((rec.listener_id, rec.score))

    flags: dict[FlagKey, bool] = {}
    for pair_id in sorted(by_pair):
        items = sorted(by_pair[pair_id])
        if len(items) < 2:
            continue
        for i, (listener, x) in enumerate(items):
            has_peer = any(
                abs(y - x) <= tau for j, (_, y) in enumerate(items) if j != i
            )
            flags[(pair_id, listener)] = not has_peer
    return flags


def listener_ng_rates(flags: dict[FlagKey, bool], dataset: Dataset) -> dict[str, float]:
    flagged: dict[str, int] = defaultdict(int)
    eligible: dict[str, int] = defaultdict(int)
    for (_, listener), ng in flags.items():
        eligible[listener] += 1
        flagged[listener] += int(ng)
    return {
        lid: (flagged[lid] / eligible[lid] if eligible[lid] else 0.0)
        for lid in dataset.listener_ids
    }


def screen(dataset: Dataset, config: ScreeningConfig) -> tuple[Dataset, ScreeningReport]:
    flags = flag_ng_scores(dataset, config.tau)
    rates = listener_ng_rates(flags, dataset)
    excluded = {lid for lid, rate in rates.items() if rate > config.rate_threshold}
    kept = dataset.filter(lambda r: r.listener_id not in excluded) if excluded else dataset
    report = ScreeningReport(
        ng_flags=flags,
        listener_ng_rate=rates,
        excluded_listeners=excluded,
        records_before=len(dataset),
        records_after=len(kept),
        config=config,
    )
    return kept, report
