"""Agreement metrics between predicted scores and mean human ratings.

SRCC uses average ranks for ties; KTAU is tau-b.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import Dataset, group_scores_by_pair, mean_pair_score
from .errors import DataError, UndefinedCorrelationError

_KTAU_CHUNK = 1024


def _vectors(preds, targets, min_len=1):
    a = np.asarray(preds, dtype=np.float64).reshape(-1)
    b = np.asarray(targets, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < min_len:
        raise UndefinedCorrelationError(f"need at least {min_len} points, got {a.size}")
    return a, b


def mse(preds, targets) -> float:
    a, b = _vectors(preds, targets, min_len=0)
    if a.size == 0:
        raise ValueError("mse of empty inputs")
    return float(np.mean((a - b) ** 2))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_a[1:] != sorted_a[:-1]])
    ends = np.r_[starts[1:], a.size]
    run_rank = 0.5 * (starts + ends - 1) + 1.0
    ranks = np.empty(a.size, dtype=np.float64)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def lcc(preds, targets) -> float:
    a, b = _vectors(preds, targets, min_len=2)
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = float(a @ a), float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelationError("correlation undefined: an input has zero variance")
    r = float(a @ b) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


def srcc(preds, targets) -> float:
    a, b = _vectors(preds, targets, min_len=2)
    return lcc(average_ranks(a), average_ranks(b))


def _tie_pairs(x: np.ndarray) -> int:
    _, counts = np.unique(x, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def ktau(preds, targets) -> float:
    """Kendall tau-b by enumerating all pairs (row-chunked to bound memory)."""
    a, b = _vectors(preds, targets, min_len=2)
    n = a.size
    s = 0
    for lo in range(0, n, _KTAU_CHUNK):
        hi = min(n, lo + _KTAU_CHUNK)
        da = np.sign(a[lo:hi, None] - a[None, :])
        db = np.sign(b[lo:hi, None] - b[None, :])
        prod = (da * db).astype(np.int64)
        # keep only j > i
        cols = np.arange(n)[None, :]
        rows = np.arange(lo, hi)[:, None]
        s += int(prod[cols > rows].sum())
    n0 = n * (n - 1) // 2
    denom = (n0 - _tie_pairs(a)) * (n0 - _tie_pairs(b))
    if denom == 0:
        raise UndefinedCorrelationError("tau-b undefined: all values tied in one input")
    return s / math.sqrt(denom)


@dataclass
class MetricReport:
    srcc: float | None
    lcc: float | None
    ktau: float | None
    mse: float
    n: int
    errors: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"srcc": self.srcc, "lcc": self.lcc, "ktau": self.ktau, "mse": self.mse, "n": self.n}
        if self.errors:
            out["errors"] = dict(self.errors)
        return out


def mean_targets(dataset: Dataset) -> dict[str, float]:
    return {pid: mean_pair_score(s) for pid, s in group_scores_by_pair(dataset).items()}


def evaluate(preds: Mapping[str, float], dataset: Dataset) -> MetricReport:
    """Compare predictions with the all-listener mean rating of every pair in ``dataset``."""
    targets = mean_targets(dataset)
    missing = [pid for pid in targets if pid not in preds]
    if missing:
        raise DataError(f"no prediction for {len(missing)} pair(s), e.g. {missing[0]!r}")
    pair_ids = sorted(targets)
    p = np.array([preds[pid] for pid in pair_ids], dtype=np.float64)
    t = np.array([targets[pid] for pid in pair_ids], dtype=np.float64)
    values, errors = {}, {}
    for name, fn in (("srcc", srcc), ("lcc", lcc), ("ktau", ktau)):
        try:
            values[name] = fn(p, t)
        except UndefinedCorrelationError as exc:
            values[name] = None
            errors[name] = str(exc)
    return MetricReport(mse=mse(p, t), n=len(pair_ids), errors=errors, **values)
