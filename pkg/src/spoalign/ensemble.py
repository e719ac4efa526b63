"""Prediction and unweighted ensembling of trained heads.

Member scores are averaged on the raw 10x-cosine scale.  The mean is computed
exactly (rational sum, one final rounding), so the result does not depend on
member order and k copies of one model reproduce it bit for bit.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .data import Dataset, EmbeddingTable
from .errors import DataError
from .head import score_batch
from .training import SETTINGS, TrainedModel, load_model

Pairs = Union[Dataset, Mapping[str, tuple[str, str]]]


def _pair_table(pairs: Pairs) -> dict[str, tuple[str, str]]:
    if isinstance(pairs, Dataset):
        return {pid: pairs.pair_members(pid) for pid in pairs.pair_ids}
    return {pid: tuple(pairs[pid]) for pid in sorted(pairs)}


def predict(model: TrainedModel, embeddings: EmbeddingTable, pairs: Pairs) -> dict[str, float]:
    """Raw score of every pair; ``pairs`` maps pair_id -> (text_id, audio_id) or is a Dataset."""
    table = _pair_table(pairs)
    if model.head.dim != embeddings.dim:
        raise DataError(f"model dim {model.head.dim} != embedding dim {embeddings.dim}")
    ids = list(table)
    if not ids:
        return {}
    audio = embeddings.matrix(table[p][1] for p in ids)
    text = embeddings.matrix(table[p][0] for p in ids)
    scores = score_batch(model.head, audio, text)
    return {pid: float(s) for pid, s in zip(ids, scores)}


def exact_mean(values: Sequence[float]) -> float:
    return float(sum(map(Fraction, values), Fraction(0)) / len(values))


def ensemble_predict(
    models: Sequence[TrainedModel], embeddings: EmbeddingTable, pairs: Pairs
) -> dict[str, float]:
    if not models:
        raise ValueError("ensemble needs at least one model")
    dims = {m.head.dim for m in models}
    if len(dims) != 1:
        raise DataError(f"ensemble members disagree on dim: {sorted(dims)}")
    member_preds = [predict(m, embeddings, pairs) for m in models]
    if len(models) == 1:
        return member_preds[0]
    return {pid: exact_mean([mp[pid] for mp in member_preds]) for pid in member_preds[0]}


@dataclass(frozen=True)
class EnsembleMember:
    path: str
    setting: str
    warmup: bool
    seed: int

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting label {self.setting!r}")

    @property
    def key(self) -> tuple[str, bool, int]:
        return (self.setting, self.warmup, self.seed)


@dataclass
class EnsembleSpec:
    members: list[EnsembleMember]

    @classmethod
    def from_json(cls, obj: dict, base_dir=None) -> "EnsembleSpec":
        base = Path(base_dir) if base_dir is not None else None
        members = []
        for m in obj["members"]:
            path = Path(m["path"])
            if base is not None and not path.is_absolute():
                path = base / path
            members.append(EnsembleMember(str(path), m["setting"], bool(m["warmup"]), int(m["seed"])))
        return cls(members)

    def to_json(self) -> dict:
        return {
            "members": [
                {"path": m.path, "setting": m.setting, "warmup": m.warmup, "seed": m.seed}
                for m in self.members
            ]
        }


def load_spec(path) -> EnsembleSpec:
    path = Path(path)
    return EnsembleSpec.from_json(json.loads(path.read_text(encoding="utf-8")), path.parent)


FULL_GRID_SIZE = len(SETTINGS) * 2 * 3


@dataclass
class ModelSet:
    members: list[EnsembleMember]
    models: list[TrainedModel]

    @property
    def composition(self) -> dict[str, int]:
        counts = Counter(m.setting for m in self.members)
        return {s: counts[s] for s in sorted(counts)}


def build_challenge_ensemble(
    spec: EnsembleSpec, subset: bool = False, exclude_settings: Sequence[str] = ()
) -> ModelSet:
    """Load and check ensemble members.

    Without ``subset`` the spec must be the full 3 settings x 2 warm-up x 3 seed
    grid.  ``exclude_settings`` drops members by label (implies ``subset``).
    """
    if not spec.members:
        raise ValueError("ensemble spec has no members")
    members = [m for m in spec.members if m.setting not in set(exclude_settings)]
    if exclude_settings:
        subset = True
    if not members:
        raise ValueError("no members left after exclusions")
    seen = {}
    for m in members:
        if m.key in seen:
            raise DataError(f"duplicate ensemble member {m.key}: {seen[m.key]} and {m.path}")
        seen[m.key] = m.path
    if not subset:
        per_setting = Counter(m.setting for m in members)
        if len(members) != FULL_GRID_SIZE or any(per_setting[s] != 6 for s in SETTINGS):
            raise DataError(
                f"full ensemble needs {FULL_GRID_SIZE} members (6 per setting), got "
                f"{dict(per_setting)}; pass subset=True for ablations"
            )
    models = []
    for m in members:
        if not Path(m.path).exists():
            raise DataError(f"ensemble member file not found: {m.path}")
        model = load_model(m.path)
        declared = (SETTINGS[m.setting], m.warmup, m.seed)
        actual = ((model.config.screening, model.config.contrastive), model.config.warmup, model.config.seed)
        if declared != actual:
            raise DataError(f"member {m.path} does not match its declared setting/warmup/seed")
        models.append(model)
    return ModelSet(members, models)
