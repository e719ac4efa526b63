"""Score records, datasets and embedding tables, plus their on-disk formats.

Scores are JSONL, one rating per line::

    {"pair_id": "p1", "text_id": "t1", "audio_id": "a1", "listener_id": "L3", "score": 8}

Embeddings are described by a TSV manifest whose first line is ``dim=<N>``,
followed by an ``id<TAB>path`` header and one row per vector.  Each vector
file holds exactly N little-endian float32 values and nothing else.  Paths
are resolved relative to the manifest's directory.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError

SCORE_MIN = 0
SCORE_MAX = 10
_FLOAT32_LE = np.dtype("<f4")


@dataclass(frozen=True)
class ScoreRecord:
    pair_id: str
    text_id: str
    audio_id: str
    listener_id: str
    score: int

    def __post_init__(self):
        for name in ("pair_id", "text_id", "audio_id", "listener_id"):
            if not isinstance(getattr(self, name), str):
                raise DataError(f"{name} must be a string, got {getattr(self, name)!r}")
        if isinstance(self.score, bool) or not isinstance(self.score, (int, np.integer)):
            raise DataError(f"score must be an integer, got {self.score!r}")
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise DataError(f"score out of range [{SCORE_MIN}, {SCORE_MAX}]: {self.score}")
        object.__setattr__(self, "score", int(self.score))

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "text_id": self.text_id,
            "audio_id": self.audio_id,
            "listener_id": self.listener_id,
            "score": self.score,
        }


@dataclass(frozen=True)
class Dataset:
    """An immutable, validated collection of ratings.

    Construction checks that ``(pair_id, listener_id)`` is unique and that a
    pair_id always maps to the same ``(text_id, audio_id)``.
    """

    records: tuple[ScoreRecord, ...]
    split_name: str = ""
    _pairs: Mapping[str, tuple[str, str]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen: set[tuple[str, str]] = set()
        pairs: dict[str, tuple[str, str]] = {}
        for rec in records:
            key = (rec.pair_id, rec.listener_id)
            if key in seen:
                raise DataError(f"duplicate (pair_id, listener_id): {key}")
            seen.add(key)
            ta = (rec.text_id, rec.audio_id)
            prev = pairs.setdefault(rec.pair_id, ta)
            if prev != ta:
                raise DataError(
                    f"pair {rec.pair_id!r} maps to both {prev} and {ta}"
                )
        object.__setattr__(self, "_pairs", pairs)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def pair_ids(self) -> list[str]:
        """Distinct pair ids, sorted."""
        return sorted(self._pairs)

    @property
    def listener_ids(self) -> list[str]:
        return sorted({r.listener_id for r in self.records})

    def pair_members(self, pair_id: str) -> tuple[str, str]:
        """``(text_id, audio_id)`` of a pair."""
        return self._pairs[pair_id]

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records], dtype=np.float64)

    def audios_by_text(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = defaultdict(set)
        for text_id, audio_id in self._pairs.values():
            out[text_id].add(audio_id)
        return dict(out)

    def check_triplets(self, n: int = 3) -> None:
        for text_id, audios in sorted(self.audios_by_text().items()):
            if len(audios) != n:
                raise DataError(
                    f"text {text_id!r} has {len(audios)} audios, expected exactly {n}"
                )

    def filter(self, keep, split_name: str | None = None) -> "Dataset":
        return Dataset(
            tuple(r for r in self.records if keep(r)),
            self.split_name if split_name is None else split_name,
        )


def load_scores(path, strict_triplets: bool = False, split_name: str | None = None) -> Dataset:
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            try:
                records.append(
                    ScoreRecord(
                        pair_id=obj["pair_id"],
                        text_id=obj["text_id"],
                        audio_id=obj["audio_id"],
                        listener_id=obj["listener_id"],
                        score=obj["score"],
                    )
                )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing key {exc.args[0]!r}") from None
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    try:
        dataset = Dataset(tuple(records), path.stem if split_name is None else split_name)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    if strict_triplets:
        dataset.check_triplets(3)
    return dataset


def save_scores(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in dataset.records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def group_scores_by_pair(dataset: Dataset) -> dict[str, list[int]]:
    """Scores per pair, each list ordered by listener_id."""
    groups: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for rec in dataset.records:
        groups[rec.pair_id].append((rec.listener_id, rec.score))
    return {pid: [s for _, s in sorted(items)] for pid, items in sorted(groups.items())}


def mean_pair_score(scores: Iterable[int]) -> float:
    scores = list(scores)
    if not scores:
        raise DataError("cannot average an empty score list")
    return math.fsum(scores) / len(scores)


def split_by_text(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split into (train, val) so that all pairs of a text land on the same side."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    texts = sorted(dataset.audios_by_text())
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(texts))
    n_val = max(1, int(round(val_fraction * len(texts))))
    val_texts = {texts[i] for i in order[:n_val]}
    train = dataset.filter(lambda r: r.text_id not in val_texts, "train")
    val = dataset.filter(lambda r: r.text_id in val_texts, "val")
    return train, val


class EmbeddingTable:
    """Fixed-dimension float vectors keyed by audio or text id."""

    def __init__(self, dim: int, entries: Mapping[str, np.ndarray]):
        if int(dim) <= 0:
            raise DataError(f"embedding dim must be positive, got {dim}")
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}
        for key, vec in entries.items():
            arr = np.array(vec, dtype=np.float64).reshape(-1)
            if arr.shape[0] != self.dim:
                raise DataError(f"embedding {key!r} has length {arr.shape[0]}, expected {self.dim}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"embedding {key!r} contains non-finite values")
            arr.setflags(write=False)
            self._entries[key] = arr

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self._entries[key]
        except KeyError:
            raise DataError(f"no embedding for id {key!r}") from None

    def ids(self) -> list[str]:
        return list(self._entries)

    def matrix(self, ids: Iterable[str]) -> np.ndarray:
        rows = [self[i] for i in ids]
        return np.stack(rows) if rows else np.zeros((0, self.dim))


def load_embeddings(manifest_path) -> EmbeddingTable:
    manifest_path = Path(manifest_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise DataError(f"{manifest_path}: first line must be 'dim=<N>'")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise DataError(f"{manifest_path}: bad dim line {lines[0]!r}") from None
    if dim <= 0:
        raise DataError(f"{manifest_path}: dim must be positive, got {dim}")
    if len(lines) < 2 or lines[1].split("\t") != ["id", "path"]:
        raise DataError(f"{manifest_path}: second line must be the header 'id<TAB>path'")

    base = manifest_path.parent
    expected = dim * _FLOAT32_LE.itemsize
    entries: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{manifest_path}:{lineno}: expected 2 tab-separated fields")
        key, rel = parts
        if key in entries:
            raise DataError(f"{manifest_path}:{lineno}: duplicate id {key!r}")
        raw = (base / rel).read_bytes()
        if len(raw) != expected:
            kind = "truncated" if len(raw) < expected else "oversized"
            raise DataError(
                f"{kind} embedding {key!r}: {len(raw)} bytes, expected {expected} (dim={dim})"
            )
        vec = np.frombuffer(raw, dtype=_FLOAT32_LE).astype(np.float64)
        if not np.all(np.isfinite(vec)):
            raise DataError(f"non-finite value in embedding {key!r}")
        entries[key] = vec
    return EmbeddingTable(dim, entries)


def save_embeddings(table: EmbeddingTable, out_dir) -> Path:
    """Write ``manifest.tsv`` plus one ``.f32`` file per vector; returns the manifest path.

    Values are stored as float32, so a round trip is exact only for vectors
    that are already float32-representable.
    """
    out_dir = Path(out_dir)
    vec_dir = out_dir / "vectors"
    vec_dir.mkdir(parents=True, exist_ok=True)
    rows = [f"dim={table.dim}", "id\tpath"]
    for i, key in enumerate(table.ids()):
        rel = f"vectors/{i:06d}.f32"
        (out_dir / rel).write_bytes(table[key].astype(_FLOAT32_LE).tobytes())
        rows.append(f"{key}\t{rel}")
    manifest = out_dir / "manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest
