"""Synthetic panels of biased listeners rating audio-text pairs with a known latent alignment.

For every text we draw a text embedding and ``audios_per_text`` hidden
"true" audio embeddings with a chosen cosine to the text.  The latent
alignment of a pair is ``10 * max(0, cos(true_audio, text))``.  The stored
audio embedding is the true one pushed through a fixed random affine
distortion (plus optional observation noise), so an identity head scores
pairs imperfectly and a trained head has something to undo.

Each text is rated by ``listeners_per_pair`` listeners drawn from the pool;
every chosen listener rates all audios of that text.  A listener turns a
latent value q into ``clamp(round(scale * q + offset + N(0, noise_std)), 0, 10)``,
except that with probability ``outlier_prob`` the rating is uniform on 0..10.
Rounding is half-up.

All randomness comes from one ``numpy.random.default_rng(seed)`` (PCG64)
stream consumed in a fixed order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SCORE_MAX, SCORE_MIN, Dataset, EmbeddingTable, ScoreRecord


@dataclass(frozen=True)
class ListenerProfile:
    listener_id: str
    scale: float = 1.0
    offset: float = 0.0
    noise_std: float = 0.0
    outlier_prob: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"listener {self.listener_id!r}: scale must be > 0")
        if self.noise_std < 0:
            raise ValueError(f"listener {self.listener_id!r}: noise_std must be >= 0")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError(f"listener {self.listener_id!r}: outlier_prob must be in [0, 1]")


def neutral_pool(n: int = 4, noise_std: float = 0.0) -> list[ListenerProfile]:
    return [ListenerProfile(f"L{i:02d}", noise_std=noise_std) for i in range(n)]


def biased_pool(n: int = 8, noise_std: float = 0.7) -> list[ListenerProfile]:
    """Alternating extreme, conservative, and shifted scorers."""
    archetypes = [
        (1.6, -3.0),  # spreads scores out, hits 0 and 10 often
        (0.5, 3.0),   # stays in the middle of the scale
        (1.0, 2.0),   # generous
        (0.8, -1.0),  # harsh
    ]
    return [
        ListenerProfile(f"L{i:02d}", *archetypes[i % len(archetypes)], noise_std=noise_std)
        for i in range(n)
    ]


@dataclass(frozen=True)
class SynthConfig:
    num_texts: int = 200
    audios_per_text: int = 3
    listeners_per_pair: int = 4
    dim: int = 16
    listener_pool: tuple[ListenerProfile, ...] = field(default_factory=lambda: tuple(neutral_pool()))
    # std of Gaussian noise added to every stored audio embedding component
    noise_std: float = 0.0
    seed: int = 0
    # strength of the random linear mixing applied to stored audio embeddings
    distortion: float = 1.0
    # norm of the constant vector added to stored audio embeddings
    audio_offset: float = 1.0
    cos_low: float = -0.2
    cos_high: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "listener_pool", tuple(self.listener_pool))
        for name in ("num_texts", "audios_per_text", "listeners_per_pair"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if len(self.listener_pool) < self.listeners_per_pair:
            raise ValueError(
                f"listener pool has {len(self.listener_pool)} profiles, "
                f"need at least listeners_per_pair={self.listeners_per_pair}"
            )
        ids = [p.listener_id for p in self.listener_pool]
        if len(set(ids)) != len(ids):
            raise ValueError("listener ids in the pool must be unique")
        if self.noise_std < 0 or self.distortion < 0 or self.audio_offset < 0:
            raise ValueError("noise_std, distortion and audio_offset must be >= 0")
        if not -1.0 <= self.cos_low <= self.cos_high <= 1.0:
            raise ValueError("need -1 <= cos_low <= cos_high <= 1")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        obj = dict(obj)
        pool = obj.pop("listener_pool", None)
        if pool is not None:
            obj["listener_pool"] = tuple(ListenerProfile(**p) for p in pool)
        return cls(**obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["listener_pool"] = [asdict(p) for p in self.listener_pool]
        return out


def simulate_scores(latent, profile: ListenerProfile, rng: np.random.Generator) -> np.ndarray:
    """Integer ratings of ``profile`` for each latent value (one fixed set of draws per rating)."""
    latent = np.asarray(latent, dtype=np.float64).reshape(-1)
    n = latent.size
    noise = rng.standard_normal(n)
    outlier = rng.random(n) < profile.outlier_prob
    uniform = rng.integers(SCORE_MIN, SCORE_MAX + 1, size=n)
    raw = profile.scale * latent + profile.offset + profile.noise_std * noise
    scores = np.clip(np.floor(raw + 0.5), SCORE_MIN, SCORE_MAX).astype(np.int64)
    return np.where(outlier, uniform, scores)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _audio_with_cosine(t_hat: np.ndarray, c: float, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(t_hat.size)
    z -= (z @ t_hat) * t_hat
    return c * t_hat + np.sqrt(max(0.0, 1.0 - c * c)) * _unit(z)


def generate(config: SynthConfig):
    """Returns ``(dataset, embeddings, latent)`` with ``latent`` keyed by pair_id."""
    rng = np.random.default_rng(config.seed)
    d = config.dim
    mixing = np.eye(d) + config.distortion * rng.standard_normal((d, d)) / np.sqrt(d)
    shift = config.audio_offset * _unit(rng.standard_normal(d))

    vectors: dict[str, np.ndarray] = {}
    latent: dict[str, float] = {}
    records: list[ScoreRecord] = []
    pool = config.listener_pool

    for i in range(config.num_texts):
        text_id = f"t{i:05d}"
        t = rng.standard_normal(d)
        t_hat = _unit(t)
        vectors[text_id] = t
        pair_ids = []
        q = np.empty(config.audios_per_text)
        for j in range(config.audios_per_text):
            audio_id = f"a{i:05d}_{j}"
            pair_id = f"p{i:05d}_{j}"
            c = rng.uniform(config.cos_low, config.cos_high)
            true_audio = _audio_with_cosine(t_hat, c, rng)
            stored = mixing @ true_audio + shift + config.noise_std * rng.standard_normal(d)
            vectors[audio_id] = stored
            cos = float(true_audio @ t_hat / np.linalg.norm(true_audio))
            q[j] = 10.0 * max(0.0, cos)
            latent[pair_id] = q[j]
            pair_ids.append((pair_id, audio_id))

        chosen = rng.choice(len(pool), size=config.listeners_per_pair, replace=False)
        for k in sorted(chosen):
            profile = pool[k]
            scores = simulate_scores(q, profile, rng)
            for (pair_id, audio_id), s in zip(pair_ids, scores):
                records.append(ScoreRecord(pair_id, text_id, audio_id, profile.listener_id, int(s)))

    # stored at float32 precision so in-memory and on-disk tables agree exactly
    table = EmbeddingTable(
        d, {k: v.astype(np.float32).astype(np.float64) for k, v in vectors.items()}
    )
    return Dataset(tuple(records), "synthetic"), table, latent
