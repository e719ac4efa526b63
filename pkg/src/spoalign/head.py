"""Cosine-similarity scorer with a trainable affine map on the audio side.

    x_hat = 10 * cos(W @ e_audio + b, e_text)

The text embedding is frozen.  A fresh head is the identity map, so its
scores equal the plain embedding cosine times 10.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UndefinedCosineError

SCORE_SCALE = 10.0
NORM_FLOOR = 1e-12


@dataclass
class ProjectionHead:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        d = self.bias.shape[0]
        if self.weight.shape != (d, d):
            raise DataError(f"weight shape {self.weight.shape} does not match bias length {d}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise DataError("head parameters must be finite")

    @property
    def dim(self) -> int:
        return self.bias.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "ProjectionHead":
        return cls(np.eye(dim), np.zeros(dim))

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.weight.copy(), self.bias.copy())

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def to_json(self) -> dict:
        return {"dim": self.dim, "weight": self.weight.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ProjectionHead":
        head = cls(np.array(obj["weight"], dtype=np.float64), np.array(obj["bias"], dtype=np.float64))
        if head.dim != int(obj["dim"]):
            raise DataError(f"head dim {obj['dim']} does not match parameter shapes")
        return head


def _check_dim(head: ProjectionHead, *vecs: np.ndarray) -> None:
    for v in vecs:
        if v.shape[-1] != head.dim:
            raise DataError(f"vector length {v.shape[-1]} does not match head dim {head.dim}")


def project_audio(head: ProjectionHead, e_audio: np.ndarray) -> np.ndarray:
    e_audio = np.asarray(e_audio, dtype=np.float64)
    _check_dim(head, e_audio)
    return e_audio @ head.weight.T + head.bias


def _norms(x: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1)
    if np.any(n < NORM_FLOOR):
        raise UndefinedCosineError(f"{what} vector has norm below {NORM_FLOOR:g}")
    return n


def score(head: ProjectionHead, e_audio: np.ndarray, e_text: np.ndarray) -> float:
    return float(score_batch(head, np.atleast_2d(e_audio), np.atleast_2d(e_text))[0])


def score_batch(head: ProjectionHead, audio: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Scores for row-aligned batches of audio and text embeddings."""
    scores, _ = _forward(head, audio, text)
    return scores


def _forward(head: ProjectionHead, audio: np.ndarray, text: np.ndarray):
    audio = np.asarray(audio, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    _check_dim(head, audio, text)
    v = project_audio(head, audio)
    v_norm = _norms(v, "projected audio")
    t_hat = text / _norms(text, "text")[:, None]
    v_hat = v / v_norm[:, None]
    cos = np.clip(np.einsum("ij,ij->i", v_hat, t_hat), -1.0, 1.0)
    return SCORE_SCALE * cos, (audio, v_norm, v_hat, t_hat, cos)


def score_and_vjp(head: ProjectionHead, audio: np.ndarray, text: np.ndarray):
    """Batch scores plus a function mapping ``d loss / d x_hat`` to parameter gradients.

    The returned callable gives ``(grad_weight, grad_bias)``.
    """
    scores, (audio, v_norm, v_hat, t_hat, cos) = _forward(head, audio, text)
    # d x_hat / d v = 10 * (t_hat - cos * v_hat) / |v|
    jac_v = SCORE_SCALE * (t_hat - cos[:, None] * v_hat) / v_norm[:, None]

    def vjp(upstream):
        grad_v = jac_v * np.asarray(upstream, dtype=np.float64)[:, None]
        return grad_v.T @ audio, grad_v.sum(axis=0)

    return scores, vjp


def score_gradient(head: ProjectionHead, e_audio: np.ndarray, e_text: np.ndarray):
    """``(d x_hat / d weight, d x_hat / d bias)`` for a single pair."""
    _, vjp = score_and_vjp(head, np.atleast_2d(e_audio), np.atleast_2d(e_text))
    return vjp([1.0])
