"""Loss, optimizer and training loop for the projection head.

The loss compares standardized targets with model scores mapped through the
global training normalization ``(x_hat - mu_train) / sigma_train``:

    L = MSE(y, p) + lambda * C(y, p)

where ``C`` is a pairwise hinge on score differences,
``mean_{i != j} max(0, |(p_i - p_j) - (y_i - y_j)| - margin)``, evaluated
inside each mini-batch.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import Dataset, EmbeddingTable
from .errors import DataError, TrainingError
from .head import ProjectionHead, score_and_vjp
from .screening import ScreeningConfig, ScreeningReport, screen
from .spo import GlobalStats, TargetSet, compute_global_stats, make_raw_targets, make_training_targets

SETTINGS = {
    # label: (screening, contrastive)
    "A": (False, False),
    "B": (True, True),
    "C": (True, False),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    peak_lr: float = 1e-4
    warmup: bool = False
    warmup_peak_epoch: int = 5
    initial_lr: float = 0.0
    lambda_con: float = 0.5
    contrastive: bool = False
    screening: bool = False
    margin: float = 0.1
    batch_size: int = 32
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # False trains on globally normalized raw ratings instead of per-listener z-scores.
    spo: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.peak_lr > 0:
            raise ValueError("peak_lr must be > 0")
        if self.warmup and not 0 <= self.warmup_peak_epoch <= self.epochs:
            raise ValueError("warmup_peak_epoch must be in [0, epochs]")
        if self.lambda_con < 0:
            raise ValueError("lambda_con must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def for_setting(cls, setting: str, **overrides) -> "TrainConfig":
        screening, contrastive = SETTINGS[setting]
        return cls(screening=screening, contrastive=contrastive, **overrides)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainedModel:
    head: ProjectionHead
    config: TrainConfig
    global_stats: GlobalStats
    loss_history: list[tuple[int, float, float, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        out = self.head.to_json()
        out["metadata"] = {"seed": self.config.seed, "config_hash": self.config.config_hash()}
        out["config"] = self.config.to_json()
        out["global_stats"] = {
            "mu_train": self.global_stats.mu_train,
            "sigma_train": self.global_stats.sigma_train,
        }
        out["loss_history"] = [
            {"epoch": e, "total": t, "reg": r, "con": c} for e, t, r, c in self.loss_history
        ]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedModel":
        g = obj["global_stats"]
        return cls(
            head=ProjectionHead.from_json(obj),
            config=TrainConfig.from_json(obj["config"]),
            global_stats=GlobalStats(g["mu_train"], g["sigma_train"]),
            loss_history=[
                (h["epoch"], h["total"], h["reg"], h["con"]) for h in obj.get("loss_history", [])
            ],
        )


def save_model(model: TrainedModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_json(), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> TrainedModel:
    return TrainedModel.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------- losses

def _as_pair(targets, preds):
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} targets vs {p.shape[0]} predictions")
    return y, p


def regression_loss(targets, preds_norm) -> float:
    y, p = _as_pair(targets, preds_norm)
    if y.size == 0:
        raise ValueError("regression loss of an empty batch")
    return float(np.mean((p - y) ** 2))


def normalize_prediction(x_hat, stats: GlobalStats):
    return (x_hat - stats.mu_train) / stats.sigma_train


def _pairwise_residuals(y, p):
    return (p[:, None] - p[None, :]) - (y[:, None] - y[None, :])


def contrastive_loss(targets, preds_norm, margin: float = 0.1) -> float:
    y, p = _as_pair(targets, preds_norm)
    n = y.size
    if n < 2:
        return 0.0
    hinge = np.maximum(0.0, np.abs(_pairwise_residuals(y, p)) - margin)
    np.fill_diagonal(hinge, 0.0)
    return float(hinge.sum() / (n * (n - 1)))


def total_loss(targets, preds_norm, lambda_con=0.5, margin=0.1, contrastive_enabled=True):
    """Returns ``(total, reg, con)``; ``con`` is reported even when not weighted in."""
    reg = regression_loss(targets, preds_norm)
    con = contrastive_loss(targets, preds_norm, margin)
    total = reg + lambda_con * con if contrastive_enabled else reg
    return total, reg, con


def loss_and_grad(targets, preds_norm, lambda_con=0.5, margin=0.1, contrastive_enabled=True):
    """``(total, reg, con, dtotal/dpreds_norm)``."""
    y, p = _as_pair(targets, preds_norm)
    n = y.size
    if n == 0:
        raise ValueError("loss of an empty batch")
    resid = p - y
    reg = float(np.mean(resid**2))
    grad = 2.0 * resid / n
    con = 0.0
    if n >= 2:
        d = _pairwise_residuals(y, p)
        active = np.abs(d) > margin
        np.fill_diagonal(active, False)
        hinge = np.where(active, np.abs(d) - margin, 0.0)
        con = float(hinge.sum() / (n * (n - 1)))
        if contrastive_enabled:
            s = np.where(active, np.sign(d), 0.0)
            # s is antisymmetric: each p_k appears as +p_i in row k and -p_j in column k
            grad = grad + lambda_con * 2.0 * s.sum(axis=1) / (n * (n - 1))
    total = reg + lambda_con * con if contrastive_enabled else reg
    return total, reg, con, grad


def batch_loss_and_grad(head, audio, text, targets, global_stats, lambda_con, margin, contrastive):
    """Loss of one batch and its gradient w.r.t. the head.

    Returns ``(total, reg, con, grad_weight, grad_bias)``.
    """
    x_hat, vjp = score_and_vjp(head, audio, text)
    p = normalize_prediction(x_hat, global_stats)
    total, reg, con, g_p = loss_and_grad(targets, p, lambda_con, margin, contrastive)
    g_w, g_b = vjp(g_p / global_stats.sigma_train)
    return total, reg, con, g_w, g_b


# ------------------------------------------------------------ optimizer

def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if not config.warmup or epoch >= config.warmup_peak_epoch:
        return config.peak_lr
    frac = epoch / config.warmup_peak_epoch
    return config.initial_lr + (config.peak_lr - config.initial_lr) * frac


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)`` without mutating inputs."""
    b1, b2 = betas
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise TrainingError(
                f"non-finite gradient for {name!r} at step {state.step + 1}: {bad} bad entries"
            )
    t = state.step + 1
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


# ------------------------------------------------------------- training

def _resolve_inputs(dataset: Dataset, embeddings: EmbeddingTable, targets: TargetSet):
    audio_ids, text_ids = [], []
    for t in targets:
        text_id, audio_id = dataset.pair_members(t.pair_id)
        for key in (audio_id, text_id):
            if key not in embeddings:
                raise DataError(f"missing embedding for id {key!r} (pair {t.pair_id!r})")
        audio_ids.append(audio_id)
        text_ids.append(text_id)
    return embeddings.matrix(audio_ids), embeddings.matrix(text_ids), targets.values()


def train(
    dataset: Dataset,
    embeddings: EmbeddingTable,
    spo_targets: TargetSet,
    global_stats: GlobalStats,
    config: TrainConfig,
    log=None,
) -> TrainedModel:
    """Fit a fresh identity-initialized head to ``spo_targets``.

    ``log``, if given, is called with one dict per finished epoch.
    """
    if len(spo_targets) == 0:
        raise DataError("no training targets")
    audio, text, y = _resolve_inputs(dataset, embeddings, spo_targets)
    n = y.shape[0]
    rng = np.random.default_rng(config.seed)
    head = ProjectionHead.identity(embeddings.dim)
    params = head.params()
    state = AdamState()
    betas = (config.adam_beta1, config.adam_beta2)
    history = []

    for epoch in range(config.epochs):
        lr = lr_at_epoch(epoch, config)
        order = rng.permutation(n)
        sums = [[], [], []]
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            head = ProjectionHead(params["weight"], params["bias"])
            total, reg, con, g_w, g_b = batch_loss_and_grad(
                head, audio[idx], text[idx], y[idx], global_stats,
                config.lambda_con, config.margin, config.contrastive,
            )
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            params, state = adam_step(
                params, {"weight": g_w, "bias": g_b}, state, lr, betas, config.adam_eps
            )
            for acc, val in zip(sums, (total, reg, con)):
                acc.append(val)
        row = (epoch, *(math.fsum(acc) / len(acc) for acc in sums))
        history.append(row)
        if log is not None:
            log({"epoch": epoch, "lr": lr, "total": row[1], "reg": row[2], "con": row[3]})

    head = ProjectionHead(params["weight"], params["bias"])
    return TrainedModel(head, config, global_stats, history)


@dataclass
class FitResult:
    model: TrainedModel
    targets: TargetSet
    screening: ScreeningReport | None


def fit(
    dataset: Dataset,
    embeddings: EmbeddingTable,
    config: TrainConfig,
    screening_config: ScreeningConfig | None = None,
    log=None,
) -> FitResult:
    """Screen (if the config asks for it), build targets and global stats, then train."""
    report = None
    if config.screening:
        dataset, report = screen(dataset, screening_config or ScreeningConfig())
    global_stats = compute_global_stats(dataset)
    targets = make_training_targets(dataset) if config.spo else make_raw_targets(dataset, global_stats)
    model = train(dataset, embeddings, targets, global_stats, config, log=log)
    return FitResult(model, targets, report)
