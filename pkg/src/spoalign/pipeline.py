"""End-to-end run: data -> screening -> listener stats -> training grid -> ensembles -> metrics.

Every artifact lands under ``workdir``; paths recorded inside artifacts are
relative to it, so two runs of the same config in different directories
produce byte-identical files.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .data import Dataset, EmbeddingTable, load_embeddings, load_scores, save_embeddings, save_scores, split_by_text
from .ensemble import (
    EnsembleMember,
    EnsembleSpec,
    build_challenge_ensemble,
    ensemble_predict,
    predict,
)
from .errors import PipelineError
from .head import ProjectionHead
from .metrics import evaluate
from .screening import ScreeningConfig, screen
from .spo import GlobalStats, compute_global_stats, make_raw_targets, make_training_targets, stats_to_json
from .synthgen import SynthConfig, generate
from .training import SETTINGS, TrainConfig, TrainedModel, save_model, train

log = logging.getLogger(__name__)

STAGES = ("config", "synth", "load", "screen", "spo-stats", "train", "predict", "ensemble", "evaluate")

ENSEMBLE_FULL = "full"
ENSEMBLE_NO_A = "w/o Setting A"
ENSEMBLE_NO_BC = "w/o Setting B & C"


@dataclass
class PipelineConfig:
    train_scores: str | None = None
    val_scores: str | None = None
    embeddings: str | None = None
    synth: SynthConfig | None = None
    val_fraction: float = 0.3
    screening: ScreeningConfig = field(default_factory=ScreeningConfig)
    train: dict = field(default_factory=dict)
    settings: list[str] = field(default_factory=lambda: ["A", "B", "C"])
    warmup: list[bool] = field(default_factory=lambda: [False, True])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    spo_ablation: bool = False
    strict_triplets: bool = True
    workdir: str | None = None

    def __post_init__(self):
        if self.synth is None and not (self.train_scores and self.val_scores and self.embeddings):
            raise ValueError("give either 'synth' or all of 'train_scores', 'val_scores', 'embeddings'")
        bad = [s for s in self.settings if s not in SETTINGS]
        if bad or not self.settings:
            raise ValueError(f"settings must be a non-empty subset of {sorted(SETTINGS)}, got {self.settings}")
        if not self.warmup or not self.seeds:
            raise ValueError("warmup and seeds must be non-empty")
        reserved = {"seed", "warmup", "screening", "contrastive"} & set(self.train)
        if reserved:
            raise ValueError(f"'train' may not set grid-controlled keys {sorted(reserved)}")
        TrainConfig.from_json(self.train)

    @classmethod
    def from_json(cls, obj: dict, base_dir=None) -> "PipelineConfig":
        obj = dict(obj)
        if "synth" in obj and obj["synth"] is not None:
            obj["synth"] = SynthConfig.from_json(obj["synth"])
        if "screening" in obj:
            obj["screening"] = ScreeningConfig(**obj["screening"])
        if base_dir is not None:
            for key in ("train_scores", "val_scores", "embeddings"):
                if obj.get(key) and not Path(obj[key]).is_absolute():
                    obj[key] = str(Path(base_dir) / obj[key])
        return cls(**obj)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def model_name(setting: str, warmup: bool, seed: int, spo: bool = True) -> str:
    return f"{setting}_{'warm' if warmup else 'nowarm'}_s{seed}{'' if spo else '_nospo'}"


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def _prepare_data(config: PipelineConfig, workdir: Path):
    latent = None
    if config.synth is not None:
        with _Stage("synth"):
            dataset, table, latent = generate(config.synth)
            train_ds, val_ds = split_by_text(dataset, config.val_fraction, config.synth.seed)
            data_dir = workdir / "data"
            save_scores(train_ds, data_dir / "train.jsonl")
            save_scores(val_ds, data_dir / "val.jsonl")
            save_embeddings(table, data_dir / "embeddings")
            _write_json(data_dir / "latent.json", latent)
            train_path, val_path = data_dir / "train.jsonl", data_dir / "val.jsonl"
            emb_path = data_dir / "embeddings" / "manifest.tsv"
    else:
        train_path, val_path, emb_path = (
            Path(config.train_scores), Path(config.val_scores), Path(config.embeddings)
        )
    with _Stage("load"):
        for p in (train_path, val_path, emb_path):
            if not p.exists():
                raise FileNotFoundError(f"input not found: {p}")
        train_ds = load_scores(train_path, config.strict_triplets, "train")
        val_ds = load_scores(val_path, config.strict_triplets, "val")
        table = load_embeddings(emb_path)
    return train_ds, val_ds, table, latent


def run_pipeline(config: PipelineConfig, workdir) -> dict:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds, table, latent = _prepare_data(config, workdir)

    # train data variants: raw (Setting A) and screened (B, C), each screened once
    datasets: dict[bool, Dataset] = {False: train_ds}
    screening_summary = {}
    with _Stage("screen"):
        if any(SETTINGS[s][0] for s in config.settings):
            screened, report = screen(train_ds, config.screening)
            datasets[True] = screened
            _write_json(workdir / "screening" / "train_report.json", report.to_json())
            save_scores(screened, workdir / "screening" / "train_screened.jsonl")
            _, val_report = screen(val_ds, config.screening)
            _write_json(workdir / "screening" / "val_report.json", val_report.to_json())
            screening_summary = {
                "train": {
                    "records_before": report.records_before,
                    "records_after": report.records_after,
                    "excluded_listeners": sorted(report.excluded_listeners),
                },
                "val": {
                    "records_before": val_report.records_before,
                    "records_after": val_report.records_after,
                    "excluded_listeners": sorted(val_report.excluded_listeners),
                },
            }

    prepared: dict[bool, tuple[GlobalStats, object, object]] = {}
    with _Stage("spo-stats"):
        for screened_flag, ds in datasets.items():
            g = compute_global_stats(ds)
            prepared[screened_flag] = (g, make_training_targets(ds), make_raw_targets(ds, g))
            tag = "screened" if screened_flag else "raw"
            _write_json(workdir / "spo" / f"{tag}.json", stats_to_json(ds))

    grid = [(s, w, seed) for s in config.settings for w in config.warmup for seed in config.seeds]
    models: dict[str, TrainedModel] = {}
    members: list[EnsembleMember] = []
    ablation: dict[str, TrainedModel] = {}
    with _Stage("train"):
        jobs = [(s, w, seed, True) for s, w, seed in grid]
        if config.spo_ablation:
            first_setting = "B" if "B" in config.settings else config.settings[0]
            jobs += [(first_setting, config.warmup[0], seed, False) for seed in config.seeds]
        for setting, warm, seed, use_spo in jobs:
            tc = TrainConfig.for_setting(setting, **{**config.train, "warmup": warm, "seed": seed, "spo": use_spo})
            g, spo_targets, raw_targets = prepared[tc.screening]
            name = model_name(setting, warm, seed, use_spo)
            history = []
            model = train(
                datasets[tc.screening], table, spo_targets if use_spo else raw_targets, g, tc,
                log=history.append,
            )
            rel = f"models/{name}.json"
            save_model(model, workdir / rel)
            logs = workdir / "logs" / f"{name}.jsonl"
            logs.parent.mkdir(parents=True, exist_ok=True)
            logs.write_text("".join(json.dumps(h, sort_keys=True) + "\n" for h in history))
            if use_spo:
                models[name] = model
                members.append(EnsembleMember(rel, setting, warm, seed))
            else:
                ablation[name] = model
            log.info("trained %s: loss %.4f -> %.4f", name, model.loss_history[0][1], model.loss_history[-1][1])

    with _Stage("predict"):
        single_preds = {name: predict(m, table, val_ds) for name, m in {**models, **ablation}.items()}
        for name, preds in single_preds.items():
            _write_json(workdir / "preds" / f"{name}.json", preds)
        baseline = TrainedModel(ProjectionHead.identity(table.dim), TrainConfig(), GlobalStats(0.0, 1.0))
        baseline_preds = predict(baseline, table, val_ds)

    spec = EnsembleSpec(members)
    _write_json(workdir / "ensemble_spec.json", spec.to_json())
    variants = {ENSEMBLE_FULL: ()}
    if "A" in config.settings and len(config.settings) > 1:
        variants[ENSEMBLE_NO_A] = ("A",)
        variants[ENSEMBLE_NO_BC] = tuple(s for s in ("B", "C") if s in config.settings)
    ensemble_preds = {}
    with _Stage("ensemble"):
        base_spec = EnsembleSpec.from_json(spec.to_json(), workdir)
        full_grid = len(members) == 18
        for label, excluded in variants.items():
            mset = build_challenge_ensemble(base_spec, subset=not full_grid, exclude_settings=excluded)
            preds = ensemble_predict(mset.models, table, val_ds)
            ensemble_preds[label] = (preds, mset.composition)
            slug = label.replace("/", "").replace("&", "and").replace(" ", "_")
            _write_json(workdir / "ensembles" / f"{slug}.json", preds)

    with _Stage("evaluate"):
        summary = {
            "n_val_pairs": len(val_ds.pair_ids),
            "screening": screening_summary,
            "baseline_identity_head": evaluate(baseline_preds, val_ds).to_json(),
            "single_models": {n: evaluate(single_preds[n], val_ds).to_json() for n in models},
            "ensembles": {
                label: {"composition": comp, **evaluate(p, val_ds).to_json()}
                for label, (p, comp) in ensemble_preds.items()
            },
        }
        if ablation:
            summary["spo_ablation"] = {
                "with_spo": {
                    n.replace("_nospo", ""): summary["single_models"][n.replace("_nospo", "")]
                    for n in ablation
                },
                "without_spo": {n: evaluate(single_preds[n], val_ds).to_json() for n in ablation},
            }
        if latent is not None:
            summary["latent_oracle"] = evaluate(latent, val_ds).to_json()
        _write_json(workdir / "summary.json", summary)
    return summary
