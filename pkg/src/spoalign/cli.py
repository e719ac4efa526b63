"""Command-line entry point: ``spoalign <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import load_embeddings, load_scores, save_embeddings, save_scores
from .ensemble import build_challenge_ensemble, ensemble_predict, load_spec, predict
from .errors import PipelineError
from .metrics import evaluate
from .pipeline import STAGES, PipelineConfig, run_pipeline
from .screening import ScreeningConfig, screen
from .spo import stats_to_json
from .synthgen import SynthConfig, generate
from .training import TrainConfig, fit, load_model, save_model

log = logging.getLogger("spoalign")

# exit code per failing stage; 1 is reserved for unexpected errors
EXIT_CODES = {stage: 2 + i for i, stage in enumerate(STAGES)}
DEFAULT_WORKDIR = "spoalign-work"


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_synth(args):
    with_stage = "config"
    try:
        obj = _read_json(args.config)
        if args.seed is not None:
            obj["seed"] = args.seed
        config = SynthConfig.from_json(obj)
        with_stage = "synth"
        dataset, table, latent = generate(config)
        save_scores(dataset, args.out_scores)
        manifest = save_embeddings(table, args.out_embeddings)
        _write_json(args.out_latent, latent)
    except Exception as exc:
        raise PipelineError(with_stage, exc) from exc
    log.info("wrote %d records, %d vectors (%s)", len(dataset), len(table), manifest)


def cmd_screen(args):
    try:
        dataset = load_scores(args.scores, args.strict_triplets)
        config = ScreeningConfig(args.tau, args.rate)
    except Exception as exc:
        raise PipelineError("load", exc) from exc
    try:
        kept, report = screen(dataset, config)
        save_scores(kept, args.out)
        _write_json(args.report, report.to_json())
    except Exception as exc:
        raise PipelineError("screen", exc) from exc
    log.info(
        "kept %d of %d records; excluded %s",
        report.records_after, report.records_before, sorted(report.excluded_listeners) or "nobody",
    )


def cmd_spo_stats(args):
    try:
        dataset = load_scores(args.scores, args.strict_triplets)
    except Exception as exc:
        raise PipelineError("load", exc) from exc
    try:
        _write_json(args.out, stats_to_json(dataset))
    except Exception as exc:
        raise PipelineError("spo-stats", exc) from exc


def cmd_train(args):
    try:
        obj = _read_json(args.config) if args.config else {}
        if args.seed is not None:
            obj["seed"] = args.seed
        config = TrainConfig.from_json(obj)
        screening = ScreeningConfig(args.tau, args.rate)
    except Exception as exc:
        raise PipelineError("config", exc) from exc
    try:
        dataset = load_scores(args.scores, args.strict_triplets)
        table = load_embeddings(args.embeddings)
    except Exception as exc:
        raise PipelineError("load", exc) from exc
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with log_path.open("w", encoding="utf-8") as fh:
            def progress(row):
                fh.write(json.dumps(row, sort_keys=True) + "\n")
                log.debug("epoch %(epoch)d total %(total).5f", row)

            result = fit(dataset, table, config, screening, log=progress)
        save_model(result.model, args.out)
    except Exception as exc:
        raise PipelineError("train", exc) from exc
    hist = result.model.loss_history
    log.info("loss %.5f -> %.5f over %d epochs", hist[0][1], hist[-1][1], len(hist))


def cmd_predict(args):
    try:
        model = load_model(args.model)
        table = load_embeddings(args.embeddings)
        pairs = load_scores(args.pairs)
    except Exception as exc:
        raise PipelineError("load", exc) from exc
    try:
        _write_json(args.out, predict(model, table, pairs))
    except Exception as exc:
        raise PipelineError("predict", exc) from exc


def cmd_ensemble(args):
    try:
        spec = load_spec(args.spec)
        mset = build_challenge_ensemble(spec, subset=args.subset, exclude_settings=args.exclude)
        table = load_embeddings(args.embeddings)
        pairs = load_scores(args.pairs)
    except Exception as exc:
        raise PipelineError("load", exc) from exc
    try:
        _write_json(args.out, ensemble_predict(mset.models, table, pairs))
    except Exception as exc:
        raise PipelineError("ensemble", exc) from exc
    log.info("ensembled %d models: %s", len(mset.models), mset.composition)


def cmd_evaluate(args):
    try:
        preds = _read_json(args.preds)
        dataset = load_scores(args.scores)
    except Exception as exc:
        raise PipelineError("load", exc) from exc
    try:
        report = evaluate(preds, dataset).to_json()
        _write_json(args.out, report)
    except Exception as exc:
        raise PipelineError("evaluate", exc) from exc
    if not args.quiet:
        print(json.dumps(report, sort_keys=True))


def cmd_pipeline(args):
    try:
        obj = _read_json(args.config)
        if args.seed is not None and obj.get("synth") is not None:
            obj["synth"]["seed"] = args.seed
        config = PipelineConfig.from_json(obj, base_dir=Path(args.config).parent)
    except Exception as exc:
        raise PipelineError("config", exc) from exc
    workdir = args.workdir or os.environ.get("SPOALIGN_WORKDIR") or config.workdir or DEFAULT_WORKDIR
    summary = run_pipeline(config, workdir)
    if not args.quiet:
        for label, rep in summary["ensembles"].items():
            print(f"{label:>18}: srcc={rep['srcc']} lcc={rep['lcc']} ktau={rep['ktau']} mse={rep['mse']:.4f}")


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--workdir", default=default, help="pipeline output dir (env SPOALIGN_WORKDIR)")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spoalign", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic listener panel")
    p.add_argument("--config", required=True)
    p.add_argument("--out-scores", required=True)
    p.add_argument("--out-embeddings", required=True, help="directory for manifest.tsv + vectors")
    p.add_argument("--out-latent", required=True)

    p = add("screen", cmd_screen, "drop inconsistent listeners")
    p.add_argument("--scores", required=True)
    p.add_argument("--tau", type=float, default=5.0)
    p.add_argument("--rate", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--strict-triplets", action="store_true")

    p = add("spo-stats", cmd_spo_stats, "per-listener and global score statistics")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict-triplets", action="store_true")

    p = add("train", cmd_train, "train one projection head")
    p.add_argument("--scores", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config", help="TrainConfig JSON; defaults apply to missing keys")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-epoch JSONL (default: <out>.log.jsonl)")
    p.add_argument("--tau", type=float, default=5.0, help="screening tau if the config enables screening")
    p.add_argument("--rate", type=float, default=0.2, help="screening rate threshold")
    p.add_argument("--strict-triplets", action="store_true")

    p = add("predict", cmd_predict, "score pairs with one model")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", required=True, help="scores JSONL listing the pairs")
    p.add_argument("--out", required=True)

    p = add("ensemble", cmd_ensemble, "average several models")
    p.add_argument("--spec", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subset", action="store_true", help="allow fewer than the full 18 members")
    p.add_argument("--exclude", nargs="*", default=[], choices=["A", "B", "C"], metavar="SETTING")

    p = add("evaluate", cmd_evaluate, "SRCC/LCC/KTAU/MSE against mean ratings")
    p.add_argument("--preds", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)

    p = add("pipeline", cmd_pipeline, "run the full training grid and ablations")
    p.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"spoalign: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
