"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 training divergence, 4 rejection
sampling abort, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .data import SchemaError, to_frame
from .drs import DRSAbort
from .pipeline import (ConfigError, PipelineConfig, StageError, emit_report, evaluate_run, load_batch, prepare,
                       run_alpha_sweep, run_pipeline, run_pretrain, run_sample, run_transform, save_batch,
                       write_sweep, _stage)
from .triple_gan import TrainingDivergence, load_bundle, save_bundle

log = logging.getLogger("fairsynth")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DRS = 0, 1, 2, 3, 4


def _config(args) -> PipelineConfig:
    return PipelineConfig.load(args.config, seed=args.seed, variant=args.variant, output_dir=args.out)


def _base(args) -> Path:
    return Path(args.config).resolve().parent


def cmd_synth_data(args) -> int:
    cfg = _config(args)
    if cfg.dataset.get("kind") != "biased":
        raise ConfigError("synth-data needs a dataset of kind 'biased'")
    from .pipeline import load_dataset

    d = load_dataset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    to_frame(d).to_csv(out / "data.csv", index=False)
    (out / "schema.yaml").write_text(yaml.safe_dump({"columns": [c.to_dict() for c in d.schema]}, sort_keys=False))
    (out / "data_meta.json").write_text(json.dumps(d.meta, sort_keys=True, indent=2) + "\n")
    print(out / "data.csv")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    ctx = _stage("data", prepare, cfg, _base(args))
    bundle = _stage("pretrain", run_pretrain, ctx)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, out / "pretrain.pt")
    print(out / "pretrain.pt")
    return EXIT_OK


def cmd_transform(args) -> int:
    cfg = _config(args)
    ctx = _stage("data", prepare, cfg, _base(args))
    out = Path(cfg.output_dir)
    bundle = load_bundle(out / "pretrain.pt", ctx.train)
    bundle = _stage("transform", run_transform, ctx, bundle)
    save_bundle(bundle, out / "transform.pt")
    print(out / "transform.pt")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _config(args)
    ctx = _stage("data", prepare, cfg, _base(args))
    out = Path(cfg.output_dir)
    bundle = load_bundle(out / "transform.pt", ctx.train)
    batch, info = _stage("sample", run_sample, ctx, bundle)
    save_batch(batch, out / "synthetic.npz")
    (out / "drs.json").write_text(json.dumps(info, sort_keys=True, indent=2) + "\n")
    print(out / "synthetic.npz")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ctx = _stage("data", prepare, cfg, _base(args))
    out = Path(cfg.output_dir)
    batch = load_batch(out / "synthetic.npz")
    bundle = load_bundle(out / "transform.pt", ctx.train) if (out / "transform.pt").exists() else None
    info_path = out / "drs.json"
    info = json.loads(info_path.read_text()) if info_path.exists() else None
    report = _stage("evaluate", evaluate_run, ctx, batch, bundle, info)
    paths = emit_report(report, out)
    print(paths["report"])
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _config(args)
    manifest, _ = run_pipeline(cfg, base_dir=_base(args))
    print(Path(cfg.output_dir) / "manifest.json")
    return EXIT_OK


def cmd_sweep_alpha(args) -> int:
    cfg = _config(args)
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else \
        cfg.raw.get("sweep", {}).get("alphas", [0.0, 0.25, 0.5, 0.75, 1.0])
    rows = _stage("sweep", run_alpha_sweep, cfg, alphas, None, _base(args))
    paths = write_sweep(rows, cfg.output_dir)
    print(paths["sweep_csv"])
    return EXIT_OK


COMMANDS = {
    "synth-data": (cmd_synth_data, "write a bias-injected toy dataset and its schema"),
    "pretrain": (cmd_pretrain, "stage 1: three-player pretraining with representation diagnosis"),
    "transform": (cmd_transform, "stage 2: MI-penalised fine-tuning with re-weighted batches"),
    "sample": (cmd_sample, "stage 3: draw synthetic rows (rejection-sampled for the full variant)"),
    "evaluate": (cmd_evaluate, "utility, fairness and quality report for the sampled rows"),
    "run-all": (cmd_run_all, "all stages plus evaluation and manifest"),
    "sweep-alpha": (cmd_sweep_alpha, "fine-tune at several MI penalty weights and tabulate the trade-off"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairsynth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML or JSON pipeline config")
        p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
        p.add_argument("--variant", default=None, help="baseline_alpha0 | btgan_minus | btgan_full")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        if name == "sweep-alpha":
            p.add_argument("--alphas", default=None, help="comma-separated penalty weights")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command][0](args)
    except (ConfigError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        if isinstance(exc.cause, TrainingDivergence):
            return EXIT_DIVERGED
        if isinstance(exc.cause, DRSAbort):
            return EXIT_DRS
        if isinstance(exc.cause, (ConfigError, SchemaError)):
            return EXIT_CONFIG
        return EXIT_FAIL
    except TrainingDivergence as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGED
    except DRSAbort as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DRS


if __name__ == "__main__":
    sys.exit(main())
