"""End-to-end runs: pretrain, bias-transform, rejection sampling, evaluation, reports."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import (BiasInjectionSpec, Dataset, MixtureSpec, SchemaError, decode, load_config, load_csv,
                   schema_from_config, schema_hash, split_dataset, synthesize_biased)
from .drs import DrsConfig, drs_filter, estimate_l
from .metrics import evaluate, plug_in_mi
from .mine import MineConfig, mine_estimate
from .nets import NetworkSpec
from .representation import LdssSampler, SubgroupSpec, UniformSampler, audit_dp_dgp, membership
from .transform import generated_w_s, train_stage2
from .triple_gan import (GeneratedBatch, ModelBundle, TrainingConfig, generate, init_models, load_bundle,
                         save_bundle, substream, train_stage1)

log = logging.getLogger(__name__)

VARIANTS = ("baseline_alpha0", "btgan_minus", "btgan_full")
REPORT_VERSION = 1


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    dataset: dict
    subgroups: list = field(default_factory=list)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    mine: MineConfig = field(default_factory=MineConfig)
    drs: DrsConfig = field(default_factory=DrsConfig)
    ldss_window: int = 5
    ldss_temperature: float = 0.5
    variant: str = "btgan_full"
    output_dir: str = "runs/default"
    seed: int = 0
    transform_epochs: Optional[int] = None
    transform_learning_rate: Optional[float] = None
    test_fraction: float = 0.15
    n_synth: Optional[int] = None
    groups: Optional[list] = None
    networks: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.ldss_window < 1 or self.ldss_temperature <= 0:
            raise ConfigError("ldss window must be >= 1 and temperature > 0")

    # effective settings per variant
    @property
    def alpha(self) -> float:
        return 0.0 if self.variant == "baseline_alpha0" else self.mine.alpha_fairness

    @property
    def uses_ldss(self) -> bool:
        return self.variant == "btgan_full"

    @property
    def uses_drs(self) -> bool:
        return self.variant == "btgan_full"

    def stage2_epochs(self) -> int:
        if self.transform_epochs is not None:
            return self.transform_epochs
        return max(1, int(round(0.25 * self.training.epochs)))

    def stage2_training(self) -> TrainingConfig:
        lr = self.transform_learning_rate or self.training.learning_rate
        return replace(self.training, epochs=self.stage2_epochs(), learning_rate=lr)

    def resolved(self) -> dict:
        """Everything that influences results, as plain data."""
        return {
            "dataset": self.dataset,
            "subgroups": self.subgroups,
            "training": self.training.to_dict(),
            "mine": {**self.mine.to_dict(), "alpha_fairness": self.alpha},
            "drs": dict(self.drs.__dict__),
            "ldss": {"window": self.ldss_window, "temperature": self.ldss_temperature},
            "variant": self.variant,
            "seed": self.seed,
            "transform_epochs": self.stage2_epochs(),
            "transform_learning_rate": self.stage2_training().learning_rate,
            "test_fraction": self.test_fraction,
            "n_synth": self.n_synth,
            "groups": self.groups,
            "networks": self.networks,
            "evaluation": self.evaluation,
        }

    def config_hash(self) -> str:
        return _hash_obj(self.resolved())

    @classmethod
    def from_dict(cls, raw: dict, seed: Optional[int] = None, variant: Optional[str] = None,
                  output_dir: Optional[str] = None) -> "PipelineConfig":
        try:
            raw = copy.deepcopy(raw)
            seed = int(raw.get("seed", 0) if seed is None else seed)
            tr = dict(raw.get("training", {}))
            tr["seed"] = seed
            mine = dict(raw.get("mine", {}))
            if "statistic_net" in mine:
                mine["statistic_net"] = NetworkSpec(**mine["statistic_net"])
            ldss = raw.get("ldss", {})
            known = {"dataset", "subgroups", "training", "mine", "drs", "ldss", "variant", "output_dir", "seed",
                     "transform_epochs", "transform_learning_rate", "test_fraction", "n_synth", "groups", "networks", "evaluation", "sweep"}
            unknown = set(raw) - known
            if unknown:
                raise ConfigError(f"unknown config keys {sorted(unknown)}")
            if "dataset" not in raw:
                raise ConfigError("config needs a 'dataset' section")
            return cls(
                dataset=raw["dataset"],
                subgroups=list(raw.get("subgroups", [])),
                training=TrainingConfig(**tr),
                mine=MineConfig(**mine),
                drs=DrsConfig(**raw.get("drs", {})),
                ldss_window=int(ldss.get("window", 5)),
                ldss_temperature=float(ldss.get("temperature", 0.5)),
                variant=variant or raw.get("variant", "btgan_full"),
                output_dir=output_dir or raw.get("output_dir", "runs/default"),
                seed=seed,
                transform_epochs=raw.get("transform_epochs"),
                transform_learning_rate=raw.get("transform_learning_rate"),
                test_fraction=float(raw.get("test_fraction", 0.15)),
                n_synth=raw.get("n_synth"),
                groups=raw.get("groups"),
                networks=raw.get("networks", {}),
                evaluation=raw.get("evaluation", {}),
                raw=raw,
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, **overrides) -> "PipelineConfig":
        try:
            raw = load_config(path)
        except (OSError, SchemaError) as exc:
            raise ConfigError(str(exc)) from exc
        except Exception as exc:  # yaml parse errors
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw, **overrides)


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def bias_spec_from_dict(cfg: dict, seed: int) -> BiasInjectionSpec:
    cfg = dict(cfg)
    if "base_distribution" in cfg:
        mix = cfg["base_distribution"]
        cfg["base_distribution"] = MixtureSpec(tuple(mix["weights"]), tuple(map(tuple, mix["means"])),
                                               tuple(map(tuple, mix["spreads"])))
    cfg.setdefault("seed", substream(seed, "data") % (2 ** 31))
    return BiasInjectionSpec(**cfg)


def load_dataset(cfg: PipelineConfig, base_dir: Optional[Path] = None) -> Dataset:
    src = cfg.dataset
    kind = src.get("kind", "csv")
    if kind == "biased":
        return synthesize_biased(bias_spec_from_dict(src.get("spec", {}), cfg.seed))
    if kind == "csv":
        path = Path(src["path"])
        if not path.is_absolute() and base_dir is not None and not path.exists():
            path = base_dir / path
        cols = src.get("schema")
        if isinstance(cols, str):
            cols = load_config(cols)["columns"]
        schema = schema_from_config(cols)
        d = load_csv(path, schema)
        frac = float(src.get("label_missing_fraction", 0.0))
        if frac > 0:
            from .data import mask_labels
            d = mask_labels(d, frac, substream(cfg.seed, "mask") % (2 ** 31))
        return d
    raise ConfigError(f"unknown dataset kind {kind!r}")


@dataclass
class Context:
    cfg: PipelineConfig
    train: Dataset
    test: Dataset
    subgroups: list
    groups: tuple


def prepare(cfg: PipelineConfig, base_dir: Optional[Path] = None) -> Context:
    data = load_dataset(cfg, base_dir)
    train, test = split_dataset(data, cfg.test_fraction, substream(cfg.seed, "split") % (2 ** 31))
    subgroups = [SubgroupSpec.from_dict(s) for s in cfg.subgroups]
    for g in subgroups:
        g.check(data.schema)
    sens = next((c for c in data.schema if c.is_sensitive), None)
    if sens is None:
        raise ConfigError("schema has no sensitive column")
    if cfg.groups:
        groups = tuple(sens.categories.index(str(g)) for g in cfg.groups)
    else:
        groups = (1, 0)
    return Context(cfg, train, test, subgroups, groups)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _stage1_key(ctx: Context) -> str:
    cfg = ctx.cfg
    return _hash_obj([cfg.dataset, cfg.subgroups, cfg.training.to_dict(), cfg.networks, cfg.seed, cfg.test_fraction])


def _network_specs(cfg: PipelineConfig) -> dict:
    return {k: NetworkSpec(**v) for k, v in cfg.networks.items()}


def run_pretrain(ctx: Context, cache: Optional[dict] = None) -> ModelBundle:
    key = _stage1_key(ctx)
    if cache is not None and key in cache:
        return cache[key]
    cfg = ctx.cfg
    bundle = init_models(ctx.train, _network_specs(cfg), cfg.training)
    bundle = train_stage1(ctx.train, bundle, cfg.training, ctx.subgroups)
    if cache is not None:
        cache[key] = bundle
    return bundle


def make_sampler(ctx: Context, bundle: ModelBundle):
    cfg = ctx.cfg
    if not cfg.uses_ldss or not ctx.subgroups:
        return UniformSampler(len(ctx.train))
    member = membership(ctx.train.x, ctx.train.y, ctx.train, ctx.subgroups)
    trace = [row for row in bundle.lds_matrix()]
    return LdssSampler(member, trace, cfg.ldss_window, cfg.ldss_temperature)


def run_transform(ctx: Context, bundle: ModelBundle) -> ModelBundle:
    cfg = ctx.cfg
    mine_cfg = replace(cfg.mine, alpha_fairness=cfg.alpha)
    stage2 = cfg.stage2_training()
    return train_stage2(ctx.train, bundle, mine_cfg, make_sampler(ctx, bundle), stage2, ctx.subgroups)


def run_sample(ctx: Context, bundle: ModelBundle) -> tuple:
    cfg = ctx.cfg
    n = cfg.n_synth or len(ctx.train)
    seed = substream(cfg.seed, "drs") % (2 ** 31)
    if cfg.uses_drs:
        l_const = estimate_l(bundle, cfg.drs, seed)
        batch = drs_filter(bundle, n, cfg.drs, seed, l_const=l_const)
        return batch, {"applied": True, "L": l_const, "acceptance_rate": batch.acceptance_rate}
    batch = generate(bundle, n, substream(cfg.seed, "sample") % (2 ** 31))
    return batch, {"applied": False, "L": None, "acceptance_rate": None}


def evaluate_run(ctx: Context, batch: GeneratedBatch, bundle: Optional[ModelBundle] = None,
                 drs_info: Optional[dict] = None, real_reference: bool = True) -> dict:
    cfg = ctx.cfg
    seed = substream(cfg.seed, "eval") % (2 ** 31)
    models = tuple(cfg.evaluation.get("models", ("linear_classifier", "tree_ensemble")))
    primary = cfg.evaluation.get("primary", "linear_classifier")
    synth_rep = evaluate(batch, ctx.test, ctx.train, ctx.groups, models, primary, seed)
    report = {
        "version": REPORT_VERSION,
        "variant": cfg.variant,
        "config_hash": cfg.config_hash(),
        "schema_hash": schema_hash(ctx.train.schema),
        "synthetic": synth_rep.to_dict(),
        "drs": drs_info or {"applied": False},
        "n_train": len(ctx.train),
        "n_test": len(ctx.test),
        "n_synthetic": len(batch),
    }
    if real_reference:
        report["real"] = evaluate(ctx.train, ctx.test, ctx.train, ctx.groups, models, primary, seed,
                                  quality=False).to_dict()
    if ctx.subgroups:
        report["representation"] = audit_dp_dgp(ctx.train, batch, ctx.subgroups).to_dict()
    x_d = batch.discrete(ctx.train.spans)
    from .data import column_codes
    report["mi"] = {"plug_in_label_sensitive": plug_in_mi(batch.labels(), column_codes(x_d, ctx.train.spans))}
    if bundle is not None and cfg.evaluation.get("mine_estimate", True):
        w, s = generated_w_s(bundle, batch)
        est = mine_estimate(w, s, replace(cfg.mine, estimate_steps=int(cfg.evaluation.get("mine_steps", 2000))),
                            seed=substream(cfg.seed, "mi-eval") % (2 ** 31))
        report["mi"]["mine_generated"] = est.reported
        report["mi"]["mine_raw"] = est.value_nats
        report["mi"]["mine_converged"] = est.converged
    if bundle is not None:
        report["training_log_tail"] = bundle.training_log[-1] if bundle.training_log else None
    return report


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _round(obj, nd=10):
    if isinstance(obj, float):
        return round(obj, nd)
    if isinstance(obj, dict):
        return {str(k): _round(v, nd) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, nd) for v in obj]
    if isinstance(obj, np.generic):
        return _round(obj.item(), nd)
    return obj


def _flat_rows(report: dict) -> list:
    rows = []
    for source in ("real", "synthetic"):
        rep = report.get(source)
        if not rep:
            continue
        for model, m in sorted(rep["tasks"].items()):
            rows.append({
                "source": source, "variant": report["variant"], "model": model,
                "accuracy": m["accuracy"], "f1": m["f1"], "auroc": m["auroc"], "auprc": m["auprc"],
                "precision": m["precision"], "recall": m["recall"],
                "parity_gap": m["parity_gap"], "auroc_gap": m["auroc_gap"],
                "data_leakage": rep["data_leakage"], "model_leakage": rep["model_leakage"],
                "delta": rep["delta_amplification"], "jsd": rep.get("jsd"),
                "discriminative_score": rep.get("discriminative_score"),
            })
    return rows


def _write_csv(path: Path, rows: list) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in r.items()})


def emit_report(report: dict, out_dir) -> dict:
    """Write report.json, tables.csv and bands.csv; returns {name: path}."""
    if not report or "synthetic" not in report:
        raise ValueError("report is missing the evaluation of synthetic data")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "tables": out / "tables.csv"}
    paths["report"].write_text(json.dumps(_round(report), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _write_csv(paths["tables"], _flat_rows(report))
    rep = report.get("representation")
    if rep:
        paths["bands"] = out / "bands.csv"
        rows = [{"subgroup": r["id"], "label": r["label"], "p_real": r["p_real"], "p_synth": r["p_synth"],
                 "lds": r["lds"], "band": r["band"]} for r in rep["subgroups"]]
        rows += [{"subgroup": f"proportion:{k}", "label": "", "p_real": None, "p_synth": None, "lds": None,
                  "band": f"{v:.6f}"} for k, v in sorted(rep["band_proportions"].items())]
        _write_csv(paths["bands"], rows)
    return {k: str(v) for k, v in paths.items()}


@dataclass
class RunManifest:
    config_hash: str
    checkpoints: dict
    wall_time: dict
    reports: dict
    software_version: str = __version__
    artifact_hashes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")

    def verify(self) -> bool:
        for name, path in {**self.checkpoints, **self.reports}.items():
            p = Path(path)
            if not p.exists() or _file_hash(p) != self.artifact_hashes.get(name):
                return False
        return True


def save_batch(batch: GeneratedBatch, path) -> None:
    np.savez(path, x_prime=batch.x_prime, y_prime=batch.y_prime, s_prime=batch.s_prime,
             stage=batch.stage, seed=batch.seed, epoch=batch.epoch,
             acceptance_rate=np.nan if batch.acceptance_rate is None else batch.acceptance_rate)


def load_batch(path) -> GeneratedBatch:
    z = np.load(path)
    rate = float(z["acceptance_rate"])
    return GeneratedBatch(z["x_prime"], z["y_prime"], z["s_prime"], str(z["stage"]), int(z["seed"]),
                          int(z["epoch"]), None if np.isnan(rate) else rate)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, cache: Optional[dict] = None, base_dir: Optional[Path] = None,
                 write: bool = True) -> tuple:
    """All three stages then evaluation. Returns (manifest, report)."""
    out = Path(cfg.output_dir)
    times = {}
    t0 = time.perf_counter()
    ctx = _stage("data", prepare, cfg, base_dir)
    times["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage1 = _stage("pretrain", run_pretrain, ctx, cache)
    times["pretrain"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage2 = _stage("transform", run_transform, ctx, stage1)
    times["transform"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    batch, drs_info = _stage("sample", run_sample, ctx, stage2)
    times["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = _stage("evaluate", evaluate_run, ctx, batch, stage2, drs_info)
    report["stage1_lds"] = _lds_summary(stage1)
    times["evaluate"] = time.perf_counter() - t0

    manifest = RunManifest(cfg.config_hash(), {}, times, {})
    if write:
        out.mkdir(parents=True, exist_ok=True)
        ckpts = {"pretrain": out / "pretrain.pt", "transform": out / "transform.pt"}
        save_bundle(stage1, ckpts["pretrain"])
        save_bundle(stage2, ckpts["transform"])
        synth_path = out / "synthetic.npz"
        save_batch(batch, synth_path)
        reports = emit_report(report, out)
        csv_path = out / "synthetic.csv"
        decode(ctx.train, np.hstack([batch.discrete(ctx.train.spans), batch.labels()[:, None].astype(float)
                                     if ctx.train.label.kind == "binary" else batch.y_prime])).to_csv(csv_path, index=False)
        reports["synthetic_npz"] = str(synth_path)
        reports["synthetic_csv"] = str(csv_path)
        manifest.checkpoints = {k: str(v) for k, v in ckpts.items()}
        manifest.reports = reports
        manifest.artifact_hashes = {k: _file_hash(v) for k, v in {**manifest.checkpoints, **reports}.items()}
        manifest.write(out / "manifest.json")
    return manifest, report


def _lds_summary(bundle: ModelBundle) -> dict:
    if not bundle.lds_trace:
        return {}
    last_epoch = bundle.lds_trace[-1].epoch
    return {r.subgroup_id: r.lds for r in bundle.lds_trace if r.epoch == last_epoch}


def run_alpha_sweep(cfg: PipelineConfig, alphas, cache: Optional[dict] = None, base_dir=None) -> list:
    """Per-alpha {train acc, test acc, MI estimate, parity gap}; stage 1 is shared."""
    alphas = list(alphas)
    if len(alphas) < 2:
        raise ConfigError("an alpha sweep needs at least two values")
    cache = {} if cache is None else cache
    variant = cfg.variant if cfg.variant != "baseline_alpha0" else "btgan_minus"
    ctx = prepare(replace(cfg, variant=variant), base_dir)
    stage1 = run_pretrain(ctx, cache)
    rows = []
    for a in alphas:
        run_cfg = replace(cfg, variant=variant, mine=replace(cfg.mine, alpha_fairness=float(a)))
        rctx = replace(ctx, cfg=run_cfg)
        bundle = run_transform(rctx, stage1)
        batch, _ = run_sample(rctx, bundle)
        rep = evaluate_run(rctx, batch, bundle, real_reference=False)
        primary = run_cfg.evaluation.get("primary", "linear_classifier")
        # training accuracy of the downstream model on its own synthetic training data
        train_acc = _train_accuracy(batch, ctx, primary, seed=substream(cfg.seed, "eval") % (2 ** 31))
        rows.append({
            "alpha": float(a),
            "train_acc": train_acc,
            "test_acc": rep["synthetic"]["tasks"][primary]["accuracy"],
            "mi_estimate": rep["mi"].get("mine_generated"),
            "mi_plug_in": rep["mi"]["plug_in_label_sensitive"],
            "parity_gap": rep["synthetic"]["parity_gap"],
        })
    return rows


def _train_accuracy(batch, ctx: Context, kind: str, seed: int) -> float:
    from .metrics import DownstreamModelSpec, model_inputs, train_downstream

    x, y, _ = model_inputs(batch, ctx.train)
    model = train_downstream(x, y, DownstreamModelSpec(kind=kind, seed=seed))
    return float((model.predict(x) == y).mean())


def write_sweep(rows: list, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"sweep_json": out / "sweep.json", "sweep_csv": out / "sweep.csv"}
    paths["sweep_json"].write_text(json.dumps(_round(rows), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _write_csv(paths["sweep_csv"], rows)
    return {k: str(v) for k, v in paths.items()}
