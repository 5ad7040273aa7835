import copy
import json

import numpy as np
import pytest

from fairsynth.pipeline import (ConfigError, PipelineConfig, RunManifest, StageError, emit_report, load_batch,
                                make_sampler, prepare, run_alpha_sweep, run_pipeline, save_batch, write_sweep)
from fairsynth.representation import LdssSampler, UniformSampler
from fairsynth.triple_gan import generate

SMALL = {
    "dataset": {"kind": "biased", "spec": {"n_rows": 1500, "correlation_strength": 0.6, "minority_fraction": 0.3,
                                           "label_missing_fraction": 0.2, "seed": 1}},
    "subgroups": [{"id": "c1", "conditions": [{"column": "segment", "equals": "c1"}]},
                  {"id": "s1", "conditions": [{"column": "s", "equals": "1"}]}],
    "training": {"batch_size": 256, "learning_rate": 1e-3, "epochs": 2, "noise_dim": 8},
    "transform_epochs": 1,
    "mine": {"alpha_fairness": 1.0},
    "drs": {"burn_in": 500},
    "evaluation": {"mine_steps": 100, "models": ["linear_classifier"]},
    "seed": 0,
}


def small(**kw):
    raw = copy.deepcopy(SMALL)
    raw.update(kw)
    return raw


def test_config_defaults_and_variants():
    cfg = PipelineConfig.from_dict(small())
    assert cfg.variant == "btgan_full" and cfg.uses_drs and cfg.uses_ldss
    base = PipelineConfig.from_dict(small(), variant="baseline_alpha0")
    assert base.alpha == 0.0 and not base.uses_drs and not base.uses_ldss
    minus = PipelineConfig.from_dict(small(), variant="btgan_minus")
    assert minus.alpha == 1.0 and not minus.uses_drs and not minus.uses_ldss
    assert len({cfg.config_hash(), base.config_hash(), minus.config_hash()}) == 3


def test_stage2_epochs_default_to_a_quarter():
    raw = small()
    del raw["transform_epochs"]
    raw["training"]["epochs"] = 8
    assert PipelineConfig.from_dict(raw).stage2_epochs() == 2


@pytest.mark.parametrize("raw", [
    {"subgroups": []},
    {**SMALL, "bogus": 1},
    {**SMALL, "variant": "nope"},
    {**SMALL, "training": {"batch_size": 0}},
    {**SMALL, "mine": {"alpha_fairness": -1}},
    {**SMALL, "drs": {"l_constant_percentile": 2}},
])
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(raw)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "absent.yaml")


def test_bad_subgroup_column():
    cfg = PipelineConfig.from_dict(small(subgroups=[{"id": "x", "conditions": [{"column": "zzz", "equals": "1"}]}]))
    with pytest.raises(Exception):
        prepare(cfg)


def test_sampler_choice():
    cfg = PipelineConfig.from_dict(small(), variant="btgan_minus")
    ctx = prepare(cfg)

    class Fake:
        def lds_matrix(self):
            return np.array([[-0.3, 0.1]])

    assert isinstance(make_sampler(ctx, Fake()), UniformSampler)
    full = prepare(PipelineConfig.from_dict(small()))
    assert isinstance(make_sampler(full, Fake()), LdssSampler)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = PipelineConfig.from_dict(small(), output_dir=str(out))
    cache = {}
    manifest, report = run_pipeline(cfg, cache=cache)
    return cfg, manifest, report, out, cache


def test_run_writes_artifacts(full_run):
    cfg, manifest, report, out, _ = full_run
    for name in ("report.json", "tables.csv", "bands.csv", "manifest.json", "pretrain.pt", "transform.pt",
                 "synthetic.npz", "synthetic.csv"):
        assert (out / name).exists(), name
    assert manifest.verify()
    assert manifest.config_hash == cfg.config_hash()
    assert report["drs"]["applied"] and 0 < report["drs"]["acceptance_rate"] <= 1
    assert report["n_synthetic"] == report["n_train"]
    assert {"real", "synthetic", "representation", "mi", "stage1_lds"} <= set(report)
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk["variant"] == "btgan_full"


def test_manifest_detects_tampering(full_run, tmp_path):
    _, manifest, _, out, _ = full_run
    copy_ = RunManifest(**manifest.to_dict())
    victim = tmp_path / "report.json"
    victim.write_text((out / "report.json").read_text() + " ")
    copy_.reports = {**copy_.reports, "report": str(victim)}
    assert not copy_.verify()


def test_run_is_reproducible(full_run, tmp_path):
    cfg, _, _, out, _ = full_run
    again = PipelineConfig.from_dict(small(), output_dir=str(tmp_path))
    run_pipeline(again)
    for name in ("report.json", "tables.csv", "bands.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_stage1_cache_is_shared_across_variants(full_run, tmp_path):
    _, _, _, _, cache = full_run
    assert len(cache) == 1
    cfg = PipelineConfig.from_dict(small(), variant="baseline_alpha0", output_dir=str(tmp_path))
    _, report = run_pipeline(cfg, cache=cache, write=False)
    assert len(cache) == 1
    assert not report["drs"]["applied"]


def test_stage_errors_name_the_stage(tmp_path):
    cfg = PipelineConfig.from_dict(small(drs={"burn_in": 500, "gamma_shift": 40.0, "max_attempts_factor": 1}),
                                   output_dir=str(tmp_path))
    with pytest.raises(StageError) as err:
        run_pipeline(cfg, write=False)
    assert err.value.stage == "sample"


def test_emit_report_needs_synthetic_section(tmp_path):
    with pytest.raises(ValueError):
        emit_report({}, tmp_path)


def test_batch_round_trip(full_run, tmp_path):
    cfg = full_run[0]
    ctx = prepare(cfg)
    from fairsynth.triple_gan import load_bundle
    bundle = load_bundle(full_run[3] / "transform.pt", ctx.train)
    b = generate(bundle, 20, 0)
    save_batch(b, tmp_path / "b.npz")
    back = load_batch(tmp_path / "b.npz")
    np.testing.assert_array_equal(back.x_prime, b.x_prime)
    assert back.acceptance_rate is None and back.stage == b.stage


def test_alpha_sweep_table(full_run, tmp_path):
    cfg, *_, cache = full_run
    rows = run_alpha_sweep(cfg, [0.0, 0.5, 1.0], cache=cache)
    assert [r["alpha"] for r in rows] == [0.0, 0.5, 1.0]
    assert set(rows[0]) >= {"train_acc", "test_acc", "mi_estimate", "parity_gap"}
    paths = write_sweep(rows, tmp_path)
    assert len((tmp_path / "sweep.csv").read_text().strip().splitlines()) == 4
    with pytest.raises(ConfigError):
        run_alpha_sweep(cfg, [0.0])
