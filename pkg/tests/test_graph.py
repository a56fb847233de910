from pathlib import Path

import pytest

from chromalign.graph import build_pipeline_graph
from chromalign.nodes import detect, has_truth, simulate, wants_report
from chromalign.schemas import RunConfig, VariantConfig
from chromalign.smoke_test import smoke_config
from chromalign.synthdata import air_like, breath_like


def test_routing():
    assert has_truth({"truth": []}) == "extract"
    assert has_truth({"truth": ["x"]}) == "label"
    assert wants_report({"output_dir": "out"}) == "report"
    assert wants_report({}) != "report"


def test_smoke_pipeline_runs_in_memory():
    result = build_pipeline_graph().invoke({"run_config": smoke_config()})
    assert result["peaks"]
    assert any(p.group >= 0 for p in result["peaks"])
    assert len(result["alignment"].assignment) == len(result["features"])
    assert {"group", "pairwise", "provenance", "holdout"} <= set(result["metrics"])
    assert "written" not in result


def test_pairwise_metrics_come_from_unseen_samples():
    cfg = smoke_config()
    result = build_pipeline_graph().invoke({"run_config": cfg})
    holdout = result["metrics"]["holdout"]
    assert holdout["seed"] == cfg.synth.seed + 1
    assert holdout["peaks"] == len(result["holdout_features"])
    assert {f.rt for f in result["holdout_features"]} != {f.rt for f in result["features"]}
    pinned = cfg.model_copy(update={"holdout_seed": 42})
    assert build_pipeline_graph().invoke({"run_config": pinned})["metrics"]["holdout"]["seed"] == 42


def test_smoke_pipeline_writes_reports(tmp_path):
    state = {"run_config": smoke_config(), "output_dir": str(tmp_path)}
    result = build_pipeline_graph().invoke(state)
    names = {Path(p).name for p in result["written"]}
    assert {"truth.csv", "weights.json", "history.csv", "alignment.csv", "metrics.json"} <= names
    assert (tmp_path / "matrices").is_dir()


def test_synthetic_runs_detect_on_the_shared_channel():
    cfg = RunConfig()
    state = detect(simulate({"run_config": cfg}))
    assert {p.mz for p in state["peaks"]} == {cfg.synth.target_mz}
    per_sample = {}
    for peak in state["peaks"]:
        per_sample[peak.sample_id] = per_sample.get(peak.sample_id, 0) + 1
    assert len(per_sample) == cfg.synth.n_samples
    assert max(per_sample.values()) <= cfg.synth.n_compounds


def test_explicit_channels_win_over_the_synthetic_default():
    cfg = RunConfig(channels=[103, 110])
    assert cfg.detect_channels(synthetic=True) == [103, 110]
    assert RunConfig().detect_channels() is None
    assert RunConfig().detect_channels(synthetic=True) == [103]


def end_to_end(cfg):
    return build_pipeline_graph().invoke({"run_config": cfg})


def preset_run(synth):
    return smoke_config().model_copy(
        update={
            "synth": synth,
            "variant": VariantConfig(peak_encoder="none", dense_units=32),
            "train": smoke_config().train.model_copy(update={"epochs": 50}),
        }
    )


@pytest.mark.slow
def test_default_config_aligns_without_fake_groups():
    cfg = RunConfig(variant=VariantConfig(peak_encoder="none", dense_units=32))
    result = end_to_end(cfg)
    alignment = result["alignment"]
    members = {}
    for feature, group in zip(result["features"], alignment.assignment):
        members.setdefault(group, []).append(feature.sample_id)
    assert all(len(ids) == len(set(ids)) for ids in members.values())
    assert result["metrics"]["group"]["tp_rate"] >= 0.9
    assert result["metrics"]["group"]["fdr"] <= 0.1


@pytest.mark.slow
def test_air_like_pairs_are_separated():
    result = end_to_end(preset_run(air_like(n_samples=10, n_compounds=6, seed=1)))
    assert result["metrics"]["auc"] >= 0.999


@pytest.mark.slow
def test_breath_like_alignment():
    result = end_to_end(preset_run(breath_like(n_samples=20, n_compounds=8, seed=2)))
    metrics = result["metrics"]
    assert metrics["holdout"]["pairs"] > 0
    assert metrics["auc"] >= 0.95
    assert metrics["group"]["tp_rate"] >= 0.9
    assert metrics["group"]["fdr"] <= 0.1
