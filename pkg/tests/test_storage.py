import numpy as np
import pytest

from chromalign.errors import ConfigError, ParseError
from chromalign.features import build_feature_set
from chromalign.ingest import ChromatogramMatrix
from chromalign.model import init_params
from chromalign.schemas import FeatureConfig, HistoryRecord, RunConfig, TruthRecord
from chromalign.storage import (
    build_run_config,
    load_features,
    load_history,
    load_matrices,
    load_truth,
    load_weights,
    run_config_lines,
    save_features,
    save_history,
    save_matrices,
    save_truth,
    save_weights,
)
from conftest import N_MZ, SEGMENT_STEPS, make_peak, tiny_variant


def test_layers_apply_in_order(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.epochs = 5  # from the file\nseed = 3\n", encoding="utf-8")
    defaults = {"train.epochs": 3, "train.batch_size": 16}
    assert build_run_config(defaults=defaults).train.epochs == 3
    from_file = build_run_config(path, defaults=defaults)
    assert (from_file.train.epochs, from_file.train.batch_size, from_file.seed) == (5, 16, 3)
    assert build_run_config(path, ["train.epochs=7"], defaults=defaults).train.epochs == 7
    flagged = build_run_config(path, ["train.epochs=7"], {"train.epochs": 9, "seed": None})
    assert (flagged.train.epochs, flagged.seed) == (9, 3)


def test_values_are_typed(tmp_path):
    config = build_run_config(
        overrides=["channels = [103, 117]", "variant.peak_encoder = none", "align.rt_cutoff=0.5"]
    )
    assert config.channels == [103, 117]
    assert config.variant.peak_encoder == "none"
    assert config.align.rt_cutoff == 0.5


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError) as info:
        build_run_config(overrides=["train.nope = 1"])
    assert "train.nope" in str(info.value)


def test_malformed_lines_name_the_line(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\n\ntrain.epochs 5\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        build_run_config(path)
    assert "line 3" in str(info.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_run_config(tmp_path / "absent.cfg")


def test_written_config_reads_back(tmp_path):
    custom = build_run_config(
        overrides=["train.epochs = 4", "synth.rt_window = [6.0, 9.0]", "channels = [103]"]
    )
    for config in (RunConfig(), custom):
        path = tmp_path / "round.cfg"
        path.write_text("\n".join(run_config_lines(config)) + "\n", encoding="utf-8")
        assert build_run_config(path) == config


def test_config_lines_carry_descriptions():
    lines = run_config_lines()
    assert "align.rt_cutoff = 3.0  # pair comparison cut-off (minutes)" in lines
    assert any(line.startswith("variant.peak_encoder = ") for line in lines)


def test_matrices_round_trip(tmp_path, small_matrix):
    save_matrices([small_matrix], tmp_path / "m")
    (loaded,) = load_matrices(tmp_path / "m")
    assert loaded.sample_id == "S001"
    assert np.array_equal(loaded.intensity, small_matrix.intensity)


def test_empty_matrix_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_matrices(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_matrices(tmp_path / "absent")


def test_truth_round_trip(tmp_path):
    records = [
        TruthRecord(sample_id="S001", mz=103, rt_apex_true=6.123456789, group=0),
        TruthRecord(sample_id="S002", mz=110, rt_apex_true=7.5, group=3),
    ]
    assert load_truth(save_truth(records, tmp_path / "truth.csv")) == records


def test_truth_errors_name_the_row(tmp_path):
    path = tmp_path / "truth.csv"
    path.write_text("sample_id,mz,rt_apex_true,group\nS001,103,6.0,0\nS001,x,6.1,1\n")
    with pytest.raises(ParseError) as info:
        load_truth(path)
    assert info.value.row == 3
    assert info.value.column == "mz"


def test_features_round_trip(tmp_path, small_matrix):
    features, cfg = build_feature_set(
        [small_matrix], [make_peak(6.5), make_peak(6.5, mz=110)], FeatureConfig(segment_steps=40)
    )
    paths = save_features(features, cfg, tmp_path / "features")
    assert [p.name for p in paths] == ["S001.features.json"]
    loaded, loaded_cfg = load_features(tmp_path / "features")
    assert loaded_cfg == cfg
    assert [f.peak for f in loaded] == [f.peak for f in features]
    for a, b in zip(loaded, features):
        assert np.array_equal(a.mass_spectrum, b.mass_spectrum)
        assert np.array_equal(a.peak_profile, b.peak_profile)
        assert np.array_equal(a.chrom_segment, b.chrom_segment)
        assert a.height == b.height


def test_feature_bundles_must_share_a_config(tmp_path, small_matrix):
    features, cfg = build_feature_set(
        [small_matrix], [make_peak(6.5)], FeatureConfig(segment_steps=40)
    )
    save_features(features, cfg, tmp_path)
    twin = ChromatogramMatrix(
        "S002", small_matrix.rt_axis, small_matrix.mz_axis, small_matrix.intensity
    )
    moved, _ = build_feature_set([twin], [make_peak(6.5, "S002")], cfg)
    save_features(moved, cfg.model_copy(update={"segment_steps": 42}), tmp_path)
    with pytest.raises(ConfigError):
        load_features(tmp_path)


def test_weights_round_trip(tmp_path):
    params = init_params(tiny_variant("full"), N_MZ, SEGMENT_STEPS, 8)
    loaded = load_weights(save_weights(params, tmp_path / "weights.json"))
    assert loaded.variant == params.variant
    for name, value in params.tensors.items():
        assert np.array_equal(loaded.tensors[name], value)


def test_broken_weights_file(tmp_path):
    path = tmp_path / "weights.json"
    path.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_weights(path)


def test_history_round_trip(tmp_path):
    history = [
        HistoryRecord(epoch=1, split="train", output="main", loss=0.6931, accuracy=0.5),
        HistoryRecord(epoch=1, split="validation", output="chrom", loss=0.25, accuracy=1.0),
    ]
    assert load_history(save_history(history, tmp_path / "history.csv")) == history
