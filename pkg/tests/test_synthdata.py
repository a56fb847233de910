import numpy as np
import pytest

from chromalign.errors import ArgumentError, ConfigError
from chromalign.neuralnet import RngStream
from chromalign.schemas import SynthConfig, TruthRecord
from chromalign.synthdata import (
    SampleDrift,
    air_like,
    base_retention_times,
    breath_like,
    drift_offset,
    generate,
    make_templates,
    match_truth,
    max_drift,
    truth_to_labels,
)
from conftest import make_peak


def small_config(**overrides):
    values = {
        "n_samples": 3,
        "n_compounds": 3,
        "rt_window": (5.0, 8.0),
        "mz_lo": 98,
        "mz_hi": 108,
        "target_mz": 103,
        "template_channels": (3, 5),
        "noise_sd": 0.0,
        "baseline": [],
        **overrides,
    }
    return SynthConfig(**values)


def test_generation_is_seeded():
    first = generate(small_config(noise_sd=2.0, seed=4))
    again = generate(small_config(noise_sd=2.0, seed=4))
    for a, b in zip(first.matrices, again.matrices):
        assert np.array_equal(a.intensity, b.intensity)
    assert first.truth == again.truth
    other = generate(small_config(noise_sd=2.0, seed=5))
    assert not np.array_equal(first.matrices[0].intensity, other.matrices[0].intensity)


def test_new_samples_of_the_same_compounds():
    cfg = small_config(noise_sd=2.0, drift_shift_max=0.05, seed=4)
    first = generate(cfg)
    fresh = generate(cfg, sample_seed=9)
    assert np.array_equal(fresh.templates, first.templates)
    assert np.array_equal(fresh.base_rt, first.base_rt)
    assert fresh.drift != first.drift
    assert generate(cfg, sample_seed=9).drift == fresh.drift


def test_zero_drift_keeps_base_times():
    data = generate(small_config(drift_shift_max=0.0, drift_amplitude=0.0))
    for record in data.truth:
        assert record.rt_apex_true == pytest.approx(data.base_rt[record.group], abs=1e-12)


def test_drift_is_a_shift_plus_a_sinusoid():
    cfg = small_config(drift_amplitude=0.0)
    assert drift_offset(6.0, SampleDrift(shift=0.04, phase=1.0), cfg) == pytest.approx(0.04)
    wavy = small_config(drift_amplitude=0.2, drift_wavelength=4.0)
    assert drift_offset(1.0, SampleDrift(shift=0.0, phase=0.0), wavy) == pytest.approx(0.2)
    assert max_drift(wavy) == pytest.approx(0.25)


def test_shifts_stay_within_bounds():
    data = generate(small_config(drift_shift_max=0.05))
    assert all(abs(d.shift) <= 0.05 for d in data.drift.values())
    for record in data.truth:
        assert abs(record.rt_apex_true - data.base_rt[record.group]) <= 0.05


def test_truth_counts_follow_the_templates():
    data = generate(small_config())
    per_sample = int(np.count_nonzero(data.templates))
    assert len(data.truth) == 3 * per_sample
    assert [m.sample_id for m in data.matrices] == ["S001", "S002", "S003"]
    assert all(m.intensity.shape == (601, 11) for m in data.matrices)


def test_templates_share_the_target_channel():
    templates = make_templates(small_config(), RngStream(0))
    assert np.all(templates[:, 103 - 98] == 1.0)
    unique = (templates > 0).sum(axis=0) == 1
    assert np.all((templates[:, unique] > 0).sum(axis=1) >= 1)


def test_confusable_templates_copy_their_predecessor():
    cfg = small_config(confusable=True, mz_hi=120, template_channels=(5, 8))
    templates = make_templates(cfg, RngStream(1))
    shared_first = set(np.flatnonzero(templates[0])) - {103 - 98}
    shared_second = set(np.flatnonzero(templates[1]))
    assert len(shared_first & shared_second) >= len(shared_first) - 1


def test_dropout_removes_compounds():
    data = generate(small_config(n_samples=6, dropout_prob=0.5, seed=2))
    full = 6 * int(np.count_nonzero(data.templates))
    assert len(data.truth) < full


def test_window_must_fit_the_drift():
    with pytest.raises(ConfigError):
        base_retention_times(small_config(rt_window=(5.0, 5.2)))


def test_presets():
    assert air_like().drift_amplitude == 0.0
    breath = breath_like()
    assert (breath.n_samples, breath.n_compounds, breath.confusable) == (20, 8, True)
    assert max_drift(breath) <= 0.5


def truth(sample, rt, group, mz=103):
    return TruthRecord(sample_id=sample, mz=mz, rt_apex_true=rt, group=group)


def test_match_truth_picks_the_nearest_apex():
    planted = [truth("S1", 5.0, 0), truth("S1", 5.2, 1)]
    located = [("S1", 103, 5.01), ("S1", 103, 5.19), ("S1", 103, 6.0), ("S2", 103, 5.0)]
    assert match_truth(planted, located) == [0, 1, -1, -1]


def test_match_truth_is_one_to_one():
    planted = [truth("S1", 5.0, 0)]
    assert match_truth(planted, [("S1", 103, 5.02), ("S1", 103, 5.01)]) == [-1, 0]
    with pytest.raises(ArgumentError):
        match_truth(planted, [], match_tolerance=0.0)


def test_truth_to_labels_relabels_peaks():
    planted = [truth("S001", 6.0, 2), truth("S001", 6.0, 4, mz=110)]
    peaks = [make_peak(6.01), make_peak(6.3), make_peak(6.0, mz=110)]
    labelled = truth_to_labels(planted, peaks)
    assert [p.group for p in labelled] == [2, -1, 4]
    assert [p.group for p in peaks] == [-1, -1, -1]
