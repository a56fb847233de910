import numpy as np
import pytest

from chromalign.errors import ArgumentError
from chromalign.rules import (
    best_shift,
    choose_reference,
    merge_adjacent,
    rule_align,
    running_mean_groups,
    sampling_interval,
    shift_grid,
)
from chromalign.schemas import RuleParams
from conftest import make_peak


def table(sample, rts):
    return [make_peak(rt, sample) for rt in rts]


def test_identical_samples_line_up():
    result = rule_align(table("A", [6.0, 7.0, 8.0]) + table("B", [6.0, 7.0, 8.0]))
    assert result.assignment == [0, 1, 2, 0, 1, 2]
    assert result.group_rt == {0: 6.0, 1: 7.0, 2: 8.0}
    assert result.provenance.method == "rules"


def test_constant_shift_is_recovered():
    peaks = {"A": table("A", [6.0, 7.0, 8.0]), "B": table("B", [6.03, 7.03, 8.03])}
    result = rule_align(peaks, RuleParams(grid_step=0.005))
    assert result.assignment == [0, 1, 2, 0, 1, 2]
    assert result.provenance.extra["reference"] == "A"
    assert result.provenance.extra["shifts"]["B"] == pytest.approx(-0.03)


def test_rule_alignment_needs_two_samples():
    with pytest.raises(ArgumentError):
        rule_align(table("A", [6.0, 7.0]))
    with pytest.raises(ArgumentError):
        rule_align(table("A", [6.0]) + table("B", [6.0]), reference="C")


def test_reference_has_the_most_peaks():
    peaks = table("B", [1.0, 2.0]) + table("A", [1.0, 2.0]) + table("C", [1.0])
    assert choose_reference(peaks) == "A"
    assert choose_reference(peaks + table("C", [3.0, 4.0])) == "C"


def test_shift_grid_order():
    np.testing.assert_allclose(shift_grid(0.01, 0.005), [0.0, -0.005, 0.005, -0.01, 0.01])
    assert shift_grid(0.0, 0.005).tolist() == [0.0]
    assert shift_grid(0.05, None).tolist() == [0.0]


def test_best_shift_prefers_the_tightest_fit():
    grid = shift_grid(0.05, 0.01)
    shift, hits = best_shift(np.array([6.02, 7.02]), np.array([6.0, 7.0]), grid, 0.08)
    assert shift == pytest.approx(-0.02)
    assert hits == 2


def test_a_sample_appears_once_per_group():
    rts = np.array([6.0, 6.01, 6.005])
    labels, _ = running_mean_groups(rts, ["A", "A", "B"], 0.02, 10)
    assert labels[0] != labels[1]
    assert len(set(labels.tolist())) == 2


def test_close_groups_merge_unless_they_share_a_sample():
    rts = np.array([6.0, 6.05, 7.0])
    assert merge_adjacent(rts, ["A", "B", "C"], np.array([0, 1, 2]), 0.08).tolist() == [0, 0, 1]
    assert merge_adjacent(rts, ["A", "A", "C"], np.array([0, 1, 2]), 0.08).tolist() == [0, 1, 2]


def scans(sample, rts, dt=0.005, start=5.0):
    return [make_peak(rt, sample, apex_index=round((rt - start) / dt)) for rt in rts]


def test_sampling_interval_from_apex_indices():
    assert sampling_interval(scans("A", [6.0, 7.0, 9.0]) + scans("B", [6.5])) == pytest.approx(
        0.005
    )
    assert sampling_interval(table("A", [6.0, 7.0])) is None


def test_sparse_sample_still_gets_a_fine_shift_grid():
    peaks = scans("A", [6.0, 7.0, 8.0, 9.0]) + scans("B", [6.025, 9.025])
    result = rule_align(peaks)
    assert result.provenance.extra["grid_step"] == pytest.approx(0.005)
    assert result.provenance.extra["shifts"]["B"] == pytest.approx(-0.025)
    assert result.assignment == [0, 1, 2, 3, 0, 3]


def test_grid_step_precedence():
    peaks = table("A", [6.0, 7.0, 8.0, 9.0]) + table("B", [6.025, 9.025])
    assert rule_align(peaks, dt=0.005).provenance.extra["shifts"]["B"] == pytest.approx(-0.025)
    pinned = rule_align(peaks, RuleParams(grid_step=0.05), dt=0.005)
    assert pinned.provenance.extra["grid_step"] == 0.05
    unknown = rule_align(peaks)
    assert unknown.provenance.extra["grid_step"] is None
    assert unknown.provenance.extra["shifts"]["B"] == 0.0
