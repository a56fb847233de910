import numpy as np
import pytest

from chromalign.errors import ArgumentError, DataValidationError
from chromalign.schemas import AlsParams, PeakDetectParams
from chromalign.signal_processing import (
    als_baseline,
    correct_baseline,
    detect_matrix,
    detect_peaks,
    process_trace,
    smoothed_derivatives,
    subtract_baseline,
)
from conftest import gaussian, make_trace


def dense_als(y, lam, p, iterations):
    n = y.size
    D = np.diff(np.eye(n), 2, axis=0)
    penalty = lam * D.T @ D
    w = np.ones(n)
    z = y
    for _ in range(iterations):
        z = np.linalg.solve(np.diag(w) + penalty, w * y)
        w = np.where(y > z, p, 1 - p)
    return z


def test_constant_trace_is_its_own_baseline():
    y = np.full(200, 5.0)
    np.testing.assert_allclose(als_baseline(y), y, atol=1e-6)


def test_linear_trace_is_its_own_baseline():
    y = 3.0 + 0.25 * np.arange(300)
    np.testing.assert_allclose(als_baseline(y), y, atol=1e-6)


def test_baseline_matches_dense_solve():
    rng = np.random.default_rng(1)
    i = np.arange(150)
    y = 10 + 0.05 * i + gaussian(i, 70.0, 6.0, 40.0) + rng.normal(0, 0.5, i.size)
    params = AlsParams(lam=1e3, p=0.01, iterations=6)
    expected = dense_als(y, params.lam, params.p, params.iterations)
    np.testing.assert_allclose(als_baseline(y, params), expected, rtol=1e-6, atol=1e-6)


def test_baseline_ignores_a_bump():
    i = np.arange(500, dtype=np.float64)
    line = 10 + 0.02 * i
    y = line + gaussian(i, 250.0, 10.0, 50.0)
    baseline = als_baseline(y, AlsParams(lam=1e5, p=0.001, iterations=10))
    far = np.abs(i - 250.0) >= 30.0
    assert np.all(np.abs(baseline[far] - line[far]) <= 0.01 * line[far])


def test_baseline_follows_a_constant_offset():
    rng = np.random.default_rng(2)
    i = np.arange(400, dtype=np.float64)
    y = 20 + gaussian(i, 150.0, 8.0, 30.0) + rng.normal(0, 1.0, i.size)
    shift = 7.0
    moved = als_baseline(y + shift) - als_baseline(y)
    assert np.max(np.abs(moved - shift)) <= 1e-8 * np.max(np.abs(y))


def test_baseline_rejects_short_and_non_finite_traces():
    with pytest.raises(ArgumentError):
        als_baseline(np.ones(3))
    with pytest.raises(DataValidationError):
        als_baseline(np.array([1.0, np.nan, 2.0, 3.0, 4.0]))


def test_subtract_baseline_rules():
    trace = make_trace([5.0, 6.0, 7.0, 8.0])
    assert np.all(subtract_baseline(trace, trace.intensity).intensity == 0.0)
    np.testing.assert_allclose(subtract_baseline(trace, trace.intensity - 3).intensity, 3.0)
    clamped = subtract_baseline(trace, np.array([10.0, 0.0, 10.0, 0.0]))
    assert clamped.intensity.tolist() == [0.0, 6.0, 0.0, 8.0]
    with pytest.raises(ArgumentError):
        subtract_baseline(trace, np.zeros(3))


def test_derivatives_of_a_line():
    y = 2.0 + 1.5 * np.arange(60)
    d1, d2 = smoothed_derivatives(y, 11, 3)
    np.testing.assert_allclose(d1[5:-5], 1.5, atol=1e-9)
    np.testing.assert_allclose(d2[5:-5], 0.0, atol=1e-9)


def test_second_derivative_of_a_quadratic():
    i = np.arange(60, dtype=np.float64)
    _, d2 = smoothed_derivatives(0.3 * i**2, 11, 3)
    np.testing.assert_allclose(d2[5:-5], 0.6, atol=1e-9)


def test_first_derivative_of_a_sine():
    i = np.arange(200, dtype=np.float64)
    d1, _ = smoothed_derivatives(np.sin(0.05 * i), 9, 3)
    expected = 0.05 * np.cos(0.05 * i)
    np.testing.assert_allclose(d1[4:-4], expected[4:-4], rtol=1e-3, atol=5e-5)


@pytest.mark.parametrize("window, order", [(10, 3), (3, 2), (11, 11), (11, 1)])
def test_derivatives_reject_bad_windows(window, order):
    with pytest.raises(ArgumentError):
        smoothed_derivatives(np.ones(50), window, order)


def test_single_gaussian_gives_one_peak():
    dt = 0.01
    i = np.arange(200, dtype=np.float64)
    trace = make_trace(gaussian(i, 100.0, 10.0, 100.0), dt=dt)
    peaks = detect_peaks(trace)
    assert len(peaks) == 1
    assert abs(peaks[0].apex_index - 100) <= 1
    assert peaks[0].rt_start < peaks[0].rt_apex < peaks[0].rt_end
    assert peaks[0].area == pytest.approx(100.0 * 10.0 * np.sqrt(2 * np.pi) * dt, rel=0.05)


def test_flat_trace_has_no_peaks():
    assert detect_peaks(make_trace(np.zeros(100))) == []


def test_two_separated_gaussians():
    dt = 0.01
    i = np.arange(300, dtype=np.float64)
    y = gaussian(i, 100.0, 10.0, 100.0) + gaussian(i, 180.0, 10.0, 60.0)
    peaks = detect_peaks(make_trace(y, dt=dt))
    assert len(peaks) == 2
    assert peaks[0].rt_apex < peaks[1].rt_apex
    for peak, amplitude in zip(peaks, (100.0, 60.0)):
        expected = amplitude * 10.0 * np.sqrt(2 * np.pi) * dt
        assert peak.area == pytest.approx(expected, rel=0.05)


def test_min_area_filters_small_peaks():
    i = np.arange(300, dtype=np.float64)
    y = gaussian(i, 100.0, 10.0, 100.0) + gaussian(i, 200.0, 10.0, 5.0)
    peaks = detect_peaks(make_trace(y), PeakDetectParams(min_area=2.0, d1_threshold=0.01))
    assert len(peaks) == 1
    assert peaks[0].apex_index == pytest.approx(100, abs=1)


def test_process_trace_on_a_sloping_baseline():
    i = np.arange(400, dtype=np.float64)
    y = 50 + 0.1 * i + gaussian(i, 200.0, 8.0, 400.0)
    corrected = correct_baseline(make_trace(y))
    assert corrected.intensity.min() >= 0.0
    peaks = process_trace(make_trace(y))
    assert len(peaks) == 1
    assert abs(peaks[0].apex_index - 200) <= 1


def test_detect_matrix_covers_each_channel(small_matrix):
    peaks = detect_matrix(small_matrix)
    assert sorted(p.mz for p in peaks) == [100, 103, 110]
    assert all(abs(p.rt_apex - 6.5) <= 0.011 for p in peaks)
    only = detect_matrix(small_matrix, channels=[103])
    assert [p.mz for p in only] == [103]
