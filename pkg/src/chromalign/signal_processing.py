from __future__ import annotations

import logging
from typing import Iterable

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solveh_banded
from scipy.signal import savgol_filter

from .errors import ArgumentError, DataValidationError
from .ingest import ChromatogramMatrix, SicTrace, slice_sic
from .schemas import AlsParams, Peak, PeakDetectParams

logger = logging.getLogger(__name__)

_SECOND_DIFFERENCE = np.array([1.0, -2.0, 1.0])


def _values(trace: SicTrace | np.ndarray) -> np.ndarray:
    if isinstance(trace, SicTrace):
        return trace.intensity
    return np.asarray(trace, dtype=np.float64)


def second_difference_bands(n: int) -> np.ndarray:
    """D^T D for the second-difference operator in upper banded storage (3 x n)."""
    bands = np.zeros((3, n))
    rows = np.arange(n - 2)
    for a in range(3):
        for b in range(a, 3):
            np.add.at(bands[2 - (b - a)], rows + b, _SECOND_DIFFERENCE[a] * _SECOND_DIFFERENCE[b])
    return bands


def als_baseline(trace: SicTrace | np.ndarray, params: AlsParams | None = None) -> np.ndarray:
    """Asymmetric least squares baseline.

    Minimises sum(w * (y - z)**2) + lam * sum(diff(z, 2)**2), reweighting with
    ``p`` above the current baseline and ``1 - p`` elsewhere, starting from unit
    weights. Each iteration is a pentadiagonal solve.
    """
    params = params or AlsParams()
    y = _values(trace)
    if y.size < 4:
        raise ArgumentError(f"baseline needs at least 4 points, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise DataValidationError("trace contains non-finite values")
    penalty = params.lam * second_difference_bands(y.size)
    weights = np.ones_like(y)
    baseline = y
    for _ in range(params.iterations):
        system = penalty.copy()
        system[2] += weights
        baseline = solveh_banded(system, weights * y)
        weights = np.where(y > baseline, params.p, 1.0 - params.p)
    if not np.all(np.isfinite(baseline)):
        raise DataValidationError("baseline solve produced non-finite values")
    return baseline


def subtract_baseline(trace: SicTrace, baseline: np.ndarray) -> SicTrace:
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != trace.intensity.shape:
        raise ArgumentError(
            f"baseline length {baseline.size} does not match trace length {len(trace)}"
        )
    return trace.with_intensity(np.maximum(trace.intensity - baseline, 0.0))


def correct_baseline(trace: SicTrace, params: AlsParams | None = None) -> SicTrace:
    return subtract_baseline(trace, als_baseline(trace, params))


def smoothed_derivatives(
    trace: SicTrace | np.ndarray, window: int, polyorder: int
) -> tuple[np.ndarray, np.ndarray]:
    """First and second Savitzky-Golay derivatives per sample step; edges use end fits."""
    y = _values(trace)
    if window % 2 == 0 or window < 5:
        raise ArgumentError(f"window must be odd and >= 5, got {window}")
    if window > y.size:
        raise ArgumentError(f"window {window} longer than trace ({y.size} points)")
    if not 2 <= polyorder < window:
        raise ArgumentError(f"polyorder must lie in [2, {window - 1}], got {polyorder}")
    d1 = savgol_filter(y, window, polyorder, deriv=1, delta=1.0, mode="interp")
    d2 = savgol_filter(y, window, polyorder, deriv=2, delta=1.0, mode="interp")
    return d1, d2


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def _local_maxima(y: np.ndarray) -> np.ndarray:
    mask = np.zeros(y.size, dtype=bool)
    if y.size >= 3:
        mask[1:-1] = (y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])
    return mask


def detect_peaks(trace: SicTrace, params: PeakDetectParams | None = None) -> list[Peak]:
    params = params or PeakDetectParams()
    y = trace.intensity
    if y.size < params.smooth_window:
        logger.debug("%s m/z %d: trace shorter than smoothing window", trace.sample_id, trace.mz)
        return []
    d1, d2 = smoothed_derivatives(y, params.smooth_window, params.smooth_polyorder)
    threshold = params.d1_threshold
    if threshold is None:
        threshold = params.d1_threshold_fraction * float(np.max(np.abs(d1)))
    if threshold <= 0:
        return []

    rising = np.flatnonzero((d1[:-1] < threshold) & (d1[1:] >= threshold))
    settling = np.flatnonzero((d1[:-1] < -threshold) & (d1[1:] >= -threshold)) + 1
    maxima = _local_maxima(y)
    rt = trace.rt_axis

    peaks: list[Peak] = []
    for run_start, run_end in _runs(d2 < 0):
        if not maxima[run_start : run_end + 1].any():
            continue
        apex = run_start + int(np.argmin(d2[run_start : run_end + 1]))
        left = rising[rising < apex]
        start = int(left[-1]) if left.size else run_start
        right = settling[settling > apex]
        end = int(right[0]) if right.size else run_end
        if not start < apex < end:
            continue
        if end - start + 1 < params.min_width:
            continue
        if y[apex] < y[start] or y[apex] < y[end]:
            continue
        area = float(trapezoid(y[start : end + 1], rt[start : end + 1]))
        if area < params.min_area:
            continue
        peaks.append(
            Peak(
                sample_id=trace.sample_id,
                mz=trace.mz,
                rt_start=float(rt[start]),
                rt_apex=float(rt[apex]),
                rt_end=float(rt[end]),
                area=area,
                apex_index=apex,
                height=float(y[apex]),
            )
        )
    peaks.sort(key=lambda p: p.rt_apex)
    return peaks


def process_trace(
    trace: SicTrace, als: AlsParams | None = None, detect: PeakDetectParams | None = None
) -> list[Peak]:
    if len(trace) < 4:
        return []
    return detect_peaks(correct_baseline(trace, als), detect)


def detect_matrix(
    matrix: ChromatogramMatrix,
    als: AlsParams | None = None,
    detect: PeakDetectParams | None = None,
    channels: Iterable[int] | None = None,
) -> list[Peak]:
    selected = [int(m) for m in matrix.mz_axis] if channels is None else list(channels)
    peaks: list[Peak] = []
    for mz in selected:
        peaks.extend(process_trace(slice_sic(matrix, mz), als, detect))
    logger.info("%s: %d peaks over %d channels", matrix.sample_id, len(peaks), len(selected))
    return peaks
