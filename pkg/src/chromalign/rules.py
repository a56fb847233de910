"""Three-stage rule-based aligner working on peak tables alone.

1. Shift every sample by the constant (from a grid within +/- max_linear_shift)
   that lands most of its peaks near a reference sample's peaks.
2. Sweep the peaks in retention-time order, attaching each to the nearest
   provisional group whose running mean is within max_diff_peak2mean, until the
   partition stops changing.
3. Merge neighbouring groups whose means are closer than min_diff_peak2peak.
"""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError
from .grouping import assign_group_rt, dense_labels
from .schemas import AlignmentResult, Peak, Provenance, RuleParams

logger = logging.getLogger(__name__)

MAX_GRID_POINTS = 2001


def _flatten(peaks: Mapping[str, Sequence[Peak]] | Sequence[Peak]) -> list[Peak]:
    if isinstance(peaks, Mapping):
        return [p for table in peaks.values() for p in table]
    return list(peaks)


def choose_reference(peaks: Sequence[Peak]) -> str:
    """Sample with the most peaks; ties go to the smallest id."""
    counts: dict[str, int] = {}
    for p in peaks:
        counts[p.sample_id] = counts.get(p.sample_id, 0) + 1
    return min(counts, key=lambda sample: (-counts[sample], sample))


def sampling_interval(peaks: Sequence[Peak]) -> float | None:
    """Minutes per scan implied by apex indices, from the sample spanning the most scans."""
    spans: dict[str, tuple[Peak, Peak]] = {}
    for peak in peaks:
        if peak.apex_index is None:
            continue
        lo, hi = spans.get(peak.sample_id, (peak, peak))
        spans[peak.sample_id] = (
            min(lo, peak, key=lambda p: p.apex_index),
            max(hi, peak, key=lambda p: p.apex_index),
        )
    best, widest = None, 0
    for lo, hi in spans.values():
        scans = hi.apex_index - lo.apex_index
        if scans > widest:
            best, widest = (hi.rt_apex - lo.rt_apex) / scans, scans
    return best


def shift_grid(max_shift: float, step: float | None) -> np.ndarray:
    """Candidate shifts ordered by |shift| then value."""
    if max_shift <= 0 or step is None or step <= 0:
        return np.zeros(1)
    count = int(np.floor(max_shift / step + 1e-9))
    if 2 * count + 1 > MAX_GRID_POINTS:
        count = (MAX_GRID_POINTS - 1) // 2
        step = max_shift / count
    grid = step * np.arange(-count, count + 1)
    return grid[np.lexsort((grid, np.abs(grid)))]


def nearest_gap(values: np.ndarray, sorted_reference: np.ndarray) -> np.ndarray:
    last = sorted_reference.size - 1
    pos = np.searchsorted(sorted_reference, values)
    below = sorted_reference[np.clip(pos - 1, 0, last)]
    above = sorted_reference[np.clip(pos, 0, last)]
    return np.minimum(np.abs(values - below), np.abs(values - above))


def best_shift(
    rts: np.ndarray, reference: np.ndarray, grid: np.ndarray, tolerance: float
) -> tuple[float, int]:
    """Shift landing most peaks within ``tolerance`` of a reference peak.

    Equal counts are decided by the smaller summed gap of the matched peaks,
    then by grid order (smallest |shift| first).
    """
    reference = np.sort(reference)
    best, best_hits, best_spread = 0.0, -1, np.inf
    for shift in grid:
        gaps = nearest_gap(rts + shift, reference)
        matched = gaps <= tolerance
        hits = int(matched.sum())
        spread = float(gaps[matched].sum())
        if hits > best_hits or (hits == best_hits and spread < best_spread - 1e-12):
            best, best_hits, best_spread = float(shift), hits, spread
    return best, best_hits


def _sweep(
    rts: np.ndarray, samples: list[str], order: np.ndarray, anchors: list[float], tolerance: float
) -> np.ndarray:
    means: list[float] = list(anchors)
    sums = [0.0] * len(anchors)
    counts = [0] * len(anchors)
    members: list[set[str]] = [set() for _ in anchors]
    labels = np.full(rts.size, -1, dtype=np.int64)
    for index in order:
        rt = rts[index]
        best, best_gap = -1, np.inf
        for group, mean in enumerate(means):
            gap = abs(rt - mean)
            if gap <= tolerance and gap < best_gap and samples[index] not in members[group]:
                best, best_gap = group, gap
        if best < 0:
            means.append(rt)
            sums.append(0.0)
            counts.append(0)
            members.append(set())
            best = len(means) - 1
        sums[best] += rt
        counts[best] += 1
        means[best] = sums[best] / counts[best]
        members[best].add(samples[index])
        labels[index] = best
    return labels


def _means(rts: np.ndarray, labels: np.ndarray) -> list[float]:
    return sorted(float(rts[labels == g].mean()) for g in np.unique(labels))


def _within_variance(rts: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for group in np.unique(labels):
        member_rts = rts[labels == group]
        total += float(np.sum((member_rts - member_rts.mean()) ** 2))
    return total


def running_mean_groups(
    rts: np.ndarray, samples: list[str], tolerance: float, max_sweeps: int
) -> tuple[np.ndarray, int]:
    order = np.lexsort((np.arange(rts.size), rts))
    labels = dense_labels(_sweep(rts, samples, order, [], tolerance))
    variance = _within_variance(rts, labels)
    for sweep in range(2, max_sweeps + 1):
        updated = dense_labels(_sweep(rts, samples, order, _means(rts, labels), tolerance))
        if np.array_equal(updated, labels):
            return labels, sweep
        new_variance = _within_variance(rts, updated)
        if new_variance > variance + 1e-12:
            logger.warning(
                "sweep %d raised within-group variance from %.6g to %.6g",
                sweep,
                variance,
                new_variance,
            )
        labels, variance = updated, new_variance
    logger.warning("running-mean grouping stopped at the %d-sweep cap", max_sweeps)
    return labels, max_sweeps


def merge_adjacent(
    rts: np.ndarray, samples: list[str], labels: np.ndarray, min_gap: float
) -> np.ndarray:
    groups = sorted(np.unique(labels), key=lambda g: (rts[labels == g].mean(), g))
    merged = labels.copy()
    current = groups[0]
    for group in groups[1:]:
        here = merged == current
        there = merged == group
        overlap = {samples[i] for i in np.flatnonzero(here)} & {
            samples[i] for i in np.flatnonzero(there)
        }
        if abs(rts[there].mean() - rts[here].mean()) < min_gap and not overlap:
            merged[there] = current
        else:
            current = group
    return dense_labels(merged)


def rule_align(
    peaks: Mapping[str, Sequence[Peak]] | Sequence[Peak],
    params: RuleParams | None = None,
    reference: str = "auto",
    dt: float | None = None,
) -> AlignmentResult:
    """Rule-based groups for peak tables of two or more samples.

    The stage-1 grid step is ``params.grid_step``, else the sampling interval
    ``dt``, else the interval implied by the peaks' apex indices.
    """
    params = params or RuleParams()
    flat = _flatten(peaks)
    samples = [p.sample_id for p in flat]
    sample_ids = sorted(set(samples))
    if len(sample_ids) < 2:
        raise ArgumentError("rule alignment needs at least two samples")
    ref = choose_reference(flat) if reference == "auto" else reference
    if ref not in sample_ids:
        raise ArgumentError(f"reference sample {ref!r} has no peaks")
    rts = np.array([p.rt_apex for p in flat], dtype=np.float64)
    sample_arr = np.array(samples)
    step = params.grid_step or dt or sampling_interval(flat)
    if step is None:
        logger.warning("no sampling interval known; stage 1 only tries a zero shift")
    grid = shift_grid(params.max_linear_shift, step)
    ref_rts = rts[sample_arr == ref]
    shifted = rts.copy()
    shifts: dict[str, float] = {}
    for sample in sample_ids:
        mask = sample_arr == sample
        if sample == ref:
            shifts[sample] = 0.0
            continue
        shifts[sample], hits = best_shift(rts[mask], ref_rts, grid, params.min_diff_peak2peak)
        shifted[mask] += shifts[sample]
        logger.debug("%s: shift %+.4f min (%d matched peaks)", sample, shifts[sample], hits)
    labels, sweeps = running_mean_groups(
        shifted, samples, params.max_diff_peak2mean, params.max_sweeps
    )
    labels = merge_adjacent(shifted, samples, labels, params.min_diff_peak2peak)
    group_rt = assign_group_rt(labels, flat)
    logger.info(
        "rule alignment: %d peaks, %d groups, reference %s, %d sweeps",
        len(flat),
        len(group_rt),
        ref,
        sweeps,
    )
    return AlignmentResult(
        assignment=labels.tolist(),
        group_rt=group_rt,
        provenance=Provenance(
            method="rules",
            extra={
                "reference": ref,
                "shifts": shifts,
                "sweeps": sweeps,
                "grid_step": step,
                **params.model_dump(exclude={"grid_step"}),
            },
        ),
    )
