"""From pairwise probabilities to alignment groups.

Pairs farther apart than the retention-time cut-off get probability 0 without
touching the model. Probabilities become distances (1/p, floored), distances
are clustered with average linkage, groups holding two peaks of one sample are
split by retention-time rank, and each group gets an intensity-weighted RT.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .config import get_settings
from .errors import ArgumentError
from .features import PeakFeatures
from .model import ModelParams, encode_features, score_embedded_pairs
from .schemas import AlignConfig, AlignmentResult, Peak, Provenance, TimingRow

logger = logging.getLogger(__name__)


class PairwiseResult(NamedTuple):
    i: int
    j: int
    probability: float
    within_cutoff: bool


@dataclass(frozen=True, eq=False)
class PairwiseResults:
    """Columnar pair table in condensed order (i < j, row-major)."""

    n: int
    i: np.ndarray
    j: np.ndarray
    probability: np.ndarray
    within_cutoff: np.ndarray

    def __len__(self) -> int:
        return int(self.i.size)

    def __iter__(self) -> Iterator[PairwiseResult]:
        for a, b, p, w in zip(self.i, self.j, self.probability, self.within_cutoff):
            yield PairwiseResult(int(a), int(b), float(p), bool(w))

    @property
    def n_scored(self) -> int:
        return int(self.within_cutoff.sum())


def predict_all_pairs(
    params: ModelParams,
    features: Sequence[PeakFeatures],
    rt_cutoff: float,
    batch_size: int | None = None,
) -> PairwiseResults:
    if rt_cutoff <= 0:
        raise ArgumentError(f"rt_cutoff must be positive, got {rt_cutoff}")
    n = len(features)
    first, second = np.triu_indices(n, 1)
    probability = np.zeros(first.size)
    rt = np.array([f.rt for f in features], dtype=np.float64)
    drt = np.abs(rt[first] - rt[second])
    within = drt <= rt_cutoff
    scored = np.flatnonzero(within)
    if scored.size:
        chunk = batch_size or get_settings().predict_batch
        embeddings = encode_features(params, features)
        for start in range(0, scored.size, chunk):
            sel = scored[start : start + chunk]
            probability[sel] = score_embedded_pairs(
                params, embeddings, first[sel], second[sel], drt[sel]
            )
    logger.info(
        "scored %d of %d pairs (cut-off %.3g min)", scored.size, first.size, rt_cutoff
    )
    return PairwiseResults(n, first, second, probability, within)


def to_distances(results: PairwiseResults, probability_floor: float = 1e-6) -> np.ndarray:
    """Condensed distances 1/max(p, floor)."""
    return 1.0 / np.maximum(results.probability, probability_floor)


def _condensed_to_square(condensed: np.ndarray) -> np.ndarray:
    condensed = np.asarray(condensed, dtype=np.float64)
    n = int(round((1 + np.sqrt(1 + 8 * condensed.size)) / 2)) if condensed.size else 1
    if n * (n - 1) // 2 != condensed.size:
        raise ArgumentError(f"{condensed.size} is not a condensed matrix size")
    square = np.zeros((n, n))
    first, second = np.triu_indices(n, 1)
    square[first, second] = condensed
    square[second, first] = condensed
    return square


def dense_labels(labels: Sequence[int] | np.ndarray) -> np.ndarray:
    """Renumber labels 0.. in order of each group's smallest member index."""
    labels = np.asarray(labels)
    out = np.empty(labels.size, dtype=np.int64)
    mapping: dict[int, int] = {}
    for index, label in enumerate(labels.tolist()):
        if label not in mapping:
            mapping[label] = len(mapping)
        out[index] = mapping[label]
    return out


def upgma_cluster(distances: np.ndarray, cut: float) -> np.ndarray:
    """Average-linkage clustering stopped when the closest clusters are farther than ``cut``.

    Ties go to the lowest (row, column) slot, where a cluster occupies the slot
    of its smallest member.
    """
    square = _condensed_to_square(distances)
    n = square.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    work = square.copy()
    np.fill_diagonal(work, np.inf)
    sizes = np.ones(n)
    labels = np.arange(n)
    for _ in range(n - 1):
        flat = int(np.argmin(work))
        a, b = divmod(flat, n)
        if not work[a, b] <= cut:
            break
        a, b = min(a, b), max(a, b)
        merged = (sizes[a] * work[a] + sizes[b] * work[b]) / (sizes[a] + sizes[b])
        work[a, :] = merged
        work[:, a] = merged
        work[a, a] = np.inf
        work[b, :] = np.inf
        work[:, b] = np.inf
        sizes[a] += sizes[b]
        labels[labels == b] = a
    return dense_labels(labels)


def enforce_sample_uniqueness(
    assignment: Sequence[int] | np.ndarray, peaks: Sequence[Peak | PeakFeatures]
) -> np.ndarray:
    """Split groups holding several peaks of one sample by within-sample RT rank."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.size != len(peaks):
        raise ArgumentError("assignment does not cover every peak")
    samples = [p.sample_id for p in peaks]
    rts = [_rt(p) for p in peaks]
    keys: list[tuple[int, int]] = [(int(g), 0) for g in assignment]
    split = 0
    for group in np.unique(assignment):
        members = np.flatnonzero(assignment == group)
        by_sample: dict[str, list[int]] = {}
        for m in members:
            by_sample.setdefault(samples[m], []).append(int(m))
        if all(len(v) == 1 for v in by_sample.values()):
            continue
        split += 1
        for indices in by_sample.values():
            for rank, m in enumerate(sorted(indices, key=lambda k: (rts[k], k))):
                keys[m] = (int(group), rank)
    if split:
        logger.info("split %d groups holding repeated samples", split)
    return dense_labels(_keys_to_ids(keys))


def _keys_to_ids(keys: Sequence[tuple[int, int]]) -> list[int]:
    ids: dict[tuple[int, int], int] = {}
    return [ids.setdefault(key, len(ids)) for key in keys]


def _rt(peak: Peak | PeakFeatures) -> float:
    return peak.rt if isinstance(peak, PeakFeatures) else peak.rt_apex


def _weight(peak: Peak | PeakFeatures, weighting: str) -> float:
    base = peak.peak if isinstance(peak, PeakFeatures) else peak
    if weighting == "height":
        if isinstance(peak, PeakFeatures):
            return peak.height
        return base.height or 0.0
    return base.area


def assign_group_rt(
    assignment: Sequence[int] | np.ndarray,
    peaks: Sequence[Peak | PeakFeatures],
    weighting: str = "area",
) -> dict[int, float]:
    assignment = np.asarray(assignment, dtype=np.int64)
    if weighting not in ("area", "height"):
        raise ArgumentError(f"unknown group RT weighting {weighting!r}")
    rts = np.array([_rt(p) for p in peaks])
    weights = np.array([_weight(p, weighting) for p in peaks], dtype=np.float64)
    out: dict[int, float] = {}
    for group in np.unique(assignment):
        members = assignment == group
        w = weights[members]
        if w.sum() > 0:
            value = float(np.sum(w * rts[members]) / w.sum())
        else:
            value = float(rts[members].mean())
        lo, hi = rts[members].min(), rts[members].max()
        out[int(group)] = float(min(max(value, lo), hi))
    return out


def align(
    params: ModelParams,
    features: Sequence[PeakFeatures],
    cfg: AlignConfig | None = None,
    model_id: str | None = None,
    results: PairwiseResults | None = None,
) -> AlignmentResult:
    """Cluster ``features`` from model scores; ``results`` reuses an earlier scoring."""
    cfg = cfg or AlignConfig()
    if not features:
        raise ArgumentError("nothing to align")
    if results is None:
        results = predict_all_pairs(params, features, cfg.rt_cutoff)
    elif results.n != len(features):
        raise ArgumentError(f"pair scores cover {results.n} peaks, got {len(features)}")
    distances = to_distances(results, cfg.probability_floor)
    clusters = upgma_cluster(distances, cfg.cut_distance)
    assignment = enforce_sample_uniqueness(clusters, features)
    group_rt = assign_group_rt(assignment, features, cfg.group_rt_weighting)
    logger.info("%d peaks aligned into %d groups", len(features), len(group_rt))
    return AlignmentResult(
        assignment=assignment.tolist(),
        group_rt=group_rt,
        provenance=Provenance(
            method="siamese",
            rt_cutoff=cfg.rt_cutoff,
            model_id=model_id or params.variant.id,
            cut_distance=cfg.cut_distance,
            extra={
                "probability_floor": cfg.probability_floor,
                "group_rt_weighting": cfg.group_rt_weighting,
                "pairs_scored": results.n_scored,
                "pairs_total": len(results),
            },
        ),
    )


def scatter_rows(
    result: AlignmentResult, peaks: Sequence[Peak | PeakFeatures]
) -> list[tuple[int, float, int]]:
    """(sample_index, rt, group) rows; samples indexed in order of first appearance."""
    index: dict[str, int] = {}
    rows = []
    for peak, group in zip(peaks, result.assignment):
        sample = index.setdefault(peak.sample_id, len(index))
        rows.append((sample, _rt(peak), int(group)))
    return rows


def default_sizes(n_peaks: int, count: int = 5) -> list[int]:
    """``count`` evenly spaced subset sizes ending at ``n_peaks``."""
    if n_peaks < 2 * count:
        raise ArgumentError(f"{n_peaks} peaks are too few for {count} benchmark sizes")
    return sorted({int(round(n_peaks * k / count)) for k in range(1, count + 1)})


def benchmark_predictions(
    params: ModelParams,
    features: Sequence[PeakFeatures],
    sizes: Sequence[int],
    rt_cutoff: float,
    repeats: int = 1,
) -> list[TimingRow]:
    """Wall time of predict_all_pairs on the first ``n`` peaks for each size.

    With ``repeats`` > 1 each size keeps its fastest run.
    """
    if repeats < 1:
        raise ArgumentError(f"repeats must be at least 1, got {repeats}")
    rows: list[TimingRow] = []
    for n in sizes:
        if not 2 <= n <= len(features):
            raise ArgumentError(f"benchmark size {n} outside 2..{len(features)}")
        seconds = float("inf")
        for _ in range(repeats):
            started = time.perf_counter()
            results = predict_all_pairs(params, features[:n], rt_cutoff)
            seconds = min(seconds, time.perf_counter() - started)
        rows.append(TimingRow(peaks=n, combinations=results.n_scored, seconds=seconds))
        logger.info("%d peaks, %d combinations: %.3fs", n, results.n_scored, seconds)
    return rows
