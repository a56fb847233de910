from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError
from .ingest import ChromatogramMatrix, SicTrace, slice_sic
from .schemas import FeatureConfig, Peak

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PeakFeatures:
    """The four network inputs for one peak."""

    peak: Peak
    mass_spectrum: np.ndarray
    peak_profile: np.ndarray
    chrom_segment: np.ndarray
    rt: float
    height: float = 0.0
    spectrum_degenerate: bool = False

    @property
    def sample_id(self) -> str:
        return self.peak.sample_id

    @property
    def group(self) -> int:
        return self.peak.group

    def with_group(self, group: int) -> PeakFeatures:
        return PeakFeatures(
            peak=self.peak.model_copy(update={"group": group}),
            mass_spectrum=self.mass_spectrum,
            peak_profile=self.peak_profile,
            chrom_segment=self.chrom_segment,
            rt=self.rt,
            height=self.height,
            spectrum_degenerate=self.spectrum_degenerate,
        )


def shared_mz_range(matrices: Iterable[ChromatogramMatrix]) -> tuple[int, int]:
    lows, highs = [], []
    for matrix in matrices:
        lows.append(int(matrix.mz_axis[0]))
        highs.append(int(matrix.mz_axis[-1]))
    if not lows:
        raise ArgumentError("no matrices to derive a mass range from")
    return min(lows), max(highs)


def resolve_feature_config(
    cfg: FeatureConfig, matrices: Sequence[ChromatogramMatrix]
) -> FeatureConfig:
    if cfg.mz_lo is not None and cfg.mz_hi is not None:
        return cfg
    lo, hi = shared_mz_range(matrices)
    if hi <= lo:
        hi = lo + 1
    return cfg.model_copy(
        update={
            "mz_lo": cfg.mz_lo if cfg.mz_lo is not None else lo,
            "mz_hi": cfg.mz_hi if cfg.mz_hi is not None else hi,
        }
    )


def _max_normalise(values: np.ndarray) -> np.ndarray:
    peak_max = float(values.max()) if values.size else 0.0
    if peak_max <= 0:
        return np.zeros_like(values)
    return values / peak_max


def extract_mass_spectrum(
    matrix: ChromatogramMatrix, peak: Peak, cfg: FeatureConfig
) -> tuple[np.ndarray, bool]:
    """Apex spectrum over [mz_lo, mz_hi], max-normalised.

    Returns the vector and a flag that is set when the apex row is all zero.
    """
    if cfg.mz_lo is None or cfg.mz_hi is None:
        cfg = resolve_feature_config(cfg, [matrix])
    lo, hi = cfg.mz_lo, cfg.mz_hi
    row = matrix.intensity[matrix.rt_index(peak.rt_apex)]
    inside = (matrix.mz_axis >= lo) & (matrix.mz_axis <= hi)
    if not inside.any():
        raise ArgumentError(f"mass range [{lo}, {hi}] does not intersect the matrix channels")
    spectrum = np.zeros(hi - lo + 1)
    spectrum[matrix.mz_axis[inside] - lo] = row[inside]
    if spectrum.max() <= 0:
        logger.warning(
            "%s: all-zero spectrum at rt %.4f (m/z %d peak)", peak.sample_id, peak.rt_apex, peak.mz
        )
        return spectrum, True
    return _max_normalise(spectrum), False


def _interval(trace: SicTrace, peak: Peak) -> tuple[int, int]:
    try:
        start = trace.rt_index(peak.rt_start)
        end = trace.rt_index(peak.rt_end)
    except ArgumentError as exc:
        raise ArgumentError(f"peak interval outside trace: {exc}") from exc
    return start, end


def extract_peak_profile(trace: SicTrace, peak: Peak) -> np.ndarray:
    start, end = _interval(trace, peak)
    return _max_normalise(trace.intensity[start : end + 1].copy())


def extract_chrom_segment(trace: SicTrace, peak: Peak, cfg: FeatureConfig) -> np.ndarray:
    """Log-transformed, min-subtracted window of ``segment_steps`` points around the apex."""
    steps = cfg.segment_steps
    apex = trace.rt_index(peak.rt_apex)
    first = apex - steps // 2
    lo, hi = max(first, 0), min(first + steps, len(trace))
    if hi <= lo:
        raise ArgumentError("segment window does not overlap the trace")
    raw = np.zeros(steps)
    raw[lo - first : hi - first] = trace.intensity[lo:hi]
    positive = raw > 0
    if not positive.any():
        return np.zeros(steps)
    logged = np.empty(steps)
    logged[positive] = np.log(raw[positive])
    floor = logged[positive].min()
    logged[~positive] = floor
    return logged - floor


def _check_spacing(matrix: ChromatogramMatrix, cfg: FeatureConfig) -> None:
    span = cfg.segment_steps * matrix.dt
    if abs(span - 2 * cfg.segment_half_width) > matrix.dt:
        logger.warning(
            "%s: %d segment steps span %.3f min, configured window is +/- %.3f min",
            matrix.sample_id,
            cfg.segment_steps,
            span,
            cfg.segment_half_width,
        )


def build_features(
    matrix: ChromatogramMatrix, peaks: Sequence[Peak], cfg: FeatureConfig
) -> list[PeakFeatures]:
    if not peaks:
        return []
    foreign = {p.sample_id for p in peaks if p.sample_id != matrix.sample_id}
    if foreign:
        raise ArgumentError(
            f"peaks from {sorted(foreign)} passed with matrix {matrix.sample_id}"
        )
    cfg = resolve_feature_config(cfg, [matrix])
    _check_spacing(matrix, cfg)
    traces: dict[int, SicTrace] = {}
    out: list[PeakFeatures] = []
    for peak in peaks:
        trace = traces.get(peak.mz)
        if trace is None:
            trace = traces[peak.mz] = slice_sic(matrix, peak.mz)
        spectrum, degenerate = extract_mass_spectrum(matrix, peak, cfg)
        height = peak.height
        if height is None:
            height = float(trace.intensity[trace.rt_index(peak.rt_apex)])
        out.append(
            PeakFeatures(
                peak=peak,
                mass_spectrum=spectrum,
                peak_profile=extract_peak_profile(trace, peak),
                chrom_segment=extract_chrom_segment(trace, peak, cfg),
                rt=peak.rt_apex,
                height=float(height),
                spectrum_degenerate=degenerate,
            )
        )
    return out


def build_feature_set(
    matrices: Sequence[ChromatogramMatrix], peaks: Sequence[Peak], cfg: FeatureConfig
) -> tuple[list[PeakFeatures], FeatureConfig]:
    """Features for every peak, on one mass axis shared by all samples."""
    cfg = resolve_feature_config(cfg, matrices)
    by_sample: dict[str, list[Peak]] = {}
    for peak in peaks:
        by_sample.setdefault(peak.sample_id, []).append(peak)
    known = {m.sample_id for m in matrices}
    missing = sorted(set(by_sample) - known)
    if missing:
        raise ArgumentError(f"peaks reference samples without a matrix: {missing}")
    out: list[PeakFeatures] = []
    for matrix in matrices:
        out.extend(build_features(matrix, by_sample.get(matrix.sample_id, []), cfg))
    degenerate = sum(f.spectrum_degenerate for f in out)
    logger.info("built features for %d peaks (%d degenerate spectra)", len(out), degenerate)
    return out, cfg
