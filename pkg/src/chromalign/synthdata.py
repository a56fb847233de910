"""Synthetic GC-MS sample sets with planted compounds and known groups.

Each compound has a sparse mass template and a base retention time. Every
sample warps the base times by its own drift (a constant shift plus a slow
sinusoid with random phase), draws an amplitude per compound, and adds a
polynomial baseline and clamped Gaussian noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError
from .ingest import ChromatogramMatrix
from .neuralnet import RngStream
from .schemas import Peak, SynthConfig, TruthRecord

logger = logging.getLogger(__name__)

TEMPLATE_WEIGHT_RANGE = (0.05, 1.0)
CONFUSABLE_JITTER = 0.1


def air_like(**overrides: Any) -> SynthConfig:
    """Small linear shifts and no nonlinear drift."""
    values = {"drift_shift_max": 0.05, "drift_amplitude": 0.0, **overrides}
    return SynthConfig(**values)


def breath_like(**overrides: Any) -> SynthConfig:
    """Twenty samples, eight compounds, up to 0.5 min of drift, confusable templates."""
    values = {
        "n_samples": 20,
        "n_compounds": 8,
        "drift_shift_max": 0.2,
        "drift_amplitude": 0.3,
        "confusable": True,
        **overrides,
    }
    return SynthConfig(**values)


@dataclass(frozen=True)
class SampleDrift:
    shift: float
    phase: float


@dataclass(frozen=True, eq=False)
class SyntheticSet:
    matrices: list[ChromatogramMatrix]
    truth: list[TruthRecord]
    templates: np.ndarray
    base_rt: np.ndarray
    drift: dict[str, SampleDrift]


def max_drift(cfg: SynthConfig) -> float:
    return cfg.drift_shift_max + cfg.drift_amplitude


def drift_offset(rt: float | np.ndarray, drift: SampleDrift, cfg: SynthConfig):
    return drift.shift + cfg.drift_amplitude * np.sin(
        2 * np.pi * np.asarray(rt) / cfg.drift_wavelength + drift.phase
    )


def base_retention_times(cfg: SynthConfig) -> np.ndarray:
    """Evenly spaced compound times, kept clear of the window edges."""
    lo, hi = cfg.rt_window
    margin = max_drift(cfg) + 4 * cfg.peak_sigma
    first, last = lo + margin, hi - margin
    if last <= first:
        raise ConfigError(
            f"rt_window {cfg.rt_window} too small for {max_drift(cfg):.3f} min of drift"
        )
    if cfg.n_compounds == 1:
        return np.array([(first + last) / 2])
    spacing = (last - first) / (cfg.n_compounds - 1)
    if spacing < 6 * cfg.peak_sigma:
        raise ConfigError(
            f"{cfg.n_compounds} compounds need {6 * cfg.peak_sigma:.3f} min apart, "
            f"rt_window {cfg.rt_window} allows {spacing:.3f}"
        )
    return first + spacing * np.arange(cfg.n_compounds)


def make_templates(cfg: SynthConfig, rng: RngStream) -> np.ndarray:
    """Template matrix (compounds x channels) over mz_lo..mz_hi.

    Every template contains ``target_mz`` at weight 1 and one channel no other
    compound uses. In confusable mode a compound also takes over the shared
    channels of its predecessor with slightly perturbed weights.
    """
    channels = np.arange(cfg.mz_lo, cfg.mz_hi + 1)
    target = cfg.target_mz - cfg.mz_lo
    free = np.array([c for c in range(channels.size) if c != target])
    if free.size < cfg.n_compounds:
        raise ConfigError(
            f"{channels.size} channels cannot give {cfg.n_compounds} compounds a unique channel"
        )
    unique = rng.choice(free, cfg.n_compounds, replace=False)
    shared_pool = np.setdiff1d(free, unique)
    low, high = cfg.template_channels
    templates = np.zeros((cfg.n_compounds, channels.size))
    for k in range(cfg.n_compounds):
        templates[k, target] = 1.0
        templates[k, unique[k]] = rng.uniform(*TEMPLATE_WEIGHT_RANGE, 1)[0]
        if cfg.confusable and k > 0:
            previous = templates[k - 1].copy()
            previous[[target, unique[k - 1]]] = 0.0
            shared = np.flatnonzero(previous)
            jitter = rng.uniform(1 - CONFUSABLE_JITTER, 1 + CONFUSABLE_JITTER, shared.size)
            templates[k, shared] = previous[shared] * jitter
            continue
        count = int(rng.integers(low, high + 1))
        extra = min(max(count - 2, 0), shared_pool.size)
        if extra:
            picked = rng.choice(shared_pool, extra, replace=False)
            templates[k, picked] = rng.uniform(*TEMPLATE_WEIGHT_RANGE, extra)
    return templates


def _rt_axis(cfg: SynthConfig) -> np.ndarray:
    lo, hi = cfg.rt_window
    steps = int(round((hi - lo) / cfg.dt))
    return lo + cfg.dt * np.arange(steps + 1)


def generate(cfg: SynthConfig | None = None, sample_seed: int | None = None) -> SyntheticSet:
    """Draw a sample set. ``sample_seed`` keeps the compound library of ``cfg.seed``
    and draws new samples of it.
    """
    cfg = cfg or SynthConfig()
    base_rt = base_retention_times(cfg)
    rng = RngStream(cfg.seed)
    templates = make_templates(cfg, rng)
    if sample_seed is not None:
        rng = RngStream(sample_seed)
    rt_axis = _rt_axis(cfg)
    mz_axis = np.arange(cfg.mz_lo, cfg.mz_hi + 1)
    baseline = np.polynomial.polynomial.polyval(rt_axis, cfg.baseline) if cfg.baseline else None
    matrices: list[ChromatogramMatrix] = []
    truth: list[TruthRecord] = []
    drifts: dict[str, SampleDrift] = {}
    for s in range(cfg.n_samples):
        sample_id = f"S{s + 1:03d}"
        drift = SampleDrift(
            shift=float(rng.uniform(-cfg.drift_shift_max, cfg.drift_shift_max, 1)[0]),
            phase=float(rng.uniform(0.0, 2 * np.pi, 1)[0]),
        )
        drifts[sample_id] = drift
        present = rng.random(cfg.n_compounds) >= cfg.dropout_prob
        amplitudes = rng.uniform(*cfg.amplitude_range, cfg.n_compounds)
        intensity = np.zeros((rt_axis.size, mz_axis.size))
        for k in np.flatnonzero(present):
            apex = float(base_rt[k] + drift_offset(base_rt[k], drift, cfg))
            profile = np.exp(-0.5 * ((rt_axis - apex) / cfg.peak_sigma) ** 2)
            intensity += amplitudes[k] * np.outer(profile, templates[k])
            for channel in np.flatnonzero(templates[k]):
                truth.append(
                    TruthRecord(
                        sample_id=sample_id,
                        mz=int(mz_axis[channel]),
                        rt_apex_true=apex,
                        group=int(k),
                    )
                )
        if baseline is not None:
            intensity += baseline[:, None]
        if cfg.noise_sd > 0:
            intensity += rng.normal(0.0, cfg.noise_sd, intensity.shape)
        matrices.append(
            ChromatogramMatrix(sample_id, rt_axis, mz_axis, np.maximum(intensity, 0.0))
        )
    logger.info(
        "simulated %d samples, %d compounds, %d planted apexes",
        cfg.n_samples,
        cfg.n_compounds,
        len(truth),
    )
    return SyntheticSet(matrices, truth, templates, base_rt, drifts)


def match_truth(
    truth: Sequence[TruthRecord],
    located: Sequence[tuple[str, int, float]],
    match_tolerance: float = 0.05,
) -> list[int]:
    """Group of the nearest planted apex for each ``(sample_id, mz, rt)``.

    Matching is one-to-one per (sample, m/z), greedy by increasing distance;
    unmatched locations get -1.
    """
    if match_tolerance <= 0:
        raise ArgumentError(f"match_tolerance must be positive, got {match_tolerance}")
    planted: dict[tuple[str, int], list[int]] = {}
    for index, record in enumerate(truth):
        planted.setdefault((record.sample_id, record.mz), []).append(index)
    candidates: list[tuple[float, int, int]] = []
    for p_index, (sample_id, mz, rt) in enumerate(located):
        for t_index in planted.get((sample_id, mz), []):
            distance = abs(rt - truth[t_index].rt_apex_true)
            if distance <= match_tolerance:
                candidates.append((distance, p_index, t_index))
    candidates.sort()
    groups = [-1] * len(located)
    used_truth: set[int] = set()
    for _, p_index, t_index in candidates:
        if groups[p_index] != -1 or t_index in used_truth:
            continue
        groups[p_index] = truth[t_index].group
        used_truth.add(t_index)
    return groups


def truth_to_labels(
    truth: Sequence[TruthRecord], peaks: Sequence[Peak], match_tolerance: float = 0.05
) -> list[Peak]:
    groups = match_truth(truth, [(p.sample_id, p.mz, p.rt_apex) for p in peaks], match_tolerance)
    matched = sum(g >= 0 for g in groups)
    logger.info("matched %d of %d detected peaks to planted apexes", matched, len(peaks))
    return [peak.model_copy(update={"group": g}) for peak, g in zip(peaks, groups)]
