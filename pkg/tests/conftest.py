from __future__ import annotations

import numpy as np
import pytest

from chromalign.features import PeakFeatures
from chromalign.ingest import ChromatogramMatrix, SicTrace
from chromalign.model import init_params
from chromalign.schemas import Peak, VariantConfig

SEGMENT_STEPS = 120
N_MZ = 8


def gaussian(rt_axis: np.ndarray, center: float, sigma: float, amplitude: float) -> np.ndarray:
    return amplitude * np.exp(-0.5 * ((rt_axis - center) / sigma) ** 2)


def make_trace(values, dt: float = 0.01, start: float = 0.0, mz: int = 103) -> SicTrace:
    values = np.asarray(values, dtype=np.float64)
    return SicTrace("S001", mz, start + dt * np.arange(values.size), values)


def make_peak(rt: float, sample_id: str = "S001", mz: int = 103, group: int = -1, **extra) -> Peak:
    return Peak(
        sample_id=sample_id,
        mz=mz,
        rt_start=rt - 0.05,
        rt_apex=rt,
        rt_end=rt + 0.05,
        area=extra.pop("area", 1.0),
        group=group,
        **extra,
    )


def make_features(
    rng: np.random.Generator,
    rt: float,
    sample_id: str = "S001",
    group: int = -1,
    mz: int = 103,
    n_mz: int = N_MZ,
    steps: int = SEGMENT_STEPS,
) -> PeakFeatures:
    profile = rng.random(int(rng.integers(3, 9)))
    return PeakFeatures(
        peak=make_peak(rt, sample_id=sample_id, mz=mz, group=group),
        mass_spectrum=rng.random(n_mz),
        peak_profile=profile / profile.max(),
        chrom_segment=rng.random(steps) * 3.0,
        rt=rt,
        height=float(rng.uniform(1.0, 10.0)),
    )


def tiny_variant(peak_encoder: str = "none", **overrides) -> VariantConfig:
    values = {
        "id": "tiny",
        "peak_encoder": peak_encoder,
        "mass_encoding_dim": 3,
        "peak_encoding_dim": 3,
        "chrom_encoding_dim": 3,
        "dense_units": 5,
        "recurrent_units": 3,
        "recurrent_layers": 2,
        "first_layer_filters": 2,
        **overrides,
    }
    return VariantConfig(**values)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)


@pytest.fixture
def tiny_params():
    return init_params(tiny_variant(), N_MZ, SEGMENT_STEPS, 3)


@pytest.fixture
def small_matrix() -> ChromatogramMatrix:
    rt_axis = 5.0 + 0.01 * np.arange(300)
    mz_axis = np.array([100, 103, 110])
    profile = gaussian(rt_axis, 6.5, 0.05, 1.0)
    intensity = np.outer(profile, [200.0, 1000.0, 500.0])
    return ChromatogramMatrix("S001", rt_axis, mz_axis, intensity)
