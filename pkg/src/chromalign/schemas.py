from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Peak(StrictModel):
    sample_id: str
    mz: int
    rt_start: float = Field(description="minutes")
    rt_apex: float = Field(description="minutes")
    rt_end: float = Field(description="minutes")
    area: float = Field(ge=0, description="counts*minutes")
    group: int = Field(default=-1, ge=-1, description="-1 = unidentified")
    apex_index: int | None = Field(default=None, ge=0)
    height: float | None = Field(default=None, ge=0, description="apex intensity (counts)")

    @model_validator(mode="after")
    def _ordered(self) -> Peak:
        if not self.rt_start < self.rt_apex < self.rt_end:
            raise ValueError(
                f"peak interval must satisfy rt_start < rt_apex < rt_end, got "
                f"{self.rt_start} / {self.rt_apex} / {self.rt_end}"
            )
        return self


class TruthRecord(StrictModel):
    sample_id: str
    mz: int
    rt_apex_true: float
    group: int = Field(ge=0)


class AlsParams(StrictModel):
    lam: float = Field(default=1e5, gt=0, description="smoothness weight lambda (dimensionless)")
    p: float = Field(default=1e-3, gt=0, lt=1, description="asymmetry (dimensionless)")
    iterations: int = Field(default=10, ge=1, description="reweighting iterations")


class PeakDetectParams(StrictModel):
    smooth_window: int = Field(default=11, ge=5, description="Savitzky-Golay window (samples, odd)")
    smooth_polyorder: int = Field(default=3, ge=2, description="Savitzky-Golay polynomial order")
    d1_threshold: float | None = Field(
        default=None,
        gt=0,
        description="first-derivative threshold (counts/step); unset = fraction of max |d1|",
    )
    d1_threshold_fraction: float = Field(
        default=0.01, gt=0, lt=1, description="relative threshold used when d1_threshold is unset"
    )
    min_width: int = Field(default=5, ge=3, description="minimum peak width (samples)")
    min_area: float = Field(default=0.0, ge=0, description="minimum peak area (counts*minutes)")

    @model_validator(mode="after")
    def _window(self) -> PeakDetectParams:
        if self.smooth_window % 2 == 0:
            raise ValueError("smooth_window must be odd")
        if self.smooth_polyorder >= self.smooth_window:
            raise ValueError("smooth_polyorder must be smaller than smooth_window")
        return self


class FeatureConfig(StrictModel):
    segment_steps: int = Field(default=600, ge=2, description="chromatogram segment length (steps)")
    segment_half_width: float = Field(
        default=1.5, gt=0, description="nominal segment half width (minutes)"
    )
    mz_lo: int | None = Field(default=None, description="lowest m/z of the spectrum axis (Da)")
    mz_hi: int | None = Field(default=None, description="highest m/z of the spectrum axis (Da)")

    @model_validator(mode="after")
    def _ranges(self) -> FeatureConfig:
        if self.segment_steps % 2:
            raise ValueError("segment_steps must be even")
        if self.mz_lo is not None and self.mz_hi is not None and self.mz_lo >= self.mz_hi:
            raise ValueError("mz_lo must be smaller than mz_hi")
        return self

    @property
    def n_mz(self) -> int:
        if self.mz_lo is None or self.mz_hi is None:
            raise ValueError("mass range is not resolved")
        return self.mz_hi - self.mz_lo + 1


PeakEncoderKind = Literal["full", "simplified", "none"]


class VariantConfig(StrictModel):
    id: str = Field(default="01", description="short variant tag")
    peak_encoder: PeakEncoderKind = "full"
    mass_encoding_dim: int = Field(default=10, ge=1)
    peak_encoding_dim: int = Field(default=10, ge=1)
    chrom_encoding_dim: int = Field(default=10, ge=1)
    mass_dropout: float = Field(default=0.2, ge=0, lt=1)
    peak_dropout: float = Field(default=0.2, ge=0, lt=1)
    chrom_dropout: float = Field(default=0.2, ge=0, lt=1)
    conv_dropout: float = Field(default=0.0, ge=0, lt=1)
    head_dropout: float = Field(default=0.2, ge=0, lt=1)
    left_stack_convs: int = Field(default=2, ge=1)
    right_stack_convs: int = Field(default=3, ge=1)
    first_layer_filters: int = Field(default=6, ge=1)
    dense_units: int = Field(default=64, ge=1)
    recurrent_units: int = Field(default=64, ge=1)
    recurrent_layers: int = Field(default=3, ge=1)

    @property
    def encoders(self) -> list[str]:
        if self.peak_encoder == "none":
            return ["mass", "chrom"]
        return ["mass", "peak", "chrom"]


class TrainConfig(StrictModel):
    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=64, ge=1, description="pairs per update")
    validation_fraction: float = Field(default=0.2, gt=0, lt=1)
    aux_loss_weight: float = Field(default=0.2, ge=0)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = 0


class AlignConfig(StrictModel):
    rt_cutoff: float = Field(default=3.0, gt=0, description="pair comparison cut-off (minutes)")
    cut_distance: float = Field(default=2.0, gt=0, description="clustering cut (1/probability)")
    probability_floor: float = Field(default=1e-6, gt=0, lt=1)
    group_rt_weighting: Literal["area", "height"] = "area"


class RuleParams(StrictModel):
    max_linear_shift: float = Field(default=0.05, ge=0, description="minutes")
    max_diff_peak2mean: float = Field(default=0.02, ge=0, description="minutes")
    min_diff_peak2peak: float = Field(default=0.08, ge=0, description="minutes")
    grid_step: float | None = Field(default=None, gt=0, description="shift grid step (minutes)")
    max_sweeps: int = Field(default=100, ge=1)


class SynthConfig(StrictModel):
    n_samples: int = Field(default=10, ge=1)
    n_compounds: int = Field(default=6, ge=1)
    rt_window: tuple[float, float] = Field(default=(5.0, 20.0), description="minutes")
    dt: float = Field(default=0.005, gt=0, description="sampling interval (minutes)")
    drift_shift_max: float = Field(default=0.05, ge=0, description="linear shift bound (minutes)")
    drift_amplitude: float = Field(default=0.0, ge=0, description="nonlinear drift (minutes)")
    drift_wavelength: float = Field(default=6.0, gt=0, description="nonlinear period (minutes)")
    peak_sigma: float = Field(default=0.03, gt=0, description="minutes")
    amplitude_range: tuple[float, float] = Field(default=(2000.0, 20000.0), description="counts")
    mz_lo: int = Field(default=40, ge=1)
    mz_hi: int = Field(default=120, ge=1)
    target_mz: int = Field(default=103, description="channel shared by every compound (Da)")
    template_channels: tuple[int, int] = Field(default=(5, 15))
    confusable: bool = False
    noise_sd: float = Field(default=2.0, ge=0, description="counts")
    baseline: list[float] = Field(
        default_factory=lambda: [20.0, 1.0], description="polynomial in rt, constant term first"
    )
    dropout_prob: float = Field(default=0.0, ge=0, lt=1)
    seed: int = 0

    @model_validator(mode="after")
    def _ranges(self) -> SynthConfig:
        lo, hi = self.rt_window
        if not hi > lo:
            raise ValueError("rt_window must be increasing")
        if not self.mz_hi > self.mz_lo:
            raise ValueError("mz_hi must exceed mz_lo")
        if not self.mz_lo <= self.target_mz <= self.mz_hi:
            raise ValueError("target_mz must lie inside [mz_lo, mz_hi]")
        low, high = self.template_channels
        if not 1 <= low <= high <= self.mz_hi - self.mz_lo + 1:
            raise ValueError("template_channels must fit inside the mass range")
        a_lo, a_hi = self.amplitude_range
        if not 0 < a_lo <= a_hi:
            raise ValueError("amplitude_range must be positive and ordered")
        return self


class RunConfig(StrictModel):
    seed: int = 0
    channels: list[int] | None = Field(default=None, description="m/z channels to process (Da)")
    match_tolerance: float = Field(default=0.05, gt=0, description="truth matching (minutes)")
    als: AlsParams = Field(default_factory=AlsParams)
    detect: PeakDetectParams = Field(default_factory=PeakDetectParams)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    variant: VariantConfig = Field(default_factory=VariantConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    align: AlignConfig = Field(default_factory=AlignConfig)
    rules: RuleParams = Field(default_factory=RuleParams)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    holdout_seed: int | None = Field(
        default=None, description="seed of the held-out samples; unset = synth.seed + 1"
    )

    def detect_channels(self, synthetic: bool = False) -> list[int] | None:
        """Channels for peak detection. Synthetic runs default to the m/z every compound shares."""
        if self.channels is None and synthetic:
            return [self.synth.target_mz]
        return self.channels

    def resolved_holdout_seed(self) -> int:
        return self.synth.seed + 1 if self.holdout_seed is None else self.holdout_seed


class HistoryRecord(StrictModel):
    epoch: int
    split: Literal["train", "validation"]
    output: Literal["main", "mass", "peak", "chrom"]
    loss: float
    accuracy: float


class Provenance(StrictModel):
    method: str
    rt_cutoff: float | None = None
    model_id: str | None = None
    cut_distance: float | None = None
    extra: dict = Field(default_factory=dict)


class AlignmentResult(StrictModel):
    assignment: list[int]
    group_rt: dict[int, float]
    provenance: Provenance

    @property
    def n_groups(self) -> int:
        return len(self.group_rt)


class PairwiseMetrics(StrictModel):
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    tp_rate: float | None
    fp_rate: float | None


class GroupDetail(StrictModel):
    truth_group: int
    members: int
    aligned_group: int
    aligned_rt: float
    tp: int
    fp: int


class GroupMetrics(StrictModel):
    tp_rate: float
    fdr: float
    tp: int
    fp: int
    n_labeled: int
    groups: list[GroupDetail] = Field(default_factory=list)


class AlignedPeak(StrictModel):
    """One row of the alignment report."""

    sample_id: str
    mz: int
    rt_apex: float
    area: float
    group: int = Field(ge=0)
    group_rt: float


class TimingRow(StrictModel):
    peaks: int
    combinations: int
    seconds: float = Field(ge=0)


class LinearFit(StrictModel):
    slope: float
    intercept: float
    r_squared: float
