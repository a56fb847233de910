"""Siamese peak-similarity network.

Three encoders (mass spectrum, peak profile, chromatogram segment) embed each
peak of a pair with shared weights. The head sees the element-wise absolute
difference of every enabled embedding plus the absolute retention-time
difference; each encoder also feeds a one-unit auxiliary head.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError
from .features import PeakFeatures
from .neuralnet import (
    Mode,
    RngStream,
    bce_loss,
    conv1d_apply,
    conv1d_backward,
    dense_apply,
    dense_backward,
    dropout_apply,
    dropout_backward,
    gru_apply,
    gru_backward,
    lstm_apply,
    lstm_backward,
    maxpool1d,
    maxpool1d_backward,
    pooled_length,
)
from .schemas import VariantConfig

logger = logging.getLogger(__name__)

ENCODERS = ("mass", "peak", "chrom")
FIRST_POOL = 3
STACK_POOL = 2

# Modifications of the base model, keyed by variant id.
_SINGLE_CHANGES: dict[str, dict[str, Any]] = {
    "01": {},
    "02": {"peak_encoder": "none"},
    "03": {"peak_encoder": "simplified"},
    "04": {"peak_dropout": 0.5},
    "05": {"peak_encoding_dim": 5},
    "06": {"peak_dropout": 0.5, "peak_encoding_dim": 20},
    "07": {"peak_dropout": 0.5, "peak_encoding_dim": 30},
    "08": {"mass_encoding_dim": 5},
    "09": {"mass_dropout": 0.5, "mass_encoding_dim": 20},
    "10": {"mass_dropout": 0.5, "mass_encoding_dim": 30},
    "11": {"chrom_encoding_dim": 5},
    "12": {"chrom_dropout": 0.5, "chrom_encoding_dim": 20},
    "13": {"chrom_dropout": 0.5, "chrom_encoding_dim": 30},
    "14": {"conv_dropout": 0.2},
    "15": {"conv_dropout": 0.5},
    "16": {"right_stack_convs": 4},
    "17": {"right_stack_convs": 2},
    "18": {"left_stack_convs": 3},
    "19": {"left_stack_convs": 1},
}
_COMBINED_WITH = ("08", "09", "11", "12", "17", "19")


def _variant_table() -> dict[str, dict[str, Any]]:
    table = dict(_SINGLE_CHANGES)
    next_id = 20
    for base in ("02", "03"):
        for other in _COMBINED_WITH:
            table[f"{next_id:02d}"] = {**_SINGLE_CHANGES[base], **_SINGLE_CHANGES[other]}
            next_id += 1
    return table


VARIANT_CHANGES = _variant_table()


def list_variants() -> list[str]:
    return sorted(VARIANT_CHANGES)


def get_variant(variant_id: str, **overrides: Any) -> VariantConfig:
    key = str(variant_id).zfill(2)
    if key not in VARIANT_CHANGES:
        raise ConfigError(f"unknown variant {variant_id!r}; known: {', '.join(list_variants())}")
    return VariantConfig(id=key, **{**VARIANT_CHANGES[key], **overrides})


# shapes ----------------------------------------------------------------------


def _recurrent_layout(variant: VariantConfig) -> tuple[int, list[str]]:
    if variant.peak_encoder == "full":
        return 4, ["fwd", "bwd"]
    return 3, ["fwd"]


def chrom_stack_length(segment_steps: int, convs: int) -> int:
    """Sequence length at the end of one convolution stack."""
    length = pooled_length(segment_steps, FIRST_POOL, FIRST_POOL) if segment_steps >= 3 else 0
    for layer in range(convs):
        if length < 3:
            raise ConfigError(
                f"segment of {segment_steps} steps too short for conv layer {layer + 1} of {convs}"
            )
        length -= 2
        if length < STACK_POOL:
            raise ConfigError(f"segment of {segment_steps} steps too short for {convs} conv layers")
        length = pooled_length(length, STACK_POOL, STACK_POOL)
    return length


def _stacks(variant: VariantConfig) -> list[tuple[str, int]]:
    return [("left", variant.left_stack_convs), ("right", variant.right_stack_convs)]


def chrom_flat_size(variant: VariantConfig, segment_steps: int) -> int:
    total = 0
    for _, convs in _stacks(variant):
        filters = variant.first_layer_filters * 2 ** (convs - 1)
        total += chrom_stack_length(segment_steps, convs) * filters
    return total


def encoding_dim(variant: VariantConfig, encoder: str) -> int:
    return getattr(variant, f"{encoder}_encoding_dim")


def param_shapes(
    variant: VariantConfig, n_mz: int, segment_steps: int
) -> dict[str, tuple[int, ...]]:
    units = variant.dense_units
    shapes: dict[str, tuple[int, ...]] = {
        "mass.d1.W": (units, n_mz),
        "mass.d1.b": (units,),
        "mass.d2.W": (units, units),
        "mass.d2.b": (units,),
        "mass.out.W": (variant.mass_encoding_dim, units),
        "mass.out.b": (variant.mass_encoding_dim,),
    }
    if variant.peak_encoder != "none":
        n_gates, directions = _recurrent_layout(variant)
        hidden = variant.recurrent_units
        width = 1
        for layer in range(variant.recurrent_layers):
            for direction in directions:
                prefix = f"peak.rnn{layer}.{direction}"
                shapes[f"{prefix}.Wx"] = (width, n_gates * hidden)
                shapes[f"{prefix}.Wh"] = (hidden, n_gates * hidden)
                shapes[f"{prefix}.b"] = (n_gates * hidden,)
            width = hidden * len(directions)
        shapes["peak.out.W"] = (variant.peak_encoding_dim, width)
        shapes["peak.out.b"] = (variant.peak_encoding_dim,)
    for side, convs in _stacks(variant):
        channels = 1
        for layer in range(convs):
            filters = variant.first_layer_filters * 2**layer
            shapes[f"chrom.{side}.conv{layer}.K"] = (filters, channels, 3)
            shapes[f"chrom.{side}.conv{layer}.b"] = (filters,)
            channels = filters
    flat = chrom_flat_size(variant, segment_steps)
    shapes["chrom.out.W"] = (variant.chrom_encoding_dim, flat)
    shapes["chrom.out.b"] = (variant.chrom_encoding_dim,)
    width = sum(encoding_dim(variant, enc) for enc in variant.encoders) + 1
    shapes["head.hidden.W"] = (units, width)
    shapes["head.hidden.b"] = (units,)
    shapes["head.out.W"] = (1, units)
    shapes["head.out.b"] = (1,)
    for enc in variant.encoders:
        shapes[f"aux.{enc}.W"] = (1, encoding_dim(variant, enc))
        shapes[f"aux.{enc}.b"] = (1,)
    return shapes


# parameters ------------------------------------------------------------------


@dataclass
class ModelParams:
    variant: VariantConfig
    n_mz: int
    segment_steps: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def encoders(self) -> list[str]:
        return self.variant.encoders

    def copy(self) -> ModelParams:
        return ModelParams(
            self.variant,
            self.n_mz,
            self.segment_steps,
            {name: value.copy() for name, value in self.tensors.items()},
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant.model_dump(),
            "input": {"n_mz": self.n_mz, "segment_steps": self.segment_steps},
            "tensors": {
                name: {"shape": list(value.shape), "values": value.ravel().tolist()}
                for name, value in sorted(self.tensors.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelParams:
        try:
            variant = VariantConfig.model_validate(data["variant"])
            n_mz = int(data["input"]["n_mz"])
            segment_steps = int(data["input"]["segment_steps"])
            raw = data["tensors"]
        except KeyError as exc:
            raise ConfigError(f"weights document lacks {exc.args[0]!r}") from exc
        expected = param_shapes(variant, n_mz, segment_steps)
        if set(raw) != set(expected):
            missing = sorted(set(expected) - set(raw))
            extra = sorted(set(raw) - set(expected))
            raise ConfigError(
                f"weights do not match variant: missing {missing}, unexpected {extra}"
            )
        tensors = {}
        for name, shape in expected.items():
            entry = raw[name]
            if tuple(entry["shape"]) != shape:
                raise ConfigError(f"tensor {name!r} has shape {entry['shape']}, expected {shape}")
            tensors[name] = np.array(entry["values"], dtype=np.float64).reshape(shape)
        return cls(variant, n_mz, segment_steps, tensors)


def _glorot(rng: RngStream, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_params(
    variant: VariantConfig, n_mz: int, segment_steps: int, rng: RngStream | int = 0
) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1 for LSTM cells."""
    if not isinstance(rng, RngStream):
        rng = RngStream(rng)
    shapes = param_shapes(variant, n_mz, segment_steps)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        kind = name.rsplit(".", 1)[1]
        if kind == "b":
            bias = np.zeros(shape)
            if name.startswith("peak.rnn") and variant.peak_encoder == "full":
                hidden = shape[0] // 4
                bias[hidden : 2 * hidden] = 1.0
            tensors[name] = bias
        elif kind == "K":
            out_channels, in_channels, width = shape
            tensors[name] = _glorot(rng, shape, in_channels * width, out_channels * width)
        elif kind in ("Wx", "Wh"):
            tensors[name] = _glorot(rng, shape, shape[0], shape[1])
        else:
            tensors[name] = _glorot(rng, shape, shape[1], shape[0])
    return ModelParams(variant, n_mz, segment_steps, tensors)


# inputs ----------------------------------------------------------------------


@dataclass
class EncoderInputs:
    mass: np.ndarray
    profiles: np.ndarray
    mask: np.ndarray
    segments: np.ndarray

    def __len__(self) -> int:
        return int(self.mass.shape[0])


def stack_features(params: ModelParams, features: Sequence[PeakFeatures]) -> EncoderInputs:
    """Stack peaks into batch arrays; profiles are zero-padded with a length mask."""
    if not features:
        raise ArgumentError("no peaks to stack")
    for f in features:
        if f.mass_spectrum.shape != (params.n_mz,):
            raise ArgumentError(
                f"mass spectrum of length {f.mass_spectrum.size}, model expects {params.n_mz}"
            )
        if f.chrom_segment.shape != (params.segment_steps,):
            raise ArgumentError(
                f"chromatogram segment of length {f.chrom_segment.size}, "
                f"model expects {params.segment_steps}"
            )
        if f.peak_profile.size == 0:
            raise ArgumentError("empty peak profile")
    steps = max(f.peak_profile.size for f in features)
    profiles = np.zeros((len(features), steps, 1))
    mask = np.zeros((len(features), steps))
    for row, f in enumerate(features):
        profiles[row, : f.peak_profile.size, 0] = f.peak_profile
        mask[row, : f.peak_profile.size] = 1.0
    return EncoderInputs(
        mass=np.stack([f.mass_spectrum for f in features]),
        profiles=profiles,
        mask=mask,
        segments=np.stack([f.chrom_segment for f in features])[:, :, None],
    )


# encoders --------------------------------------------------------------------


def _mass_forward(t, x, variant, mode, rng):
    h, c1 = dense_apply(x, t["mass.d1.W"], t["mass.d1.b"], "relu")
    h, m1 = dropout_apply(h, variant.mass_dropout, mode, rng)
    h, c2 = dense_apply(h, t["mass.d2.W"], t["mass.d2.b"], "relu")
    h, m2 = dropout_apply(h, variant.mass_dropout, mode, rng)
    out, c3 = dense_apply(h, t["mass.out.W"], t["mass.out.b"], "linear")
    return out, (c1, m1, c2, m2, c3)


def _mass_backward(dout, cache):
    c1, m1, c2, m2, c3 = cache
    grads = {}
    dx, grads["mass.out.W"], grads["mass.out.b"] = dense_backward(dout, c3)
    dx, grads["mass.d2.W"], grads["mass.d2.b"] = dense_backward(dropout_backward(dx, m2), c2)
    _, grads["mass.d1.W"], grads["mass.d1.b"] = dense_backward(dropout_backward(dx, m1), c1)
    return grads


def _layer_params(t, prefix: str) -> dict[str, np.ndarray]:
    start = len(prefix) + 1
    return {name[start:]: value for name, value in t.items() if name.startswith(prefix + ".")}


def _peak_forward(t, profiles, mask, variant, mode, rng):
    full = variant.peak_encoder == "full"
    apply = lstm_apply if full else gru_apply
    seq = profiles
    layers = []
    final = None
    for layer in range(variant.recurrent_layers):
        p = _layer_params(t, f"peak.rnn{layer}")
        out, final, rc = apply(seq, p, bidirectional=full, mask=mask)
        dm = None
        if layer < variant.recurrent_layers - 1:
            seq, dm = dropout_apply(out, variant.peak_dropout, mode, rng)
        layers.append((rc, dm))
    last, m_last = dropout_apply(final, variant.peak_dropout, mode, rng)
    emb, c_out = dense_apply(last, t["peak.out.W"], t["peak.out.b"], "linear")
    return emb, (layers, m_last, c_out, full)


def _peak_backward(t, dout, cache):
    layers, m_last, c_out, full = cache
    backward = lstm_backward if full else gru_backward
    grads = {}
    dlast, grads["peak.out.W"], grads["peak.out.b"] = dense_backward(dout, c_out)
    dfinal = dropout_backward(dlast, m_last)
    dseq = None
    for layer in range(len(layers) - 1, -1, -1):
        rc, dm = layers[layer]
        prefix = f"peak.rnn{layer}"
        p = _layer_params(t, prefix)
        if layer == len(layers) - 1:
            dseq, layer_grads = backward(None, dfinal, rc, p)
        else:
            dseq, layer_grads = backward(dropout_backward(dseq, dm), None, rc, p)
        for name, value in layer_grads.items():
            grads[f"{prefix}.{name}"] = value
    return grads


def _chrom_forward(t, segments, variant, mode, rng):
    n = segments.shape[0]
    flats, stacks = [], []
    for side, convs in _stacks(variant):
        h, first_pool = maxpool1d(segments, FIRST_POOL, FIRST_POOL)
        layers = []
        for layer in range(convs):
            key = f"chrom.{side}.conv{layer}"
            h, cc = conv1d_apply(h, t[f"{key}.K"], t[f"{key}.b"], "relu")
            h, dm = dropout_apply(h, variant.conv_dropout, mode, rng)
            h, pc = maxpool1d(h, STACK_POOL, STACK_POOL)
            layers.append((cc, dm, pc))
        stacks.append((side, first_pool, layers, h.shape))
        flats.append(h.reshape(n, -1))
    flat = np.concatenate(flats, axis=1)
    flat, m_flat = dropout_apply(flat, variant.chrom_dropout, mode, rng)
    emb, c_out = dense_apply(flat, t["chrom.out.W"], t["chrom.out.b"], "linear")
    return emb, (stacks, m_flat, c_out)


def _chrom_backward(dout, cache):
    stacks, m_flat, c_out = cache
    grads = {}
    dflat, grads["chrom.out.W"], grads["chrom.out.b"] = dense_backward(dout, c_out)
    dflat = dropout_backward(dflat, m_flat)
    offset = 0
    for side, _first_pool, layers, shape in stacks:
        size = int(np.prod(shape[1:]))
        dh = dflat[:, offset : offset + size].reshape(shape)
        offset += size
        for layer in range(len(layers) - 1, -1, -1):
            cc, dm, pc = layers[layer]
            dh = dropout_backward(maxpool1d_backward(dh, pc), dm)
            key = f"chrom.{side}.conv{layer}"
            dh, grads[f"{key}.K"], grads[f"{key}.b"] = conv1d_backward(dh, cc)
    return grads


def encode(
    params: ModelParams, inputs: EncoderInputs, mode: Mode = "infer", rng: RngStream | None = None
) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Embed every stacked peak with each enabled encoder."""
    t, variant = params.tensors, params.variant
    embeddings, caches = {}, {}
    embeddings["mass"], caches["mass"] = _mass_forward(t, inputs.mass, variant, mode, rng)
    if variant.peak_encoder != "none":
        embeddings["peak"], caches["peak"] = _peak_forward(
            t, inputs.profiles, inputs.mask, variant, mode, rng
        )
    embeddings["chrom"], caches["chrom"] = _chrom_forward(t, inputs.segments, variant, mode, rng)
    return embeddings, caches


def _encoder_backward(params: ModelParams, encoder: str, demb: np.ndarray, cache) -> dict:
    if encoder == "mass":
        return _mass_backward(demb, cache)
    if encoder == "peak":
        return _peak_backward(params.tensors, demb, cache)
    return _chrom_backward(demb, cache)


def encode_features(
    params: ModelParams, features: Sequence[PeakFeatures], batch_size: int = 256
) -> dict[str, np.ndarray]:
    """Infer-mode embeddings for every peak, computed in chunks."""
    parts: dict[str, list[np.ndarray]] = {enc: [] for enc in params.encoders}
    for start in range(0, len(features), batch_size):
        inputs = stack_features(params, features[start : start + batch_size])
        embeddings, _ = encode(params, inputs, "infer")
        for enc in params.encoders:
            parts[enc].append(embeddings[enc])
    return {enc: np.concatenate(chunks, axis=0) for enc, chunks in parts.items()}


# head ------------------------------------------------------------------------


def _head_forward(t, diffs, drt, variant, mode, rng):
    z = np.concatenate([diffs[enc] for enc in variant.encoders] + [drt[:, None]], axis=1)
    z, m_in = dropout_apply(z, variant.head_dropout, mode, rng)
    h, c_hidden = dense_apply(z, t["head.hidden.W"], t["head.hidden.b"], "relu")
    p, c_out = dense_apply(h, t["head.out.W"], t["head.out.b"], "sigmoid")
    return p[:, 0], (m_in, c_hidden, c_out)


def _head_backward(dp, cache, variant):
    m_in, c_hidden, c_out = cache
    grads = {}
    dh, grads["head.out.W"], grads["head.out.b"] = dense_backward(dp[:, None], c_out)
    dz, grads["head.hidden.W"], grads["head.hidden.b"] = dense_backward(dh, c_hidden)
    dz = dropout_backward(dz, m_in)
    ddiffs, offset = {}, 0
    for enc in variant.encoders:
        width = encoding_dim(variant, enc)
        ddiffs[enc] = dz[:, offset : offset + width]
        offset += width
    return ddiffs, grads


def score_embedded_pairs(
    params: ModelParams,
    embeddings: Mapping[str, np.ndarray],
    index_a: np.ndarray,
    index_b: np.ndarray,
    abs_rt_diff: np.ndarray,
) -> np.ndarray:
    """Infer-mode head probabilities for pairs of already-embedded peaks."""
    diffs = {
        enc: np.abs(embeddings[enc][index_a] - embeddings[enc][index_b]) for enc in params.encoders
    }
    drt = np.asarray(abs_rt_diff, dtype=np.float64)
    p, _ = _head_forward(params.tensors, diffs, drt, params.variant, "infer", None)
    return p


# siamese pass ----------------------------------------------------------------


@dataclass
class ForwardCache:
    n_pairs: int
    encoder_caches: dict[str, Any]
    signs: dict[str, np.ndarray]
    head_cache: tuple
    aux_caches: dict[str, Any]


def forward_batch(
    params: ModelParams,
    left: Sequence[PeakFeatures],
    right: Sequence[PeakFeatures],
    mode: Mode = "infer",
    rng: RngStream | None = None,
) -> tuple[dict[str, np.ndarray], ForwardCache]:
    if len(left) != len(right) or not left:
        raise ArgumentError("pair batch needs two equally long, nonempty peak lists")
    n = len(left)
    inputs = stack_features(params, list(left) + list(right))
    embeddings, enc_caches = encode(params, inputs, mode, rng)
    diffs, signs = {}, {}
    for enc in params.encoders:
        delta = embeddings[enc][:n] - embeddings[enc][n:]
        diffs[enc] = np.abs(delta)
        signs[enc] = np.sign(delta)
    drt = np.array([abs(a.rt - b.rt) for a, b in zip(left, right)])
    outputs: dict[str, np.ndarray] = {}
    outputs["main"], head_cache = _head_forward(
        params.tensors, diffs, drt, params.variant, mode, rng
    )
    aux_caches = {}
    for enc in params.encoders:
        p, aux_caches[enc] = dense_apply(
            diffs[enc], params.tensors[f"aux.{enc}.W"], params.tensors[f"aux.{enc}.b"], "sigmoid"
        )
        outputs[enc] = p[:, 0]
    return outputs, ForwardCache(n, enc_caches, signs, head_cache, aux_caches)


def backward_batch(
    params: ModelParams, cache: ForwardCache, doutputs: Mapping[str, np.ndarray]
) -> dict[str, np.ndarray]:
    ddiffs, grads = _head_backward(doutputs["main"], cache.head_cache, params.variant)
    for enc in params.encoders:
        dd, grads[f"aux.{enc}.W"], grads[f"aux.{enc}.b"] = dense_backward(
            doutputs[enc][:, None], cache.aux_caches[enc]
        )
        ddiff = ddiffs[enc] + dd
        du = ddiff * cache.signs[enc]
        demb = np.concatenate([du, -du], axis=0)
        grads.update(_encoder_backward(params, enc, demb, cache.encoder_caches[enc]))
    return grads


def total_loss(
    outputs: Mapping[str, Any], labels: Any, aux_weight: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch mean of bce(main) + aux_weight * sum of auxiliary bce terms.

    Returns the loss and its gradient with respect to every output.
    """
    y = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    n = y.size
    total = 0.0
    grads: dict[str, np.ndarray] = {}
    for name, value in outputs.items():
        p = np.atleast_1d(np.asarray(value, dtype=np.float64))
        if p.shape != y.shape:
            raise ArgumentError(f"output {name!r} has shape {p.shape}, labels {y.shape}")
        weight = 1.0 if name == "main" else aux_weight
        loss, dp = bce_loss(p, y)
        total += weight * float(loss.sum()) / n
        grads[name] = weight * dp / n
    return total, grads


def loss_and_grads(
    params: ModelParams,
    left: Sequence[PeakFeatures],
    right: Sequence[PeakFeatures],
    labels: Any,
    aux_weight: float,
    mode: Mode = "train",
    rng: RngStream | None = None,
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray]]:
    outputs, cache = forward_batch(params, left, right, mode, rng)
    loss, doutputs = total_loss(outputs, labels, aux_weight)
    return loss, backward_batch(params, cache, doutputs), outputs


def model_forward(
    params: ModelParams, pair: Any, mode: Mode = "infer", rng: RngStream | None = None
) -> dict[str, float]:
    """Outputs ``main`` plus one entry per enabled encoder for a single pair."""
    outputs, _ = forward_batch(params, [pair.a], [pair.b], mode, rng)
    return {name: float(value[0]) for name, value in outputs.items()}


def predict_pair(params: ModelParams, a: PeakFeatures, b: PeakFeatures) -> float:
    ea = encode_features(params, [a])
    eb = encode_features(params, [b])
    embeddings = {enc: np.concatenate([ea[enc], eb[enc]]) for enc in params.encoders}
    p = score_embedded_pairs(
        params, embeddings, np.array([0]), np.array([1]), np.array([abs(a.rt - b.rt)])
    )
    return float(p[0])
