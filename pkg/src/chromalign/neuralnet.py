"""Small numerical layer library with explicit forward and backward passes.

Every ``*_apply`` function returns its output together with a cache object and
has a matching ``*_backward`` taking the upstream gradient and that cache.
Sequence layers work on ``(batch, steps, channels)`` arrays; a 2-D input is
treated as a batch of one. Everything is float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, NumericError

logger = logging.getLogger(__name__)

Activation = Literal["relu", "sigmoid", "tanh", "linear"]
Mode = Literal["train", "infer"]

BCE_CLAMP = 1e-7


class RngStream:
    """Seeded PCG64 stream; identical seeds give identical draws on every platform."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def random(self, shape: int | tuple[int, ...]) -> np.ndarray:
        values = self._generator.random(shape)
        self.counter += int(np.size(values))
        return values

    def uniform(self, low: float, high: float, shape: int | tuple[int, ...]) -> np.ndarray:
        values = self._generator.uniform(low, high, shape)
        self.counter += int(np.size(values))
        return values

    def normal(self, loc: float, scale: float, shape: int | tuple[int, ...]) -> np.ndarray:
        values = self._generator.normal(loc, scale, shape)
        self.counter += int(np.size(values))
        return values

    def integers(self, low: int, high: int, shape: int | tuple[int, ...] | None = None):
        values = self._generator.integers(low, high, shape)
        self.counter += int(np.size(values))
        return values

    def permutation(self, n: int) -> np.ndarray:
        self.counter += n
        return self._generator.permutation(n)

    def choice(self, values: np.ndarray, size: int, replace: bool = False) -> np.ndarray:
        self.counter += size
        return self._generator.choice(values, size=size, replace=replace)


# activations -----------------------------------------------------------------


def activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "linear":
        return z
    raise ArgumentError(f"unknown activation {activation!r}")


def activation_grad(dy: np.ndarray, z: np.ndarray, y: np.ndarray, activation: Activation):
    if activation == "relu":
        return dy * (z > 0)
    if activation == "sigmoid":
        return dy * y * (1.0 - y)
    if activation == "tanh":
        return dy * (1.0 - y * y)
    return dy


# dense -----------------------------------------------------------------------


@dataclass
class DenseCache:
    x: np.ndarray
    W: np.ndarray
    z: np.ndarray
    y: np.ndarray
    activation: Activation


def dense_apply(
    x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: Activation = "linear"
) -> tuple[np.ndarray, DenseCache]:
    """y = act(W x + b) over the last axis of ``x``; ``W`` is (out, in)."""
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ArgumentError(
            f"dense shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}"
        )
    z = x @ W.T + b
    y = activate(z, activation)
    return y, DenseCache(x, W, z, y, activation)


def dense_backward(dy: np.ndarray, cache: DenseCache):
    dz = activation_grad(dy, cache.z, cache.y, cache.activation)
    dx = dz @ cache.W
    flat_dz = dz.reshape(-1, dz.shape[-1])
    flat_x = cache.x.reshape(-1, cache.x.shape[-1])
    dW = flat_dz.T @ flat_x
    db = flat_dz.sum(axis=0)
    return dx, dW, db


# conv1d ----------------------------------------------------------------------


@dataclass
class ConvCache:
    cols: np.ndarray
    kernels: np.ndarray
    z: np.ndarray
    y: np.ndarray
    activation: Activation
    length: int
    squeeze: bool


def conv1d_apply(
    x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, activation: Activation = "linear"
) -> tuple[np.ndarray, ConvCache]:
    """Valid correlation with kernel width 3: (B, L, Cin) -> (B, L-2, Cout)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    batch, length, channels = x.shape
    if length < 3:
        raise ArgumentError(f"conv1d needs at least 3 steps, got {length}")
    out_channels, in_channels, width = kernels.shape
    if in_channels != channels or width != 3 or bias.shape != (out_channels,):
        raise ArgumentError(
            f"conv1d shape mismatch: x {x.shape}, kernels {kernels.shape}, bias {bias.shape}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x, 3, axis=1)
    cols = np.ascontiguousarray(windows).reshape(batch * (length - 2), channels * 3)
    z = (cols @ kernels.reshape(out_channels, -1).T + bias).reshape(batch, length - 2, out_channels)
    y = activate(z, activation)
    cache = ConvCache(cols, kernels, z, y, activation, length, squeeze)
    return (y[0] if squeeze else y), cache


def conv1d_backward(dy: np.ndarray, cache: ConvCache):
    if cache.squeeze:
        dy = dy[None]
    dz = activation_grad(dy, cache.z, cache.y, cache.activation)
    batch, steps, out_channels = dz.shape
    flat = dz.reshape(-1, out_channels)
    dK = (flat.T @ cache.cols).reshape(cache.kernels.shape)
    db = flat.sum(axis=0)
    in_channels = cache.kernels.shape[1]
    dcols = (flat @ cache.kernels.reshape(out_channels, -1)).reshape(batch, steps, in_channels, 3)
    dx = np.zeros((batch, cache.length, in_channels))
    for k in range(3):
        dx[:, k : k + steps, :] += dcols[..., k]
    return (dx[0] if cache.squeeze else dx), dK, db


# max pooling -----------------------------------------------------------------


@dataclass
class PoolCache:
    positions: np.ndarray
    shape: tuple[int, ...]
    squeeze: bool


def pooled_length(length: int, k: int, s: int) -> int:
    return (length - k) // s + 1


def maxpool1d(x: np.ndarray, k: int, s: int) -> tuple[np.ndarray, PoolCache]:
    """Max over windows of ``k`` steps every ``s`` steps; a short remainder is dropped."""
    if k < 1 or s < 1:
        raise ArgumentError(f"pool window and stride must be >= 1, got k={k}, s={s}")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    length = x.shape[1]
    if length < k:
        raise ArgumentError(f"sequence of {length} steps shorter than pool window {k}")
    n_out = pooled_length(length, k, s)
    index = np.arange(n_out)[:, None] * s + np.arange(k)[None, :]
    windows = x[:, index, :]
    arg = np.argmax(windows, axis=2)
    positions = index[np.arange(n_out)[None, :, None], arg]
    y = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
    cache = PoolCache(positions, x.shape, squeeze)
    return (y[0] if squeeze else y), cache


def maxpool1d_backward(dy: np.ndarray, cache: PoolCache) -> np.ndarray:
    if cache.squeeze:
        dy = dy[None]
    batch, _, channels = cache.shape
    dx = np.zeros(cache.shape)
    b_idx = np.arange(batch)[:, None, None]
    c_idx = np.arange(channels)[None, None, :]
    np.add.at(dx, (b_idx, cache.positions, c_idx), dy)
    return dx[0] if cache.squeeze else dx


# dropout ---------------------------------------------------------------------


def dropout_apply(
    x: np.ndarray, rate: float, mode: Mode, rng: RngStream | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout; returns the output and the scaled keep-mask (None when identity)."""
    if not 0 <= rate < 1:
        raise ArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "infer" or rate == 0:
        return x, None
    if rng is None:
        raise ArgumentError("train-mode dropout needs an rng stream")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return dy if mask is None else dy * mask


# recurrent layers ------------------------------------------------------------


@dataclass
class _DirectionCache:
    kind: str
    order: list[int]
    xs: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray | None
    gates: dict[str, np.ndarray]
    mask: np.ndarray


@dataclass
class RecurrentCache:
    kind: str
    directions: list[_DirectionCache]
    units: int
    squeeze: bool


def _lstm_direction(x, mask, Wx, Wh, b, reverse):
    batch, steps, _ = x.shape
    units = Wh.shape[0]
    h = np.zeros((batch, units))
    c = np.zeros((batch, units))
    order = list(range(steps - 1, -1, -1)) if reverse else list(range(steps))
    outputs = np.zeros((batch, steps, units))
    h_prev = np.zeros((steps, batch, units))
    c_prev = np.zeros((steps, batch, units))
    gates = {name: np.zeros((steps, batch, units)) for name in ("i", "f", "g", "o", "tc")}
    for t in order:
        h_prev[t], c_prev[t] = h, c
        z = x[:, t, :] @ Wx + h @ Wh + b
        i = expit(z[:, :units])
        f = expit(z[:, units : 2 * units])
        g = np.tanh(z[:, 2 * units : 3 * units])
        o = expit(z[:, 3 * units :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        for name, value in (("i", i), ("f", f), ("g", g), ("o", o), ("tc", tc)):
            gates[name][t] = value
        m = mask[:, t][:, None]
        outputs[:, t, :] = m * h_new
        h = np.where(m > 0, h_new, h)
        c = np.where(m > 0, c_new, c)
    cache = _DirectionCache("lstm", order, x, h_prev, c_prev, gates, mask)
    return outputs, h, cache


def _lstm_direction_backward(dout, dfinal, cache, Wx, Wh):
    units = Wh.shape[0]
    batch = dout.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * units)
    dx = np.zeros(cache.xs.shape)
    dh = np.zeros((batch, units)) if dfinal is None else dfinal.copy()
    dc = np.zeros((batch, units))
    g = cache.gates
    for t in reversed(cache.order):
        m = cache.mask[:, t][:, None]
        dh_new = m * (dh + dout[:, t, :])
        dc_state = m * dc
        i, f, gg, o, tc = g["i"][t], g["f"][t], g["g"][t], g["o"][t], g["tc"][t]
        do = dh_new * tc
        dc_new = dc_state + dh_new * o * (1.0 - tc * tc)
        df = dc_new * cache.c_prev[t]
        di = dc_new * gg
        dg = dc_new * i
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1
        )
        x_t = cache.xs[:, t, :]
        dWx += x_t.T @ dz
        dWh += cache.h_prev[t].T @ dz
        db += dz.sum(axis=0)
        dx[:, t, :] = dz @ Wx.T
        dh = dz @ Wh.T + (1 - m) * dh
        dc = dc_new * f + (1 - m) * dc
    return dx, {"Wx": dWx, "Wh": dWh, "b": db}


def _gru_direction(x, mask, Wx, Wh, b, reverse):
    batch, steps, _ = x.shape
    units = Wh.shape[0]
    h = np.zeros((batch, units))
    order = list(range(steps - 1, -1, -1)) if reverse else list(range(steps))
    outputs = np.zeros((batch, steps, units))
    h_prev = np.zeros((steps, batch, units))
    gates = {name: np.zeros((steps, batch, units)) for name in ("z", "r", "n")}
    for t in order:
        h_prev[t] = h
        xw = x[:, t, :] @ Wx + b
        hz = h @ Wh[:, : 2 * units]
        zg = expit(xw[:, :units] + hz[:, :units])
        r = expit(xw[:, units : 2 * units] + hz[:, units:])
        n = np.tanh(xw[:, 2 * units :] + (r * h) @ Wh[:, 2 * units :])
        h_new = (1 - zg) * n + zg * h
        gates["z"][t], gates["r"][t], gates["n"][t] = zg, r, n
        m = mask[:, t][:, None]
        outputs[:, t, :] = m * h_new
        h = np.where(m > 0, h_new, h)
    cache = _DirectionCache("gru", order, x, h_prev, None, gates, mask)
    return outputs, h, cache


def _gru_direction_backward(dout, dfinal, cache, Wx, Wh):
    units = Wh.shape[0]
    batch = dout.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(3 * units)
    dx = np.zeros(cache.xs.shape)
    dh = np.zeros((batch, units)) if dfinal is None else dfinal.copy()
    U_n = Wh[:, 2 * units :]
    U_zr = Wh[:, : 2 * units]
    for t in reversed(cache.order):
        m = cache.mask[:, t][:, None]
        dh_new = m * (dh + dout[:, t, :])
        zg, r, n = cache.gates["z"][t], cache.gates["r"][t], cache.gates["n"][t]
        h_prev = cache.h_prev[t]
        dn_pre = dh_new * (1 - zg) * (1 - n * n)
        dz_pre = dh_new * (h_prev - n) * zg * (1 - zg)
        drh = dn_pre @ U_n.T
        dr_pre = drh * h_prev * r * (1 - r)
        dzr = np.concatenate([dz_pre, dr_pre], axis=1)
        dall = np.concatenate([dzr, dn_pre], axis=1)
        x_t = cache.xs[:, t, :]
        dWx += x_t.T @ dall
        db += dall.sum(axis=0)
        dWh[:, : 2 * units] += h_prev.T @ dzr
        dWh[:, 2 * units :] += (r * h_prev).T @ dn_pre
        dx[:, t, :] = dall @ Wx.T
        dh_prev = dh_new * zg + drh * r + dzr @ U_zr.T
        dh = dh_prev + (1 - m) * dh
    return dx, {"Wx": dWx, "Wh": dWh, "b": db}


_RECURRENT = {
    "lstm": (_lstm_direction, _lstm_direction_backward, 4),
    "gru": (_gru_direction, _gru_direction_backward, 3),
}


def _recurrent_apply(kind, x, params, bidirectional, mask):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1] == 0:
        raise ArgumentError(f"{kind} expects a nonempty (batch, steps, features) input")
    batch, steps, features = x.shape
    mask = np.ones((batch, steps)) if mask is None else np.asarray(mask, dtype=np.float64)
    if mask.shape != (batch, steps):
        raise ArgumentError(f"mask shape {mask.shape} does not match input {(batch, steps)}")
    forward, _, n_gates = _RECURRENT[kind]
    names = ["fwd", "bwd"] if bidirectional else ["fwd"]
    outputs, finals, caches = [], [], []
    units = None
    for name in names:
        Wx, Wh, b = params[f"{name}.Wx"], params[f"{name}.Wh"], params[f"{name}.b"]
        units = Wh.shape[0]
        expected = ((features, n_gates * units), (units, n_gates * units), (n_gates * units,))
        if (Wx.shape, Wh.shape, b.shape) != expected:
            raise ArgumentError(
                f"{kind} {name} shape mismatch: x features {features}, Wx {Wx.shape}, "
                f"Wh {Wh.shape}, b {b.shape}"
            )
        out, final, cache = forward(x, mask, Wx, Wh, b, reverse=(name == "bwd"))
        outputs.append(out)
        finals.append(final)
        caches.append(cache)
    seq = np.concatenate(outputs, axis=2)
    final = np.concatenate(finals, axis=1)
    cache = RecurrentCache(kind, caches, units, squeeze)
    if squeeze:
        return seq[0], final[0], cache
    return seq, final, cache


def _recurrent_backward(dseq, dfinal, cache: RecurrentCache, params):
    if cache.squeeze:
        dseq = None if dseq is None else dseq[None]
        dfinal = None if dfinal is None else dfinal[None]
    _, backward, _ = _RECURRENT[cache.kind]
    units = cache.units
    names = ["fwd", "bwd"][: len(cache.directions)]
    dx = None
    grads: dict[str, np.ndarray] = {}
    for position, (name, direction) in enumerate(zip(names, cache.directions)):
        sl = slice(position * units, (position + 1) * units)
        batch, steps = direction.mask.shape
        dout = np.zeros((batch, steps, units)) if dseq is None else dseq[:, :, sl]
        dfin = None if dfinal is None else dfinal[:, sl]
        d_in, d_params = backward(dout, dfin, direction, params[f"{name}.Wx"], params[f"{name}.Wh"])
        dx = d_in if dx is None else dx + d_in
        for key, value in d_params.items():
            grads[f"{name}.{key}"] = value
    return (dx[0] if cache.squeeze else dx), grads


def lstm_apply(
    x: np.ndarray,
    params: Mapping[str, np.ndarray],
    bidirectional: bool = False,
    mask: np.ndarray | None = None,
):
    """LSTM over ``x``; returns (hidden sequence, final state, cache).

    ``params`` holds ``fwd.Wx`` (features, 4H), ``fwd.Wh`` (H, 4H), ``fwd.b``
    (4H), gate order input/forget/candidate/output, and the same under
    ``bwd.`` when bidirectional. Masked steps leave the state unchanged and
    emit zeros.
    """
    return _recurrent_apply("lstm", x, params, bidirectional, mask)


def lstm_backward(dseq, dfinal, cache: RecurrentCache, params: Mapping[str, np.ndarray]):
    return _recurrent_backward(dseq, dfinal, cache, params)


def gru_apply(
    x: np.ndarray,
    params: Mapping[str, np.ndarray],
    bidirectional: bool = False,
    mask: np.ndarray | None = None,
):
    """GRU with gate order update/reset/candidate; same conventions as :func:`lstm_apply`."""
    return _recurrent_apply("gru", x, params, bidirectional, mask)


def gru_backward(dseq, dfinal, cache: RecurrentCache, params: Mapping[str, np.ndarray]):
    return _recurrent_backward(dseq, dfinal, cache, params)


# loss ------------------------------------------------------------------------


def bce_loss(p, y) -> tuple[np.ndarray, np.ndarray]:
    """Binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    dp = -y / p + (1.0 - y) / (1.0 - p)
    return loss, dp


# optimiser -------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    for name, grad in grads.items():
        if name not in params:
            raise ArgumentError(f"gradient for unknown parameter {name!r}")
        if grad.shape != params[name].shape:
            raise ArgumentError(f"gradient shape {grad.shape} != parameter shape for {name!r}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name!r}", parameter=name)
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, grad in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(grad)
            v = np.zeros_like(grad)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        params[name] = params[name] - state.lr * (m / correction1) / (
            np.sqrt(v / correction2) + state.epsilon
        )
    return params, state


# gradient checking -----------------------------------------------------------


@dataclass
class GradientReport:
    max_relative_error: float
    worst_parameter: str | None
    checked_entries: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def gradient_check(
    fn: Callable[[dict[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: RngStream | None = None,
    floor: float = 1e-6,
) -> GradientReport:
    """Compare analytic gradients from ``fn`` against central differences.

    ``fn`` maps a parameter dict to ``(loss, grads)`` and must be deterministic.
    The relative error of an entry is |a - n| / max(|a|, |n|, floor). With
    ``max_entries`` only that many randomly chosen entries per tensor are checked.
    """
    base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    _, analytic = fn({k: v.copy() for k, v in base.items()})
    worst, worst_name, checked = 0.0, None, 0
    for name, value in base.items():
        if name not in analytic:
            continue
        flat_size = value.size
        entries = np.arange(flat_size)
        if max_entries is not None and flat_size > max_entries:
            chooser = rng or RngStream(0)
            entries = np.sort(chooser.choice(entries, max_entries, replace=False))
        for entry in entries:
            perturbed = {k: v.copy() for k, v in base.items()}
            flat = perturbed[name].reshape(-1)
            original = flat[entry]
            flat[entry] = original + step
            plus, _ = fn(perturbed)
            flat[entry] = original - step
            minus, _ = fn(perturbed)
            numeric = (plus - minus) / (2 * step)
            exact = float(np.asarray(analytic[name]).reshape(-1)[entry])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            checked += 1
            if error > worst:
                worst, worst_name = error, name
    logger.debug("gradient check: %d entries, max relative error %.3g", checked, worst)
    return GradientReport(worst, worst_name, checked, tolerance)
