"""
Coordinate-augmented convolutional baseline.

A stack of 3x3 periodic convolutions on grid values, with the normalized
node coordinates appended as two extra input channels. It sees the field in
a fixed frame and at fixed grid positions, so it is neither gauge- nor
translation-equivariant.

Fields are channels-last ``(..., n, n, C)``. Each convolution is a sum of nine
matrix products, one per kernel tap, on shifted views of the wrap-padded input.
Parameters live in a flat dict, ``conv{i}.w`` of shape ``(out, in, 3, 3)``
and ``conv{i}.b`` of shape ``(out,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CacheMismatch, ShapeMismatch
from .grid import check_resolution, resolution_of

CHANNELS = (4, 32, 32, 32, 2)
# tap (i, j) reads the input at offset (i - 1, j - 1)
TAPS = tuple((i, j) for i in range(3) for j in range(3))
NARROW = 8


@dataclass(frozen=True)
class ConvLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w, b = np.asarray(self.weights, dtype=np.float64), np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ValueError(f"weights must be out x in x 3 x 3, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias must have shape ({w.shape[0]},), got {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class CoordCnnModel:
    params: dict

    @property
    def depth(self) -> int:
        return len(self.params) // 2

    @property
    def layers(self) -> list:
        return [ConvLayer(self.params[f"conv{i}.w"], self.params[f"conv{i}.b"]) for i in range(self.depth)]

    def with_params(self, params: dict) -> "CoordCnnModel":
        return replace(self, params=dict(params))

    def forward(self, f):
        return cnn_forward(self, f)

    def backward(self, cache, grad_out, need_input_grad=False):
        return cnn_backward(self, cache, grad_out, need_input_grad)


def from_layers(layers) -> CoordCnnModel:
    params = {}
    for i, layer in enumerate(layers):
        params[f"conv{i}.w"] = layer.weights
        params[f"conv{i}.b"] = layer.bias
    return CoordCnnModel(params)


def init_cnn(rng: np.random.Generator, channels=CHANNELS) -> CoordCnnModel:
    """He-uniform weights (fan-in ``9 * in``) and zero biases."""
    if channels[0] != 4:
        raise ValueError("the first layer takes 2 field and 2 coordinate channels")
    params = {}
    for i, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
        bound = np.sqrt(6.0 / (9 * c_in))
        params[f"conv{i}.w"] = rng.uniform(-bound, bound, (c_out, c_in, 3, 3))
        params[f"conv{i}.b"] = np.zeros(c_out)
    return CoordCnnModel(params)


def coord_channels(n: int) -> np.ndarray:
    """Node coordinates ``x / 2 pi`` in ``[0, 1)``, shape ``(n, n, 2)``."""
    check_resolution(n)
    t = np.arange(n) / n
    x1, x2 = np.meshgrid(t, t, indexing="ij")
    return np.stack([x1, x2], axis=-1)


def _wrap_pad(x: np.ndarray) -> np.ndarray:
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    return np.pad(x, pad, mode="wrap")


def _taps(w: np.ndarray) -> np.ndarray:
    """``(out, in, 3, 3)`` kernel as nine ``(in, out)`` matrices in :data:`TAPS` order."""
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(9, w.shape[1], w.shape[0])


def _conv(xp: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Periodic 3x3 cross-correlation of the padded input ``xp``."""
    n = xp.shape[-2] - 2
    c_in = xp.shape[-1]
    if c_in <= NARROW:
        # few input channels: one product on the stacked shifts is cheaper
        cols = np.concatenate([xp[..., i:i + n, j:j + n, :] for i, j in TAPS], axis=-1)
        return cols @ _taps(w).reshape(9 * c_in, -1) + b
    taps = _taps(w)
    out = np.broadcast_to(b, xp.shape[:-3] + (n, n, b.size)).copy()
    for t, (i, j) in enumerate(TAPS):
        out += xp[..., i:i + n, j:j + n, :] @ taps[t]
    return out


def _conv_weight_grad(xp: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Kernel gradient; the narrower of input and output gradient is the one shifted."""
    n, c_in, c_out = g.shape[-2], xp.shape[-1], g.shape[-1]
    grad = np.empty((9, c_in, c_out))
    if c_out < c_in:
        x_flat = np.ascontiguousarray(xp[..., 1:n + 1, 1:n + 1, :]).reshape(-1, c_in).T
        gp = _wrap_pad(g)
        for t, (i, j) in enumerate(TAPS):
            shifted = np.ascontiguousarray(gp[..., 2 - i:2 - i + n, 2 - j:2 - j + n, :])
            grad[t] = x_flat @ shifted.reshape(-1, c_out)
    else:
        g_flat = g.reshape(-1, c_out)
        for t, (i, j) in enumerate(TAPS):
            grad[t] = np.ascontiguousarray(xp[..., i:i + n, j:j + n, :]).reshape(-1, c_in).T @ g_flat
    return grad.reshape(3, 3, c_in, c_out).transpose(3, 2, 0, 1)


def _conv_input_grad(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_conv` with respect to the unpadded input."""
    n = g.shape[-2]
    gp = _wrap_pad(g)
    taps_t = np.ascontiguousarray(_taps(w).transpose(0, 2, 1))
    out = np.zeros(g.shape[:-1] + (w.shape[1],))
    for t, (i, j) in enumerate(TAPS):
        out += gp[..., 2 - i:2 - i + n, 2 - j:2 - j + n, :] @ taps_t[t]
    return out


def cnn_forward(model: CoordCnnModel, f: np.ndarray):
    """Output field and the activation cache for :func:`cnn_backward`."""
    n = resolution_of(f)
    if not np.all(np.isfinite(f)):
        raise ValueError("input field contains non-finite entries")
    coords = np.broadcast_to(coord_channels(n), f.shape[:-1] + (2,))
    x = np.concatenate([f, coords], axis=-1)
    padded, pre_list = [], []
    depth = model.depth
    for i in range(depth):
        xp = _wrap_pad(x)
        pre = _conv(xp, model.params[f"conv{i}.w"], model.params[f"conv{i}.b"])
        padded.append(xp)
        pre_list.append(pre)
        x = np.maximum(pre, 0.0) if i < depth - 1 else pre
    cache = {
        "layout": {k: np.shape(a) for k, a in model.params.items()},
        "n": n,
        "padded": padded,
        "pre": pre_list,
    }
    return x, cache


def cnn_backward(model: CoordCnnModel, cache: dict, grad_out: np.ndarray, need_input_grad: bool = False):
    """Exact parameter gradients; ``grad_in`` covers the two field channels when requested."""
    layout = {k: np.shape(a) for k, a in model.params.items()}
    if cache.get("layout") != layout or grad_out.shape[-2] != cache["n"]:
        raise CacheMismatch("cache was produced by a model with different parameter shapes or grid")
    if grad_out.shape != cache["pre"][-1].shape:
        raise ShapeMismatch(f"grad_out has shape {grad_out.shape}, expected {cache['pre'][-1].shape}")
    grads = {}
    g = grad_out
    for i in reversed(range(model.depth)):
        if i < model.depth - 1:
            g = np.where(cache["pre"][i] > 0.0, g, 0.0)
        w = model.params[f"conv{i}.w"]
        grads[f"conv{i}.w"] = _conv_weight_grad(cache["padded"][i], g)
        grads[f"conv{i}.b"] = g.reshape(-1, w.shape[0]).sum(axis=0)
        if i > 0 or need_input_grad:
            g = _conv_input_grad(g, w)
    grad_in = g[..., :2] if need_input_grad else None
    return grads, grad_in
