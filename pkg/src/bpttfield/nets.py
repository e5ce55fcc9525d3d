"""Controller networks with hand-written vector-Jacobian products.

Every trainable layer is treated as a *patch-dense* map: the flat input of a
sample is gathered into ``P`` patches of ``K`` values, each patch is
multiplied by a ``(K, F)`` weight matrix and shifted by an ``F`` bias.  A dense
layer is the special case of a single patch covering the whole input, and a
valid (unpadded) convolution is a precomputed gather index.  This keeps the
forward pass and both adjoints in one code path.

Batched arrays have shape ``(B, n)``; a 1-D input is treated as one sample.
Parameter gradients returned by the batched routines are summed over the
batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InputError, SpecError

KINDS = ("mlp", "cnn", "polynomial", "linear")
ACTIVATIONS = ("tanh", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | conv2d | conv1d
    features: int
    kernel: tuple = ()
    stride: tuple = ()
    activation: str = "tanh"


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    input_shape: tuple
    output_shape: tuple
    layers: tuple = ()
    # polynomial controllers: c = sum_k signs[k] * theta[k] * x**powers[k]
    powers: tuple = ()
    signs: tuple = ()


@dataclass(frozen=True)
class ParamBlock:
    name: str
    offset: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class _Layer:
    n_in: int
    out_shape: tuple
    patches: int
    width: int  # K, values per patch
    features: int
    in_channels: int
    activation: str
    w_offset: int
    b_offset: int
    index: np.ndarray | None = field(default=None, compare=False)

    @property
    def n_out(self):
        return self.patches * self.features


# -- builders ---------------------------------------------------------------

def mlp(n_in, hidden, n_out, activation="tanh"):
    """Fully connected net: ``n_in -> hidden... (activation) -> n_out`` (linear)."""
    layers = [LayerSpec("dense", int(h), activation=activation) for h in hidden]
    layers.append(LayerSpec("dense", int(n_out), activation="none"))
    return NetworkSpec("mlp", (int(n_in),), (int(n_out),), tuple(layers))


def quantum_cnn(grid=32, features=60):
    """Conv2d (kernel (3, 2), stride 2) -> conv1d (kernel 3, stride 2) -> dense(1).

    The input is the wave function as ``(grid, 2)`` real/imaginary channels.
    """
    layers = (
        LayerSpec("conv2d", features, kernel=(3, 2), stride=(2, 2)),
        LayerSpec("conv1d", features, kernel=(3,), stride=(2,)),
        LayerSpec("dense", 1, activation="none"),
    )
    return NetworkSpec("cnn", (int(grid), 2), (1,), layers)


def polynomial(powers=(2, 1), signs=(1, 1)):
    return NetworkSpec("polynomial", (1,), (1,), powers=tuple(powers), signs=tuple(signs))


def linear(n_in, n_out=1):
    """Bias-free linear feedback ``c = theta @ x`` with ``theta`` of shape (n_out, n_in)."""
    return NetworkSpec("linear", (int(n_in),), (int(n_out),))


# -- layout -----------------------------------------------------------------

def _conv_index(in_shape, kernel, stride):
    if len(in_shape) == 3:
        h, w, c = in_shape
        kh, kw = kernel
        sh, sw = stride
        ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
        if kh > h or kw > w or ho < 1 or wo < 1:
            raise SpecError(f"conv2d kernel {kernel} does not fit input {in_shape}")
        i, j, u, v, ch = np.ix_(np.arange(ho), np.arange(wo), np.arange(kh), np.arange(kw), np.arange(c))
        idx = ((i * sh + u) * w + (j * sw + v)) * c + ch
        return idx.reshape(ho * wo, kh * kw * c), (ho, wo), c
    length, c = in_shape
    (k,), (s,) = kernel, stride
    lo = (length - k) // s + 1
    if k > length or lo < 1:
        raise SpecError(f"conv1d kernel {kernel} does not fit input {in_shape}")
    i, u, ch = np.ix_(np.arange(lo), np.arange(k), np.arange(c))
    idx = (i * s + u) * c + ch
    return idx.reshape(lo, k * c), (lo,), c


@lru_cache(maxsize=None)
def _plan(spec):
    if spec.kind not in KINDS:
        raise SpecError(f"unknown network kind {spec.kind!r}")
    if spec.kind in ("polynomial", "linear"):
        if spec.kind == "polynomial":
            if len(spec.powers) == 0 or len(spec.powers) != len(spec.signs):
                raise SpecError("polynomial spec needs matching powers and signs")
            if spec.input_shape != (1,) or spec.output_shape != (1,):
                raise SpecError("polynomial controllers are scalar-to-scalar")
        elif len(spec.input_shape) != 1 or len(spec.output_shape) != 1:
            raise SpecError("linear controllers map vectors to vectors")
        return ()
    if not spec.layers:
        raise SpecError(f"{spec.kind} spec has no layers")

    shape = tuple(int(s) for s in spec.input_shape)
    plan = []
    offset = 0
    for layer in spec.layers:
        if layer.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {layer.activation!r}")
        if layer.features < 1:
            raise SpecError("layer features must be positive")
        n_in = int(np.prod(shape))
        if layer.kind == "dense":
            index, patches, width, cin = None, 1, n_in, n_in
            out_shape = (layer.features,)
        elif layer.kind == "conv2d":
            if len(shape) == 2:
                shape = shape + (1,)
            if len(shape) != 3:
                raise SpecError(f"conv2d needs a 2-D input, got shape {shape}")
            index, spatial, cin = _conv_index(shape, tuple(layer.kernel), tuple(layer.stride))
            patches, width = index.shape
            out_shape = spatial + (layer.features,)
        elif layer.kind == "conv1d":
            if len(shape) == 3 and shape[1] == 1:
                shape = (shape[0], shape[2])
            if len(shape) != 2:
                raise SpecError(f"conv1d needs a (length, channels) input, got shape {shape}")
            index, spatial, cin = _conv_index(shape, tuple(layer.kernel), tuple(layer.stride))
            patches, width = index.shape
            out_shape = spatial + (layer.features,)
        else:
            raise SpecError(f"unknown layer kind {layer.kind!r}")
        w_off = offset
        b_off = w_off + width * layer.features
        offset = b_off + layer.features
        plan.append(_Layer(n_in, out_shape, patches, width, layer.features, cin,
                           layer.activation, w_off, b_off, index))
        shape = out_shape
    if int(np.prod(shape)) != int(np.prod(spec.output_shape)):
        raise SpecError(f"network produces shape {shape}, spec declares {spec.output_shape}")
    return tuple(plan)


def param_layout(spec):
    """Contiguous ``ParamBlock`` records covering the flat parameter vector."""
    plan = _plan(spec)
    if spec.kind == "polynomial":
        return [ParamBlock("coefficients", 0, (len(spec.powers),))]
    if spec.kind == "linear":
        return [ParamBlock("gain", 0, (spec.output_shape[0], spec.input_shape[0]))]
    blocks = []
    for k, layer in enumerate(plan):
        blocks.append(ParamBlock(f"layer{k}.weight", layer.w_offset, (layer.width, layer.features)))
        blocks.append(ParamBlock(f"layer{k}.bias", layer.b_offset, (layer.features,)))
    return blocks


def param_count(spec):
    return sum(block.size for block in param_layout(spec))


def init_params(spec, seed):
    """Glorot-uniform weights, zero biases, deterministic in ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    plan = _plan(spec)
    theta = np.zeros(param_count(spec))
    if spec.kind == "polynomial":
        lim = np.sqrt(6.0 / (len(spec.powers) + 1))
        theta[:] = rng.uniform(-lim, lim, size=len(spec.powers))
        return theta
    if spec.kind == "linear":
        m, d = spec.output_shape[0], spec.input_shape[0]
        theta[:] = rng.uniform(-1, 1, size=m * d) * np.sqrt(6.0 / (m + d))
        return theta
    for layer in plan:
        fan_in = layer.width
        fan_out = layer.features * (layer.width // layer.in_channels if layer.index is not None else 1)
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        n = layer.width * layer.features
        theta[layer.w_offset:layer.w_offset + n] = rng.uniform(-lim, lim, size=n)
    return theta


# -- evaluation -------------------------------------------------------------

def _as_batch(spec, x, params):
    x = np.asarray(x, dtype=np.float64)
    n_in = int(np.prod(spec.input_shape))
    single = x.ndim == 1
    xb = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    if xb.shape[1] != n_in:
        raise InputError(f"network input has {xb.shape[1]} values, expected {n_in}")
    if np.shape(params) != (param_count(spec),):
        raise InputError(f"parameter vector has shape {np.shape(params)}, expected ({param_count(spec)},)")
    return xb, single


def forward_batch(spec, params, x):
    """Evaluate a batch ``(B, n_in)``; returns ``(out, cache)``."""
    if spec.kind == "polynomial":
        out = np.zeros_like(x)
        for s, p, th in zip(spec.signs, spec.powers, params):
            out = out + s * th * x ** p
        return out, x
    if spec.kind == "linear":
        gain = params.reshape(spec.output_shape[0], spec.input_shape[0])
        return x @ gain.T, x
    h = x
    cache = []
    for layer in _plan(spec):
        w = params[layer.w_offset:layer.b_offset].reshape(layer.width, layer.features)
        b = params[layer.b_offset:layer.b_offset + layer.features]
        patches = h[:, None, :] if layer.index is None else h[:, layer.index]
        z = patches @ w + b
        a = np.tanh(z) if layer.activation == "tanh" else z
        cache.append((patches, a))
        h = a.reshape(len(x), layer.n_out)
    return h, cache


def vjp_batch(spec, params, cache, cot, need_input=True, need_params=True):
    """Contract ``cot`` (B, n_out) with the Jacobians of a cached batch.

    Returns ``(grad_params, grad_input)``; the first is summed over the batch
    (``None`` unless ``need_params``), the second is ``None`` unless
    ``need_input``.
    """
    cot = np.asarray(cot, dtype=np.float64)
    if spec.kind == "polynomial":
        x = cache
        g = cot[:, 0]
        grad_p = None
        if need_params:
            grad_p = np.array([s * np.dot(g, x[:, 0] ** p) for s, p in zip(spec.signs, spec.powers)])
        grad_x = None
        if need_input:
            slope = np.zeros_like(x)
            for s, p, th in zip(spec.signs, spec.powers, params):
                if p != 0:
                    slope = slope + s * th * p * x ** (p - 1)
            grad_x = cot * slope
        return grad_p, grad_x
    if spec.kind == "linear":
        x = cache
        gain = params.reshape(spec.output_shape[0], spec.input_shape[0])
        grad_p = (cot.T @ x).ravel() if need_params else None
        return grad_p, (cot @ gain if need_input else None)

    plan = _plan(spec)
    grad = np.zeros(param_count(spec)) if need_params else None
    g = cot
    n_batch = cot.shape[0]
    for k in range(len(plan) - 1, -1, -1):
        layer = plan[k]
        patches, a = cache[k]
        delta = g.reshape(n_batch, layer.patches, layer.features)
        if layer.activation == "tanh":
            delta = delta * (1.0 - a * a)
        if need_params:
            flat_delta = delta.reshape(-1, layer.features)
            grad[layer.w_offset:layer.b_offset] = (patches.reshape(-1, layer.width).T @ flat_delta).ravel()
            grad[layer.b_offset:layer.b_offset + layer.features] = flat_delta.sum(axis=0)
        if k == 0 and not need_input:
            return grad, None
        w = params[layer.w_offset:layer.b_offset].reshape(layer.width, layer.features)
        dpatch = delta @ w.T
        if layer.index is None:
            g = dpatch[:, 0, :]
        else:
            flat = (np.arange(n_batch)[:, None, None] * layer.n_in + layer.index[None]).ravel()
            g = np.bincount(flat, weights=dpatch.ravel(), minlength=n_batch * layer.n_in)
            g = g.reshape(n_batch, layer.n_in)
    return grad, g


def forward(spec, params, x):
    """Controller output for one input vector (or a ``(B, n_in)`` batch)."""
    params = np.asarray(params, dtype=np.float64)
    xb, single = _as_batch(spec, x, params)
    out, _ = forward_batch(spec, params, xb)
    return out[0] if single else out


def vjp(spec, params, x, cotangent, need_input=True):
    """``(cot . dN/dtheta, cot . dN/dx)`` at ``x``.

    For a batch, the parameter part is summed over samples and the input
    part is returned per sample.
    """
    params = np.asarray(params, dtype=np.float64)
    xb, single = _as_batch(spec, x, params)
    cot = np.asarray(cotangent, dtype=np.float64).reshape(xb.shape[0], -1)
    if cot.shape[1] != int(np.prod(spec.output_shape)):
        raise InputError(f"cotangent has {cot.shape[1]} values, expected {int(np.prod(spec.output_shape))}")
    _, cache = forward_batch(spec, params, xb)
    gp, gx = vjp_batch(spec, params, cache, cot, need_input=need_input)
    if gx is not None and single:
        gx = gx[0]
    return gp, gx
