"""Differentiable primitives used by the network.

Layouts are NCHW throughout. Convolution is cross-correlation (no kernel
flip). Weight layouts follow the common convention: ``(C_out, C_in, kh, kw)``
for :func:`conv2d` and ``(C_in, C_out, kh, kw)`` for
:func:`conv_transpose2d`, so the transposed convolution with a given weight
is exactly the input-gradient of the forward convolution with that weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor, make_op, record_branch

IGNORE_INDEX = 255


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ConfigError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D (transposed) convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)

    def __post_init__(self):
        for field in ("kernel", "stride", "padding", "dilation"):
            object.__setattr__(self, field, _pair(getattr(self, field)))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be positive: {self}")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.dilation) < 1:
            raise ConfigError(f"kernel, stride and dilation must be >= 1: {self}")
        if min(self.padding) < 0:
            raise ConfigError(f"padding must be >= 0: {self}")

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int = 3, dilation: int = 1) -> "ConvSpec":
        """Stride-1 spec whose output matches the input size (odd kernels)."""
        pad = dilation * (kernel - 1) // 2
        return cls(in_channels, out_channels, (kernel, kernel), (1, 1), (pad, pad), (dilation, dilation))

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        out = []
        for n, k, s, p, d in zip((h, w), self.kernel, self.stride, self.padding, self.dilation):
            size = (n + 2 * p - d * (k - 1) - 1) // s + 1
            if size < 1:
                raise ConfigError(f"non-positive output extent {size} for input {n} with {self}")
            out.append(size)
        return out[0], out[1]

    def transposed_output_size(self, h: int, w: int) -> tuple[int, int]:
        out = []
        for n, k, s, p, d in zip((h, w), self.kernel, self.stride, self.padding, self.dilation):
            size = (n - 1) * s - 2 * p + d * (k - 1) + 1
            if size < 1:
                raise ConfigError(f"non-positive output extent {size} for input {n} with {self}")
            out.append(size)
        return out[0], out[1]


def _check_nchw(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects an NCHW tensor, got shape {x.shape}")


def _im2col(xp: np.ndarray, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    kh, kw = spec.kernel
    sh, sw = spec.stride
    dh, dw = spec.dilation
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i * dh: i * dh + sh * (ho - 1) + 1: sh,
                                  j * dw: j * dw + sw * (wo - 1) + 1: sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, padded_shape: tuple, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    n, c = padded_shape[:2]
    kh, kw = spec.kernel
    sh, sw = spec.stride
    dh, dw = spec.dilation
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i * dh: i * dh + sh * (ho - 1) + 1: sh,
                j * dw: j * dw + sw * (wo - 1) + 1: sw] += cols[:, :, i, j]
    return out


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, ph: ph + h, pw: pw + w] = x
    return out


def _crop(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return x[:, :, ph: x.shape[2] - ph, pw: x.shape[3] - pw]


def _is_pointwise(spec: ConvSpec) -> bool:
    return spec.kernel == (1, 1) and spec.stride == (1, 1) and spec.padding == (0, 0)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    """Dilated, strided cross-correlation of an NCHW batch."""
    _check_nchw(x, "conv2d")
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d: input has {c} channels, spec expects {spec.in_channels}")
    expected = (spec.out_channels, spec.in_channels) + spec.kernel
    if weight.shape != expected:
        raise ShapeError(f"conv2d: weight shape {weight.shape}, expected {expected}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({spec.out_channels},)")
    ho, wo = spec.output_size(h, w)
    ph, pw = spec.padding
    w2 = weight.data.reshape(spec.out_channels, -1)
    if _is_pointwise(spec):
        cols = x.data.reshape(n, c, h * w)
    else:
        xp = _pad(x.data, ph, pw)
        cols = _im2col(xp, spec, ho, wo)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, spec.out_channels, ho, wo)

    def backward_fn(g):
        g2 = g.reshape(n, spec.out_channels, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            if _is_pointwise(spec):
                gx = dcols.reshape(x.shape)
            else:
                gx = _crop(_col2im(dcols, (n, c, h + 2 * ph, w + 2 * pw), spec, ho, wo), ph, pw)
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, inputs, backward_fn, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    """Transposed convolution: the adjoint of :func:`conv2d` plus a bias.

    ``weight`` has shape ``(in_channels, out_channels, kh, kw)``.
    """
    _check_nchw(x, "conv_transpose2d")
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, spec expects {spec.in_channels}")
    expected = (spec.in_channels, spec.out_channels) + spec.kernel
    if weight.shape != expected:
        raise ShapeError(f"conv_transpose2d: weight shape {weight.shape}, expected {expected}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape}, expected ({spec.out_channels},)")
    ho, wo = spec.transposed_output_size(h, w)
    ph, pw = spec.padding
    # Geometry of the forward conv mapping the (padded) output back onto x.
    fwd = ConvSpec(spec.out_channels, spec.in_channels, spec.kernel, spec.stride, (0, 0), spec.dilation)
    padded_shape = (n, spec.out_channels, ho + 2 * ph, wo + 2 * pw)
    w2 = weight.data.reshape(spec.in_channels, -1)
    x2 = x.data.reshape(n, c, h * w)
    cols = np.matmul(w2.T, x2)
    out = _crop(_col2im(cols, padded_shape, fwd, h, w), ph, pw)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    else:
        out = np.ascontiguousarray(out)

    def backward_fn(g):
        gcols = _im2col(_pad(g, ph, pw), fwd, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(w2, gcols).reshape(x.shape)
        if weight.requires_grad:
            gw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, inputs, backward_fn, "conv_transpose2d")


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def update(self, mean: np.ndarray, var_unbiased: np.ndarray) -> None:
        m = self.momentum
        self.running_mean *= 1 - m
        self.running_mean += m * mean
        self.running_var *= 1 - m
        self.running_var += m * var_unbiased


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: Optional[BatchNormState] = None,
    training: bool = True,
    eps: Optional[float] = None,
) -> Tensor:
    """Per-channel normalization over N, H, W.

    Training mode normalizes with biased batch statistics and, when ``state``
    is given, folds them into its running averages (unbiased variance).
    Eval mode normalizes with the running statistics.
    """
    _check_nchw(x, "batchnorm2d")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    if eps is None:
        eps = state.eps if state is not None else 1e-5
    if not training and state is None:
        raise ShapeError("batchnorm2d: eval mode requires running statistics")
    count = n * h * w
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mean[None, :, None, None]
        var = np.mean(xc * xc, axis=(0, 2, 3))
        if state is not None:
            state.update(mean, var * (count / max(count - 1, 1)))
    else:
        mean = state.running_mean.astype(x.dtype, copy=False)
        var = state.running_var.astype(x.dtype, copy=False)
        xc = x.data - mean[None, :, None, None]
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * invstd[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward_fn(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = np.sum(g * xhat, axis=(0, 2, 3))
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            scale = (gamma.data * invstd)[None, :, None, None]
            if training:
                gsum = g.sum(axis=(0, 2, 3))[None, :, None, None]
                gdot = np.sum(g * xhat, axis=(0, 2, 3))[None, :, None, None]
                gx = scale * (g - gsum / count - xhat * (gdot / count))
            else:
                gx = g * scale
        return gx, ggamma, gbeta

    return make_op(out, (x, gamma, beta), backward_fn, "batchnorm2d")


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    mask = x.data > 0
    record_branch(mask)
    out = np.where(mask, x.data, x.dtype.type(0))
    return make_op(out, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped so every output lies strictly inside (0, 1)."""
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    fi = np.finfo(x.dtype)
    np.clip(out, fi.tiny, 1.0 - fi.epsneg, out=out)
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def _channel_scales(x: Tensor, scales: Tensor) -> np.ndarray:
    n, c = x.shape[:2]
    if scales.shape == (c,):
        return scales.data[None, :, None, None]
    if scales.ndim == 4 and scales.shape[1:] == (c, 1, 1) and scales.shape[0] in (1, n):
        return scales.data
    raise ShapeError(f"mul_channelwise: scales {scales.shape} do not broadcast over channels of {x.shape}")


def mul_channelwise(x: Tensor, scales: Tensor) -> Tensor:
    """Scale each channel of ``x``; ``scales`` is (C,) or (N|1, C, 1, 1)."""
    _check_nchw(x, "mul_channelwise")
    s = _channel_scales(x, scales)
    shape = scales.shape

    def backward_fn(g):
        gs = None
        if scales.requires_grad:
            prod = g * x.data
            if len(shape) == 1:
                gs = prod.sum(axis=(0, 2, 3))
            else:
                gs = prod.sum(axis=(2, 3), keepdims=True)
                if shape[0] == 1:
                    gs = gs.sum(axis=0, keepdims=True)
        return g * s, gs

    return make_op(x.data * s, (x, scales), backward_fn, "mul_channelwise")


def mul_pixelwise(x: Tensor, gate: Tensor) -> Tensor:
    """Scale every spatial location of ``x`` by a gate shared across channels.

    ``gate`` is (N|1, 1, H, W) or (1, H, W).
    """
    _check_nchw(x, "mul_pixelwise")
    n, c, h, w = x.shape
    if gate.shape == (1, h, w):
        gd = gate.data[None]
    elif gate.ndim == 4 and gate.shape[1:] == (1, h, w) and gate.shape[0] in (1, n):
        gd = gate.data
    else:
        raise ShapeError(f"mul_pixelwise: gate {gate.shape} does not broadcast over {x.shape}")
    shape = gate.shape

    def backward_fn(g):
        gg = None
        if gate.requires_grad:
            gg = np.sum(g * x.data, axis=1, keepdims=True)
            if gd.shape[0] != n or len(shape) == 3:
                gg = gg.sum(axis=0, keepdims=True)
            gg = gg.reshape(shape)
        return g * gd, gg

    return make_op(x.data * gd, (x, gate), backward_fn, "mul_pixelwise")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W, keeping an (N, C, 1, 1) shape."""
    _check_nchw(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    scale = x.dtype.type(1.0 / (h * w))
    return make_op(out, (x,), lambda g: (np.broadcast_to(g * scale, x.shape).copy(),), "global_avg_pool")


def expand_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Broadcast an (N, C, 1, 1) tensor to (N, C, h, w)."""
    if x.ndim != 4 or x.shape[2:] != (1, 1):
        raise ShapeError(f"expand_spatial expects (N, C, 1, 1), got {x.shape}")
    out = np.broadcast_to(x.data, x.shape[:2] + (h, w)).copy()
    return make_op(out, (x,), lambda g: (g.sum(axis=(2, 3), keepdims=True),), "expand_spatial")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward_fn(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return make_op(out, tensors, backward_fn, "concat")


def _validate_labels(labels: np.ndarray, num_classes: int, ignore_index: int) -> np.ndarray:
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise DataError(
            f"label {int(labels[bad][0])} outside [0, {num_classes}) and not ignore_index {ignore_index}"
        )
    return valid


def softmax_cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    class_weights=None,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    """Class-weighted pixel cross-entropy averaged over non-ignored pixels.

    Each valid pixel contributes ``-alpha[y] * log softmax(logits)[y]``; the
    sum is divided by the number of valid pixels (not by the summed weights).
    Returns 0 with a zero gradient when every pixel is ignored.
    """
    _check_nchw(logits, "softmax_cross_entropy")
    n, c, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    valid = _validate_labels(labels, c, ignore_index)
    dtype = logits.dtype
    if class_weights is None:
        alpha = np.ones(c, dtype=dtype)
    else:
        alpha = np.asarray(getattr(class_weights, "data", class_weights), dtype=dtype)
        if alpha.shape != (c,):
            raise ShapeError(f"class_weights shape {alpha.shape}, expected ({c},)")
    count = int(valid.sum())
    if count == 0:
        zero = np.zeros((), dtype=dtype)
        return make_op(zero, (logits,), lambda g: (np.zeros_like(logits.data),), "softmax_cross_entropy")
    safe = np.where(valid, labels, 0)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sumexp = exp.sum(axis=1)
    picked = np.take_along_axis(shifted, safe[:, None], axis=1)[:, 0]
    logp = picked - np.log(sumexp)
    pix_w = np.where(valid, alpha[safe], dtype.type(0))
    loss = -np.sum(pix_w * logp) / count

    def backward_fn(g):
        probs = exp / sumexp[:, None]
        np.put_along_axis(probs, safe[:, None], np.take_along_axis(probs, safe[:, None], axis=1) - 1, axis=1)
        scale = (pix_w * (float(g) / count))[:, None]
        return ((probs * scale).astype(dtype, copy=False),)

    return make_op(np.asarray(loss, dtype=dtype), (logits,), backward_fn, "softmax_cross_entropy")
