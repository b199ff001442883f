"""Dense array primitives: strided convolution and its adjoint, batch norm, nonlinearities.

Arrays are plain ``numpy.ndarray`` values in NCHW layout. Every public operation
returns a new array and refuses to hand back NaN/Inf.

Convolution convention: ``conv2d`` is cross-correlation,

    out[n, o, i, j] = sum_{c, p, q} x_pad[n, c, i*s + p, j*s + q] * K[o, c, p, q]

and ``deconv2d`` is its exact adjoint (transposed convolution) for the same kernel
and geometry, so ``<conv2d(x, K), z> == <x, deconv2d(z, K)>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.2

_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are inconsistent with each other or with a geometry."""


class NumericError(ArithmeticError):
    """A computation produced (or was fed) non-finite values."""


def set_default_dtype(dtype) -> None:
    """Switch the global float type ("float64" default, "float32" for speed)."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dt}")
    _DTYPE = dt.type


def default_dtype():
    return _DTYPE


def asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=_DTYPE)


def check_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a


@dataclass(frozen=True)
class ConvGeometry:
    kernel_size: int
    stride: int = 1
    padding: int = 0
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid geometry {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError(f"invalid channel counts in {self}")

    def output_size(self, size: int) -> int:
        out = (size + 2 * self.padding - self.kernel_size) // self.stride + 1
        if out < 1:
            raise ShapeError(
                f"input size {size} too small for k={self.kernel_size}, "
                f"stride={self.stride}, pad={self.padding}"
            )
        return out

    def transpose_size(self, size: int) -> int:
        """Smallest input size whose conv output has ``size`` positions."""
        return (size - 1) * self.stride - 2 * self.padding + self.kernel_size

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k)


def _geometry_for(kernel: np.ndarray, stride: int, padding: int) -> ConvGeometry:
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"kernel must be [out, in, k, k], got {kernel.shape}")
    return ConvGeometry(kernel.shape[2], stride, padding, kernel.shape[1], kernel.shape[0])


def _resolve(kernel, geom):
    if isinstance(geom, ConvGeometry):
        if tuple(kernel.shape) != geom.kernel_shape:
            raise ShapeError(f"kernel {kernel.shape} does not match {geom}")
        return geom
    stride, padding = geom
    return _geometry_for(kernel, stride, padding)


def _patches(x: np.ndarray, geom: ConvGeometry, out_hw: tuple[int, int]) -> np.ndarray:
    """[N, C, H', W', k, k] view of the padded input at every output position."""
    p, s, k = geom.padding, geom.stride, geom.kernel_size
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    ho, wo = out_hw
    return win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]


def conv2d(x, kernel, geom) -> np.ndarray:
    """Strided, zero-padded cross-correlation.

    ``x`` is [N, C, H, W], ``kernel`` is [M, C, k, k]; returns [N, M, H', W'].
    ``geom`` is a ConvGeometry or a ``(stride, padding)`` pair.
    """
    x = asarray(x)
    kernel = asarray(kernel)
    geom = _resolve(kernel, geom)
    if x.ndim != 4 or x.shape[1] != geom.in_channels:
        raise ShapeError(f"input {x.shape} incompatible with kernel {kernel.shape}")
    check_finite(x, "conv2d input")
    ho, wo = geom.output_size(x.shape[2]), geom.output_size(x.shape[3])
    cols = _patches(x, geom, (ho, wo))
    out = np.einsum("nchwpq,ocpq->nohw", cols, kernel, optimize=True)
    return check_finite(np.ascontiguousarray(out), "conv2d output")


def deconv2d(z, kernel, geom, out_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Transposed convolution: the adjoint of ``conv2d`` with the same kernel.

    ``z`` is [N, M, H', W'], ``kernel`` is [M, C, k, k]; returns [N, C, H, W].
    ``out_hw`` selects H, W when the forward conv dropped trailing rows
    (defaults to the minimal size).
    """
    z = asarray(z)
    kernel = asarray(kernel)
    geom = _resolve(kernel, geom)
    if z.ndim != 4 or z.shape[1] != geom.out_channels:
        raise ShapeError(f"code {z.shape} incompatible with kernel {kernel.shape}")
    check_finite(z, "deconv2d input")
    ho, wo = z.shape[2], z.shape[3]
    if out_hw is None:
        out_hw = (geom.transpose_size(ho), geom.transpose_size(wo))
    h, w = out_hw
    if geom.output_size(h) != ho or geom.output_size(w) != wo:
        raise ShapeError(f"output size {out_hw} inconsistent with code {z.shape} under {geom}")
    k, s, p = geom.kernel_size, geom.stride, geom.padding
    cols = np.einsum("nohw,ocpq->ncpqhw", z, kernel, optimize=True)
    hp, wp = h + 2 * p, w + 2 * p
    out = np.zeros((z.shape[0], geom.in_channels, hp, wp), dtype=cols.dtype)
    for a in range(k):
        for b in range(k):
            out[:, :, a : a + (ho - 1) * s + 1 : s, b : b + (wo - 1) * s + 1 : s] += cols[:, :, a, b]
    out = out[:, :, p : p + h, p : p + w]
    return check_finite(np.ascontiguousarray(out), "deconv2d output")


def conv2d_kernel_grad(x, grad_out, geom: ConvGeometry) -> np.ndarray:
    """d<grad_out, conv2d(x, K)>/dK, shaped like the kernel."""
    x = asarray(x)
    cols = _patches(x, geom, grad_out.shape[2:])
    return np.einsum("nchwpq,nohw->ocpq", cols, grad_out, optimize=True)


# -- nonlinearities -----------------------------------------------------------


def relu(t) -> np.ndarray:
    return np.maximum(asarray(t), 0.0)


def leaky_relu(t, slope: float = LEAKY_SLOPE) -> np.ndarray:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must be in [0, 1), got {slope}")
    t = asarray(t)
    return np.where(t > 0, t, slope * t)


def tanh(t) -> np.ndarray:
    return np.tanh(asarray(t))


def soft_threshold(t, lam: float) -> np.ndarray:
    """Proximal map of ``lam * ||.||_1``: sign(v) * max(|v| - lam, 0)."""
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    t = asarray(t)
    return np.sign(t) * np.maximum(np.abs(t) - lam, 0.0)


# -- batch normalization ------------------------------------------------------


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    channels: int
    weight: np.ndarray = field(default=None)
    bias: np.ndarray = field(default=None)
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    def __post_init__(self):
        c = self.channels
        if self.weight is None:
            self.weight = np.ones(c, dtype=_DTYPE)
        if self.bias is None:
            self.bias = np.zeros(c, dtype=_DTYPE)
        if self.running_mean is None:
            self.running_mean = np.zeros(c, dtype=_DTYPE)
        if self.running_var is None:
            self.running_var = np.ones(c, dtype=_DTYPE)

    def update(self, batch_mean: np.ndarray, batch_var_unbiased: np.ndarray) -> None:
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * batch_mean
        self.running_var = (1 - m) * self.running_var + m * batch_var_unbiased


def batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and biased variance over every axis except 1."""
    axes = (0,) + tuple(range(2, x.ndim))
    return x.mean(axis=axes), x.var(axis=axes)


def _bcast(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batch_norm(x, state: BatchNormState, mode: str = "train") -> np.ndarray:
    """Normalize per channel, then apply the learned scale and shift.

    In ``train`` mode batch statistics are used and the running statistics are
    updated in place on ``state``; ``eval`` mode reads the running statistics only.
    """
    x = asarray(x)
    if x.ndim < 2 or x.shape[1] != state.channels:
        raise ShapeError(f"input {x.shape} does not have {state.channels} channels")
    if mode == "train":
        mean, var = batch_stats(x)
        n = x.size // x.shape[1]
        state.update(mean, var * n / max(n - 1, 1))
    elif mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    xhat = (x - _bcast(mean, x.ndim)) / np.sqrt(_bcast(var, x.ndim) + state.eps)
    out = _bcast(state.weight, x.ndim) * xhat + _bcast(state.bias, x.ndim)
    return check_finite(out, "batch_norm output")
