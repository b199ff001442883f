"""Convolutional sparse coding layer pair sharing one dictionary.

The encoder solves ``min_z  lam*||z||_1 + 1/2 ||x - A(z)||^2`` by a fixed number of
FISTA iterations; the decoder applies ``A`` itself. ``A`` is the transposed
convolution with the stored kernel, its adjoint is ``conv2d`` with the same kernel.

The kernel is stored in analysis orientation ``[code_channels, signal_channels, k, k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .tensor import ConvGeometry, NumericError, ShapeError

DIVERGENCE_FACTOR = 1e3
POWER_ITERATIONS = 20
# keep iterating past the minimum until the Rayleigh quotient settles
POWER_MAX_ITERATIONS = 500
POWER_RTOL = 1e-6
# power iteration approaches the top eigenvalue from below
LIPSCHITZ_MARGIN = 1.05


@dataclass
class FistaConfig:
    lam: float = 0.01
    iterations: int = 2
    step_size: float | str = "auto"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size != "auto" and not float(self.step_size) > 0:
            raise ValueError(f"step_size must be positive or 'auto', got {self.step_size}")


class ConvDictionary:
    """A kernel bank read by one encoder layer and its mirrored decoder layer.

    ``kernel`` is updated in place by the optimizer, so every layer holding this
    object sees the same values.
    """

    def __init__(self, name: str, kernel: np.ndarray, stride: int = 1, padding: int = 0):
        kernel = T.check_finite(T.asarray(kernel), f"dictionary {name}")
        if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
            raise ShapeError(f"kernel must be [C, M, k, k], got {kernel.shape}")
        self.name = name
        self.kernel = kernel
        self.geometry = ConvGeometry(kernel.shape[2], stride, padding, kernel.shape[1], kernel.shape[0])
        self._lipschitz: dict[tuple[int, int], float] = {}

    @classmethod
    def random(cls, name, code_channels, signal_channels, k, stride=1, padding=0, rng=None):
        """Gaussian entries, each atom rescaled to unit Frobenius norm."""
        rng = np.random.default_rng(rng)
        std = 1.0 / math.sqrt(signal_channels * k * k)
        kernel = rng.normal(0.0, std, size=(code_channels, signal_channels, k, k))
        kernel /= np.linalg.norm(kernel.reshape(code_channels, -1), axis=1)[:, None, None, None]
        return cls(name, kernel, stride, padding)

    @property
    def code_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def signal_channels(self) -> int:
        return self.kernel.shape[1]

    def code_size(self, signal_hw) -> tuple[int, int]:
        g = self.geometry
        return g.output_size(signal_hw[0]), g.output_size(signal_hw[1])

    def lipschitz(self, signal_hw) -> float:
        """Largest eigenvalue of A^T A on codes for a signal of size ``signal_hw``."""
        key = tuple(signal_hw)
        if key not in self._lipschitz:
            self._lipschitz[key] = LIPSCHITZ_MARGIN * power_iteration(self.kernel, self.geometry, key)
        return self._lipschitz[key]

    def refresh(self) -> None:
        """Drop cached step sizes after the kernel has changed."""
        self._lipschitz.clear()

    def step_size(self, cfg: FistaConfig, signal_hw) -> float:
        if cfg.step_size == "auto":
            return 1.0 / self.lipschitz(signal_hw)
        return float(cfg.step_size)


def power_iteration(kernel, geom: ConvGeometry, signal_hw, iterations: int = POWER_ITERATIONS,
                    max_iterations: int = POWER_MAX_ITERATIONS, rtol: float = POWER_RTOL) -> float:
    """Top eigenvalue of A^T A: at least ``iterations`` steps, then until the estimate settles."""
    h, w = geom.output_size(signal_hw[0]), geom.output_size(signal_hw[1])
    v = np.random.default_rng(0).normal(size=(1, kernel.shape[0], h, w)).astype(kernel.dtype)
    v /= np.linalg.norm(v)
    est = 0.0
    for i in range(max_iterations):
        w_ = T.conv2d(T.deconv2d(v, kernel, geom, out_hw=signal_hw), kernel, geom)
        prev, est = est, float(np.vdot(v, w_))
        nrm = np.linalg.norm(w_)
        if nrm == 0.0:
            return 1.0
        v = w_ / nrm
        if i + 1 >= iterations and abs(est - prev) <= rtol * abs(est):
            break
    return max(est, 1e-12)


def lasso_objective(x, z, dictionary: ConvDictionary, lam: float) -> float:
    """Per-batch total of ``lam*||z||_1 + 1/2||x - A(z)||^2``."""
    r = T.deconv2d(z, dictionary.kernel, dictionary.geometry, out_hw=np.shape(x)[2:]) - x
    return float(lam * np.abs(z).sum() + 0.5 * np.vdot(r, r))


def fista(x: ad.Node, kernel: ad.Node, geom: ConvGeometry, lam: float, step: float, iterations: int,
          trace=None) -> ad.Node:
    """Unrolled FISTA recorded on ``x.graph``, starting from z = 0.

    ``trace``, if a list, receives the iterate ``z_k`` (as an array) after every step.
    """
    g = x.graph
    hw = x.shape[2:]
    code_shape = (x.shape[0], kernel.shape[0], geom.output_size(hw[0]), geom.output_size(hw[1]))
    xv = x.value
    f0 = max(0.5 * float(np.vdot(xv, xv)), np.finfo(float).tiny)
    z = g.constant(np.zeros(code_shape, dtype=xv.dtype))
    y, t = z, 1.0
    for k in range(iterations):
        r = ad.deconv2d(y, kernel, geom, out_hw=hw) - x
        fy = 0.5 * float(np.vdot(r.value, r.value)) + lam * float(np.abs(y.value).sum())
        if fy > DIVERGENCE_FACTOR * f0:
            raise NumericError(f"FISTA diverged at iteration {k}: objective {fy:.3e} vs initial {f0:.3e}")
        z_next = ad.soft_threshold(y - step * ad.conv2d(r, kernel, geom), lam * step)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z_next + ((t - 1.0) / t_next) * (z_next - z) if k + 1 < iterations else z_next
        z, t = z_next, t_next
        if trace is not None:
            trace.append(z.value)
    return z


def fista_encode(x, dictionary: ConvDictionary, cfg: FistaConfig, lam: float | None = None, trace=None) -> np.ndarray:
    """Sparse code of ``x`` [N, M, H, W] after ``cfg.iterations`` FISTA steps.

    ``lam`` overrides the configured sparsity weight without touching the dictionary.
    """
    x = T.asarray(x)
    if x.ndim != 4 or x.shape[1] != dictionary.signal_channels:
        raise ShapeError(f"input {x.shape} incompatible with dictionary {dictionary.kernel.shape}")
    lam = cfg.lam if lam is None else lam
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    g = ad.Graph(enable_grad=False)
    step = dictionary.step_size(cfg, x.shape[2:])
    z = fista(g.constant(x), g.constant(dictionary.kernel), dictionary.geometry, lam, step, cfg.iterations, trace)
    return z.value


def decode(z, dictionary: ConvDictionary, out_hw=None) -> np.ndarray:
    """Apply the synthesis operator A (no noise)."""
    return T.deconv2d(z, dictionary.kernel, dictionary.geometry, out_hw=out_hw)


def kkt_residual(x, z, dictionary: ConvDictionary, lam: float) -> float:
    """Largest violation of the LASSO optimality conditions at ``z``."""
    x, z = T.asarray(x), T.asarray(z)
    g = T.conv2d(decode(z, dictionary, out_hw=x.shape[2:]) - x, dictionary.kernel, dictionary.geometry)
    on = np.abs(g + lam * np.sign(z))
    off = np.maximum(np.abs(g) - lam, 0.0)
    return float(np.where(z != 0, on, off).max(initial=0.0))
