"""Gaussian coding rate and rate reduction between two feature ensembles.

Features are columns: ``Z`` has shape [d, n] (features x samples).

    R(Z)        = 1/2 logdet(I + d/(n eps^2) Z Z^T)
    dR(Z, Zh)   = R([Z, Zh]) - (R(Z) + R(Zh)) / 2

Both functions accept arrays (returning floats) or autodiff nodes (returning nodes).
No mean-centering is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tensor import ShapeError


@dataclass(frozen=True)
class RateConfig:
    eps2: float = 0.5

    def __post_init__(self):
        if not self.eps2 > 0:
            raise ValueError(f"eps2 must be positive, got {self.eps2}")


def _node(Z):
    if isinstance(Z, ad.Node):
        return Z, False
    g = ad.Graph(enable_grad=False)
    return g.constant(Z), True


def coding_rate(Z, cfg: RateConfig = RateConfig()):
    """Rate of the ensemble ``Z`` [d, n].

    The determinant is taken on whichever Gram matrix is smaller; by Sylvester's
    identity logdet(I_d + c Z Z^T) = logdet(I_n + c Z^T Z).
    """
    Zn, plain = _node(Z)
    if Zn.value.ndim != 2 or min(Zn.shape) < 1:
        raise ShapeError(f"features must be a nonempty [d, n] matrix, got {Zn.shape}")
    d, n = Zn.shape
    c = d / (n * cfg.eps2)
    gram = Zn.T @ Zn if n < d else Zn @ Zn.T
    eye = np.eye(gram.shape[0], dtype=gram.value.dtype)
    r = 0.5 * ad.logdet(gram * c + eye)
    return float(r.value) if plain else r


def rate_reduction(Z, Zh, cfg: RateConfig = RateConfig()):
    """dR between ensembles ``Z`` [d, n] and ``Zh`` [d, n']."""
    if isinstance(Z, ad.Node) != isinstance(Zh, ad.Node):
        raise TypeError("pass both ensembles as arrays or both as nodes")
    if np.ndim(Z.value if isinstance(Z, ad.Node) else Z) != 2:
        raise ShapeError("features must be [d, n] matrices")
    if Z.shape[0] != Zh.shape[0]:
        raise ShapeError(f"feature dimensions differ: {Z.shape[0]} vs {Zh.shape[0]}")
    first, second = _canonical_order(Z, Zh)
    if isinstance(Z, ad.Node):
        union = ad.concat([first, second], axis=1)
        return coding_rate(union, cfg) - 0.5 * (coding_rate(Z, cfg) + coding_rate(Zh, cfg))
    union = np.concatenate([first, second], axis=1)
    return coding_rate(union, cfg) - 0.5 * (coding_rate(Z, cfg) + coding_rate(Zh, cfg))


def _canonical_order(a, b):
    """Order the pair by content so the union (and its rounding) ignores argument order."""
    va = a.value if isinstance(a, ad.Node) else np.asarray(a)
    vb = b.value if isinstance(b, ad.Node) else np.asarray(b)
    ka = (va.shape, np.ascontiguousarray(va).tobytes())
    kb = (vb.shape, np.ascontiguousarray(vb).tobytes())
    return (a, b) if ka <= kb else (b, a)
