"""Image-quality metrics and read-only analyses of a trained network.

Images live in [-1, 1], so PSNR uses a peak of 2.0. Reconstructions are always
compared against the clean images.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from skimage.metrics import structural_similarity

from . import tensor as T
from .data import add_gaussian_noise
from .networks import Network
from .tensor import ShapeError

PEAK = 2.0
PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    mse: float
    ssim: float

    def as_dict(self):
        return asdict(self)


def _pair(x, y):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


def mse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean((x - y) ** 2))


def psnr(x, y, peak: float = PEAK) -> float:
    """10 log10(peak^2 / mse), capped at 99 dB (identical inputs)."""
    err = mse(x, y)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / err))


def ssim(x, y) -> float:
    """Gaussian-window SSIM averaged over windows, channels and images.

    Accepts [H, W], [C, H, W] or [N, C, H, W]; needs H, W >= 11.
    """
    x, y = _pair(x, y)
    if x.ndim == 2:
        x, y = x[None, None], y[None, None]
    elif x.ndim == 3:
        x, y = x[None], y[None]
    elif x.ndim != 4:
        raise ShapeError(f"expected 2-4 dims, got {x.shape}")
    if min(x.shape[2:]) < SSIM_WINDOW:
        raise ShapeError(f"images {x.shape[2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    vals = [
        structural_similarity(a, b, data_range=PEAK, channel_axis=0, gaussian_weights=True,
                              sigma=SSIM_SIGMA, use_sample_covariance=False)
        for a, b in zip(x, y)
    ]
    return float(np.mean(vals))


def compare(x, y) -> MetricReport:
    return MetricReport(psnr(x, y), mse(x, y), ssim(x, y))


# -- denoising ----------------------------------------------------------------


def denoise_sweep(net: Network, clean, sigma: float, lam_grid, seed=0, clip: bool = True) -> list[dict]:
    """Encode the noisy images at each sparsity level and score the decodes against ``clean``.

    No training happens here: only the encoder's soft-threshold level changes.
    """
    clean = np.asarray(clean, dtype=T.default_dtype())
    noisy = add_gaussian_noise(clean, sigma, seed, clip=clip)
    rows = []
    for lam in lam_grid:
        recon = net.autoencode(noisy, mode="eval", lam=float(lam))
        rows.append({"lam": float(lam), **compare(recon, clean).as_dict()})
    return rows


# -- feature-space analyses ---------------------------------------------------


def principal_components(features: np.ndarray, top_k: int) -> np.ndarray:
    """Top ``top_k`` principal directions [top_k, d] of mean-centered rows."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2:
        raise ShapeError(f"features must be [n, d], got {F.shape}")
    if top_k < 1 or top_k > min(F.shape):
        raise ValueError(f"top_k={top_k} must be in [1, {min(F.shape)}] for features {F.shape}")
    _, _, vt = np.linalg.svd(F - F.mean(axis=0), full_matrices=False)
    return vt[:top_k]


def select_by_component(features: np.ndarray, components: np.ndarray, per_component: int) -> np.ndarray:
    """Indices [k, per_component] of the rows with the largest |projection| on each component.

    Ties go to the lower row index.
    """
    F = np.asarray(features, dtype=np.float64)
    proj = np.abs((F - F.mean(axis=0)) @ components.T)  # [n, k]
    if per_component > F.shape[0]:
        raise ValueError(f"per_component={per_component} exceeds {F.shape[0]} samples")
    order = np.argsort(-proj, axis=0, kind="stable")
    return order[:per_component].T


def class_pca_reconstruct(net: Network, images, labels, cls, top_k: int = 4, per_component: int = 8):
    """Decoded samples nearest each principal direction of one class's features.

    Returns ``(recons [top_k, per_component, C, H, W], indices [top_k, per_component])``,
    where indices point into the full ``images`` array.
    """
    labels = np.asarray(labels)
    members = np.flatnonzero(labels == cls)
    if members.size == 0:
        raise ValueError(f"class {cls!r} has no samples")
    if members.size < top_k:
        raise ValueError(f"class {cls!r} has {members.size} samples, need >= top_k={top_k}")
    x = np.asarray(images)[members]
    Z = net.encode(x, mode="eval")
    comps = principal_components(Z, top_k)
    picks = select_by_component(Z, comps, per_component)
    recons = net.decode(Z[picks.ravel()], mode="eval")
    return recons.reshape(picks.shape + recons.shape[1:]), members[picks]


def interpolate(net: Network, x1, x2, steps: int = 8) -> np.ndarray:
    """Frames g(a f(x1) + (1 - a) f(x2)) for a = 0 ... 1; frame 0 is the x2 autoencode."""
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    x1, x2 = np.asarray(x1)[None], np.asarray(x2)[None]
    z1, z2 = net.encode(x1, mode="eval"), net.encode(x2, mode="eval")
    frames = []
    for a in np.linspace(0.0, 1.0, steps):
        # endpoints are taken verbatim so they match autoencode bit-for-bit
        z = z1 if a == 1.0 else z2 if a == 0.0 else z2 + a * (z1 - z2)
        frames.append(net.decode(z, mode="eval")[0])
    return np.stack(frames)
