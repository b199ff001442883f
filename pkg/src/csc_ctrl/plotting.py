"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training(rows, path) -> Path:
    """Rate reduction, reconstruction MSE and code density against step."""
    steps = [int(r["step"]) for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, key, label in zip(axes, ("delta_r", "recon_mse", "sparsity"),
                              ("rate reduction", "reconstruction MSE", "nonzero fraction")):
        ax.plot(steps, [float(r[key]) for r in rows], lw=1.2)
        ax.set_xlabel("step")
        ax.set_title(label, fontsize=10)
        ax.grid(alpha=0.3)
    axes[1].set_yscale("log")
    return _save(fig, path)


def plot_denoise(rows, path, sigma=None) -> Path:
    """PSNR and SSIM against the encoder's sparsity level."""
    lams = [float(r["lam"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(lams, [float(r["psnr"]) for r in rows], "o-", color="C0")
    ax.set_xlabel("lambda")
    ax.set_ylabel("PSNR (dB)", color="C0")
    ax2 = ax.twinx()
    ax2.plot(lams, [float(r["ssim"]) for r in rows], "s--", color="C1")
    ax2.set_ylabel("SSIM", color="C1")
    if sigma is not None:
        ax.set_title(f"denoising, sigma = {sigma:g}", fontsize=10)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_images(images, path, rows: int = 1, titles=None) -> Path:
    """Image grid rendered through matplotlib ([-1, 1] values, [n, C, H, W])."""
    n = len(images)
    cols = -(-n // rows)
    fig, axes = plt.subplots(rows, cols, figsize=(1.2 * cols, 1.2 * rows), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i < n:
            img = (images[i].transpose(1, 2, 0) + 1.0) / 2.0
            ax.imshow(img.squeeze().clip(0, 1), cmap="gray" if img.shape[-1] == 1 else None)
            if titles is not None:
                ax.set_title(titles[i], fontsize=7)
    return _save(fig, path)
