"""Figures written next to the JSON outputs of ``register`` and ``jacobian``."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .loss import jacobian_det_field  # noqa: E402
from .volume import as_array  # noqa: E402

TERM_LABELS = {
    "l_mean": "mean-shape NCC",
    "l_pair": "pairwise NCC",
    "l_jdet": "orientation",
    "l_reg": "smoothness",
    "l_mag": "magnitude",
}


def _mid(a, axis=2):
    return np.take(a, a.shape[axis] // 2, axis=axis).T


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_history(history, path):
    """Total loss and each unweighted term against iteration."""
    it = np.arange(len(history))
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 3.8))
    ax0.plot(it, [b.total for b in history], color="k")
    ax0.set_xlabel("iteration")
    ax0.set_ylabel("total loss")
    for key, label in TERM_LABELS.items():
        ax1.plot(it, [getattr(b, key) for b in history], label=label)
    ax1.set_xlabel("iteration")
    ax1.set_yscale("symlog", linthresh=1e-4)
    ax1.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def det_overlay(ax, u, axis=2, title=None):
    """Jacobian determinant of the mid slice; non-positive voxels drawn in red."""
    det = _mid(jacobian_det_field(u), axis)
    im = ax.imshow(det, cmap="gray", origin="lower")
    folded = np.ma.masked_where(det > 0, np.ones_like(det))
    ax.imshow(folded, cmap="autumn", origin="lower", alpha=0.9)
    ax.set_title(title or "det J")
    ax.axis("off")
    return im


def plot_registration(X, Y, Xw, Yw, u_xy, path, axis=2):
    """Mid slices of the pair, the warped images and the X->Y determinant map."""
    panels = [(X, "X"), (Y, "Y"), (Xw, "X warped to Y"), (Yw, "Y warped to X")]
    fig, axes = plt.subplots(1, 6, figsize=(16, 3))
    for ax, (vol, title) in zip(axes, panels):
        ax.imshow(_mid(as_array(vol), axis), cmap="gray", origin="lower")
        ax.set_title(title)
        ax.axis("off")
    diff = _mid(as_array(Xw) - as_array(Y), axis)
    lim = max(np.abs(diff).max(), 1e-12)
    axes[4].imshow(diff, cmap="RdBu_r", vmin=-lim, vmax=lim, origin="lower")
    axes[4].set_title("X warped - Y")
    axes[4].axis("off")
    im = det_overlay(axes[5], u_xy, axis)
    fig.colorbar(im, ax=axes[5], fraction=0.046)
    return _save(fig, path)


def plot_jacobian(u, path, axis=2):
    fig, ax = plt.subplots(figsize=(4, 4))
    im = det_overlay(ax, u, axis)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)
