"""Overlap and folding metrics, and synthetic registration pairs with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .field import DEFAULT_T, exp_svf
from .loss import jacobian_det_field
from .volume import LabelMap, Volume, as_array
from .warp import warp_image, warp_labels


@dataclass
class DiceReport:
    scores: dict
    mean: float
    labels: list
    absent: list

    def to_dict(self):
        return {
            "scores": {str(k): v for k, v in self.scores.items()},
            "mean": self.mean,
            "labels": self.labels,
            "absent": self.absent,
        }


@dataclass
class FoldReport:
    total: int
    count: int
    min_det: float
    fraction: float

    def to_dict(self):
        return vars(self).copy()


def dice(A, B, labels=None) -> DiceReport:
    """Per-label Dice; labels missing from both maps are listed as absent, not scored."""
    a, b = as_array(A), as_array(B)
    if a.shape != b.shape:
        raise ValueError(f"label map dims mismatch: {a.shape} vs {b.shape}")
    if labels is None:
        labels = [int(x) for x in np.union1d(np.unique(a), np.unique(b)) if x != 0]
    scores, absent = {}, []
    for lab in labels:
        in_a, in_b = a == lab, b == lab
        size = in_a.sum() + in_b.sum()
        if size == 0:
            absent.append(int(lab))
            continue
        scores[int(lab)] = float(2.0 * np.sum(in_a & in_b) / size)
    mean = float(np.mean(list(scores.values()))) if scores else float("nan")
    return DiceReport(scores, mean, sorted(scores), absent)


def fold_report(u) -> FoldReport:
    det = jacobian_det_field(u)
    count = int(np.count_nonzero(det <= 0))
    return FoldReport(int(det.size), count, float(det.min()), count / det.size)


# --- synthetic pairs -----------------------------------------------------------


@dataclass
class SynthPair:
    X: Volume
    Y: Volume
    v_true: np.ndarray
    labels_x: LabelMap
    labels_y: LabelMap
    u_true: np.ndarray


def _blobs(rng, dims, n_blobs=6):
    dims = np.asarray(dims)
    grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"))
    bumps = []
    for _ in range(n_blobs):
        centre = rng.uniform(0.3, 0.7, 3) * (dims - 1)
        radii = rng.uniform(0.08, 0.16, 3) * dims
        amp = rng.uniform(0.5, 1.0)
        r2 = sum(((grid[k] - centre[k]) / radii[k]) ** 2 for k in range(3))
        bumps.append(amp * np.exp(-0.5 * r2))
    bumps = np.stack(bumps)
    texture = gaussian_filter(rng.standard_normal(tuple(dims)), 1.5)
    texture *= 0.05 / max(np.abs(texture).max(), 1e-12)
    image = bumps.sum(axis=0) + texture
    strongest = bumps.argmax(axis=0)
    labels = np.where(bumps.max(axis=0) > 0.3, strongest + 1, 0)
    return image, labels


def smooth_velocity(rng, dims, smoothness, amplitude):
    """Gaussian-smoothed white noise scaled to a maximum vector norm of ``amplitude``."""
    v = np.stack([gaussian_filter(rng.standard_normal(tuple(dims)), smoothness, mode="wrap") for _ in range(3)])
    peak = np.sqrt((v**2).sum(axis=0)).max()
    if amplitude == 0 or peak == 0:
        return np.zeros_like(v)
    return v * (amplitude / peak)


def synth_pair(seed=0, dims=(32, 32, 32), smoothness=4.0, amplitude=3.0, T=DEFAULT_T) -> SynthPair:
    """Blob image X and ``Y = X o exp(v_true)``, with matching label maps.

    ``u_true`` is the displacement of ``exp(v_true)``, i.e. the X->Y map a
    registration should recover.
    """
    if amplitude < 0 or smoothness <= 0:
        raise ValueError("amplitude must be >= 0 and smoothness > 0")
    rng = np.random.default_rng(seed)
    image, labels = _blobs(rng, dims)
    v = smooth_velocity(rng, dims, smoothness, amplitude)
    u = exp_svf(v, 1.0, 1, T)
    X = Volume(image)
    lx = LabelMap(labels)
    return SynthPair(X, warp_image(X, u), v, lx, warp_labels(lx, u), u)


def translation_pair(seed=0, dims=(32, 32, 32), shift=(2.0, 0.0, 0.0)) -> SynthPair:
    """Blob image X and ``Y(x) = X(x + shift)``; the X->Y displacement is ``shift``."""
    rng = np.random.default_rng(seed)
    image, labels = _blobs(rng, dims)
    u = np.broadcast_to(np.asarray(shift, dtype=np.float64)[:, None, None, None], (3,) + tuple(dims)).copy()
    X = Volume(image)
    lx = LabelMap(labels)
    return SynthPair(X, warp_image(X, u), np.zeros_like(u), lx, warp_labels(lx, u), u)


def content_mask(vol, threshold=0.2, margin=3) -> np.ndarray:
    """Voxels with clear image content, away from the border."""
    data = as_array(vol)
    mask = data > threshold * data.max()
    inner = np.zeros_like(mask)
    inner[margin:-margin, margin:-margin, margin:-margin] = True
    return mask & inner
