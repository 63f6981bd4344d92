"""Similarity and regularisation terms of the symmetric objective."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .field import DEFAULT_T, full_transforms
from .volume import as_array, box_sum, check_window, window_counts
from .warp import warp_image

DEFAULT_EPS = 1e-5


@dataclass(frozen=True)
class LossWeights:
    """Weights of the orientation, smoothness and magnitude terms, plus NCC settings."""

    jdet: float = 1000.0
    reg: float = 3.0
    mag: float = 0.1
    window: int = 7
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if min(self.jdet, self.reg, self.mag) < 0:
            raise ValueError("loss weights must be non-negative")
        check_window(self.window)
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    l_mean: float
    l_pair: float
    l_jdet: float
    l_reg: float
    l_mag: float
    total: float

    @classmethod
    def assemble(cls, l_mean, l_pair, l_jdet, l_reg, l_mag, weights: LossWeights):
        total = (l_mean + l_pair) + weights.jdet * l_jdet + weights.reg * l_reg + weights.mag * l_mag
        return cls(float(l_mean), float(l_pair), float(l_jdet), float(l_reg), float(l_mag), float(total))

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **asdict(self)})


def _pair(I, J):
    I = np.asarray(as_array(I), dtype=np.float64)
    J = np.asarray(as_array(J), dtype=np.float64)
    if I.shape != J.shape:
        raise ValueError(f"volume dims mismatch: {I.shape} vs {J.shape}")
    return I, J


def ncc_stats(I, J, w, eps):
    """Window sums needed by the local NCC and its adjoint."""
    n = window_counts(I.shape, w)
    sI, sJ = box_sum(I, w), box_sum(J, w)
    cross = box_sum(I * J, w) - sI * sJ / n
    var_i = box_sum(I * I, w) - sI * sI / n
    var_j = box_sum(J * J, w) - sJ * sJ / n
    denom = np.sqrt(var_i * var_j + eps)
    return dict(n=n, mean_i=sI / n, mean_j=sJ / n, cross=cross, var_i=var_i, var_j=var_j, denom=denom)


def ncc(I, J, w: int = 7, eps: float = DEFAULT_EPS) -> float:
    """Voxel-averaged local correlation coefficient over ``w**3`` windows.

    Windows are truncated at the border and ``eps`` guards the variance product
    under the square root.
    """
    check_window(w)
    I, J = _pair(I, J)
    s = ncc_stats(I, J, w, eps)
    return float(np.mean(s["cross"] / s["denom"]))


def loss_mean_shape(Xw, Yw, w: int = 7, eps: float = DEFAULT_EPS) -> float:
    return -ncc(Xw, Yw, w, eps)


def loss_pair(X1, Y, Y1, X, w: int = 7, eps: float = DEFAULT_EPS) -> float:
    return -ncc(X1, Y, w, eps) - ncc(Y1, X, w, eps)


def jacobian_matrix(u) -> np.ndarray:
    """``J[i, j] = d phi_i / d x_j`` per voxel, shape ``(3, 3, nx, ny, nz)``.

    Central differences inside, one-sided differences on the faces.
    """
    u = np.asarray(u, dtype=np.float64)
    if min(u.shape[1:]) < 3:
        raise ValueError(f"Jacobian needs at least 3 voxels per axis, got {u.shape[1:]}")
    J = np.empty((3, 3) + u.shape[1:])
    for i in range(3):
        for j, g in enumerate(np.gradient(u[i], axis=(0, 1, 2))):
            J[i, j] = g + (1.0 if i == j else 0.0)
    return J


def det3(J) -> np.ndarray:
    return (
        J[0, 0] * (J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
        - J[0, 1] * (J[1, 0] * J[2, 2] - J[1, 2] * J[2, 0])
        + J[0, 2] * (J[1, 0] * J[2, 1] - J[1, 1] * J[2, 0])
    )


def jacobian_det_field(u) -> np.ndarray:
    return det3(jacobian_matrix(u))


def loss_jdet(fields) -> float:
    """Mean of ``max(0, -det J)`` over every voxel of every supplied field."""
    dets = [jacobian_det_field(u) for u in fields]
    total = sum(np.maximum(0.0, -d).sum() for d in dets)
    return float(total / sum(d.size for d in dets))


def _velocity_pair(v_xy, v_yx):
    v_xy = np.asarray(v_xy, dtype=np.float64)
    v_yx = np.asarray(v_yx, dtype=np.float64)
    if v_xy.shape != v_yx.shape:
        raise ValueError(f"velocity dims mismatch: {v_xy.shape} vs {v_yx.shape}")
    return v_xy, v_yx


def loss_smooth(v_xy, v_yx) -> float:
    """Squared forward differences of every component of both fields, per voxel."""
    v_xy, v_yx = _velocity_pair(v_xy, v_yx)
    total = 0.0
    for v in (v_xy, v_yx):
        for axis in (1, 2, 3):
            total += np.sum(np.diff(v, axis=axis) ** 2)
    return float(total / np.prod(v_xy.shape[1:]))


def loss_mag(v_xy, v_yx) -> float:
    """``((||v_xy||^2 - ||v_yx||^2) / N)**2`` with N the number of vector components.

    Squared rather than taken in absolute value so the balanced state is a
    smooth minimum.
    """
    v_xy, v_yx = _velocity_pair(v_xy, v_yx)
    return float(((np.sum(v_xy**2) - np.sum(v_yx**2)) / v_xy.size) ** 2)


def total_loss(X, Y, v_xy, v_yx, weights: LossWeights = LossWeights(), T: int = DEFAULT_T) -> LossBreakdown:
    """Evaluate every term for the given (already normalised) velocity fields."""
    X, Y = _pair(X, Y)
    h_xy, h_yx, phi_xy, phi_yx = full_transforms(v_xy, v_yx, T)
    if h_xy.shape[1:] != X.shape:
        raise ValueError(f"velocity dims {h_xy.shape[1:]} do not match image dims {X.shape}")
    w, eps = weights.window, weights.eps
    l_mean = loss_mean_shape(warp_image(X, h_xy), warp_image(Y, h_yx), w, eps)
    l_pair = loss_pair(warp_image(X, phi_xy), Y, warp_image(Y, phi_yx), X, w, eps)
    return LossBreakdown.assemble(
        l_mean,
        l_pair,
        loss_jdet([h_xy, h_yx]),
        loss_smooth(v_xy, v_yx),
        loss_mag(v_xy, v_yx),
        weights,
    )
