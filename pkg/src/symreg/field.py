"""Displacement-field algebra and scaling-and-squaring of stationary velocities.

Fields are arrays of shape ``(3, nx, ny, nz)`` holding a displacement ``u`` in
voxels, with the deformation being ``phi(x) = x + u(x)``.
"""

from __future__ import annotations

import numpy as np

from .interp import Stencil, identity_grid

DEFAULT_T = 7
DEFAULT_C = 100.0


def _check_field(u, name="field"):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 4 or u.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, nx, ny, nz), got {u.shape}")
    return u


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"field dims mismatch: {a.shape[1:]} vs {b.shape[1:]}")


def identity_field(dims) -> np.ndarray:
    return np.zeros((3,) + tuple(int(n) for n in dims))


def softsign_normalize(raw, c: float = DEFAULT_C) -> np.ndarray:
    """Map unconstrained parameters into ``(-c, c)`` with ``c * x / (1 + |x|)``."""
    raw = np.asarray(raw, dtype=np.float64)
    return c * raw / (1.0 + np.abs(raw))


def softsign_inverse(v, c: float = DEFAULT_C) -> np.ndarray:
    s = np.asarray(v, dtype=np.float64) / c
    if np.any(np.abs(s) >= 1):
        raise ValueError("velocity outside the softsign range")
    return s / (1.0 - np.abs(s))


def compose(a, b) -> np.ndarray:
    """Displacement of ``a(b(x))``: ``u_b(x) + u_a(x + u_b(x))``."""
    a = _check_field(a, "a")
    b = _check_field(b, "b")
    _check_same(a, b)
    st = Stencil(identity_grid(b.shape[1:]) + b, b.shape[1:])
    return b + st.sample(a)


def squarings(t_target: float, T: int) -> int:
    """Number of self-compositions that take ``1/2**T`` to ``t_target``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if t_target == 1.0:
        return T
    if t_target == 0.5:
        return T - 1
    raise ValueError(f"t_target must be 0.5 or 1.0, got {t_target}")


def exp_svf(v, t_target: float = 1.0, sign: int = 1, T: int = DEFAULT_T) -> np.ndarray:
    """Integrate a stationary velocity to time ``sign * t_target`` by scaling and squaring."""
    v = _check_field(v, "velocity")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    n = squarings(t_target, T)
    grid = identity_grid(v.shape[1:])
    u = sign * v / 2.0**T
    for _ in range(n):
        u = u + Stencil(grid + u, v.shape[1:]).sample(u)
    return u


def full_transforms(v_xy, v_yx, T: int = DEFAULT_T):
    """Half and full transforms of the symmetric pair.

    Returns ``(phi_xy_half, phi_yx_half, phi_xy, phi_yx)`` where the full maps
    are the forward half of one direction followed by the backward half of the
    other.
    """
    v_xy = _check_field(v_xy, "v_xy")
    v_yx = _check_field(v_yx, "v_yx")
    _check_same(v_xy, v_yx)
    h_xy = exp_svf(v_xy, 0.5, 1, T)
    h_yx = exp_svf(v_yx, 0.5, 1, T)
    phi_xy = compose(exp_svf(v_yx, 0.5, -1, T), h_xy)
    phi_yx = compose(exp_svf(v_xy, 0.5, -1, T), h_yx)
    return h_xy, h_yx, phi_xy, phi_yx


def mean_displacement(u, mask=None) -> float:
    """Mean Euclidean norm of a displacement field, optionally over a mask."""
    norm = np.sqrt(np.sum(np.asarray(u) ** 2, axis=0))
    return float(norm[mask].mean() if mask is not None else norm.mean())
