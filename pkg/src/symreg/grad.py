"""Reverse-mode gradient of the symmetric objective w.r.t. the raw velocity parameters.

The forward sweep mirrors :func:`symreg.loss.total_loss` but keeps every
intermediate field and interpolation stencil, then the adjoint sweep runs the
pipeline backwards: loss terms, warps, compositions, the unrolled squaring
steps and finally the softsign reparameterisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import DEFAULT_C, DEFAULT_T, softsign_normalize, squarings
from .interp import Stencil, identity_grid
from .loss import (
    LossBreakdown,
    LossWeights,
    det3,
    jacobian_matrix,
    ncc_stats,
    total_loss,
)
from .volume import box_sum

TERMS = ("mean", "pair", "jdet", "reg", "mag")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite gradient contribution from {term}")
        self.term = term


@dataclass
class GradientPair:
    g_xy: np.ndarray
    g_yx: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.g_xy.ravel(), self.g_yx.ravel()])


def _finite(term, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteGradientError(term)


# --- per-operation adjoints --------------------------------------------------


def _exp_forward(v, sign, n_steps, T):
    grid = identity_grid(v.shape[1:])
    u = sign * v / 2.0**T
    tape = []
    for _ in range(n_steps):
        st = Stencil(grid + u, v.shape[1:])
        tape.append((u, st))
        u = u + st.sample(u)
    return u, tape


def _exp_backward(g, tape, sign, T):
    # each squaring u' = u + u(x + u): the adjoint reaches u through the sampled
    # values and through the sample positions
    for u, st in reversed(tape):
        g = g + st.adjoint_image(g) + st.adjoint_coords(u, g)
    return sign * g / 2.0**T


def ncc_grad(I, J, w, eps):
    """Local NCC and its gradients with respect to both images."""
    s = ncc_stats(I, J, w, eps)
    N = I.size
    denom = s["denom"]
    a = 1.0 / (N * denom)
    b_common = -s["cross"] / (2.0 * N * denom**3)
    b_i = b_common * s["var_j"]
    b_j = b_common * s["var_i"]
    box_a = box_sum(a, w)
    g_i = J * box_a - box_sum(a * s["mean_j"], w) + 2.0 * (I * box_sum(b_i, w) - box_sum(b_i * s["mean_i"], w))
    g_j = I * box_a - box_sum(a * s["mean_i"], w) + 2.0 * (J * box_sum(b_j, w) - box_sum(b_j * s["mean_j"], w))
    return float(np.mean(s["cross"] / denom)), g_i, g_j


def gradient_adjoint(a, axis):
    """Transpose of ``np.gradient`` (central inside, one-sided on the faces)."""
    a = np.moveaxis(a, axis, 0)
    r = np.zeros_like(a)
    r[2:] += 0.5 * a[1:-1]
    r[:-2] -= 0.5 * a[1:-1]
    r[1] += a[0]
    r[0] -= a[0]
    r[-1] += a[-1]
    r[-2] -= a[-1]
    return np.moveaxis(r, 0, axis)


def cofactors(J):
    C = np.empty_like(J)
    C[0, 0] = J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1]
    C[0, 1] = J[1, 2] * J[2, 0] - J[1, 0] * J[2, 2]
    C[0, 2] = J[1, 0] * J[2, 1] - J[1, 1] * J[2, 0]
    C[1, 0] = J[0, 2] * J[2, 1] - J[0, 1] * J[2, 2]
    C[1, 1] = J[0, 0] * J[2, 2] - J[0, 2] * J[2, 0]
    C[1, 2] = J[0, 1] * J[2, 0] - J[0, 0] * J[2, 1]
    C[2, 0] = J[0, 1] * J[1, 2] - J[0, 2] * J[1, 1]
    C[2, 1] = J[0, 2] * J[1, 0] - J[0, 0] * J[1, 2]
    C[2, 2] = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return C


def jdet_grad(fields):
    """``loss_jdet`` and its gradient with respect to each displacement field."""
    mats = [jacobian_matrix(u) for u in fields]
    dets = [det3(J) for J in mats]
    n_total = sum(d.size for d in dets)
    value = sum(np.maximum(0.0, -d).sum() for d in dets) / n_total
    grads = []
    for J, d in zip(mats, dets):
        g_det = np.where(d < 0, -1.0 / n_total, 0.0)
        C = cofactors(J)
        g = np.zeros((3,) + d.shape)
        for i in range(3):
            for j in range(3):
                g[i] += gradient_adjoint(g_det * C[i, j], j)
        grads.append(g)
    return float(value), grads


def smooth_grad(v):
    g = np.zeros_like(v)
    n = np.prod(v.shape[1:])
    for axis in (1, 2, 3):
        d = 2.0 * np.diff(v, axis=axis) / n
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        g[tuple(hi)] += d
        g[tuple(lo)] -= d
    return g


def mag_grad(v_xy, v_yx):
    s = (np.sum(v_xy**2) - np.sum(v_yx**2)) / v_xy.size
    k = 4.0 * s / v_xy.size
    return k * v_xy, -k * v_yx


# --- full objective ------------------------------------------------------------


def _prepare(X, Y, raw_xy, raw_yx):
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    Y = np.asarray(getattr(Y, "data", Y), dtype=np.float64)
    raw_xy = np.asarray(raw_xy, dtype=np.float64)
    raw_yx = np.asarray(raw_yx, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"image dims mismatch: {X.shape} vs {Y.shape}")
    if raw_xy.shape != (3,) + X.shape or raw_yx.shape != raw_xy.shape:
        raise ValueError(f"velocity parameters must have shape {(3,) + X.shape}")
    return X, Y, raw_xy, raw_yx


@dataclass
class _Tape:
    """Everything the adjoint sweep needs from one forward evaluation."""

    X: np.ndarray
    Y: np.ndarray
    raw_xy: np.ndarray
    raw_yx: np.ndarray
    v_xy: np.ndarray
    v_yx: np.ndarray
    h_xy: np.ndarray
    h_yx: np.ndarray
    ih_xy: np.ndarray
    ih_yx: np.ndarray
    squaring: dict
    st_xh: Stencil
    st_yh: Stencil
    st_x1: Stencil
    st_y1: Stencil
    dets: list
    mag_diff: float


def _forward(X, Y, raw_xy, raw_yx, T, c):
    shape = X.shape
    grid = identity_grid(shape)
    v_xy = softsign_normalize(raw_xy, c)
    v_yx = softsign_normalize(raw_yx, c)
    n_half = squarings(0.5, T)
    h_xy, tape_h_xy = _exp_forward(v_xy, 1, n_half, T)
    h_yx, tape_h_yx = _exp_forward(v_yx, 1, n_half, T)
    ih_xy, tape_ih_xy = _exp_forward(v_xy, -1, n_half, T)
    ih_yx, tape_ih_yx = _exp_forward(v_yx, -1, n_half, T)
    # the half warps and the compositions sample at the same points
    st_xh = Stencil(grid + h_xy, shape)
    st_yh = Stencil(grid + h_yx, shape)
    f_xy = h_xy + st_xh.sample(ih_yx)
    f_yx = h_yx + st_yh.sample(ih_xy)
    return _Tape(
        X, Y, raw_xy, raw_yx, v_xy, v_yx, h_xy, h_yx, ih_xy, ih_yx,
        {"h_xy": tape_h_xy, "h_yx": tape_h_yx, "ih_xy": tape_ih_xy, "ih_yx": tape_ih_yx},
        st_xh, st_yh, Stencil(grid + f_xy, shape), Stencil(grid + f_yx, shape),
        [det3(jacobian_matrix(h_xy)), det3(jacobian_matrix(h_yx))],
        float(np.sum(v_xy**2) - np.sum(v_yx**2)),
    )


def grad_total_loss(
    X,
    Y,
    raw_xy,
    raw_yx,
    weights: LossWeights = LossWeights(),
    T: int = DEFAULT_T,
    c: float = DEFAULT_C,
    terms=TERMS,
):
    """Loss breakdown and ``d(total)/d(raw)`` for both velocity parameter fields.

    ``terms`` restricts which weighted terms feed the gradient; the breakdown
    always reports every term.
    """
    X, Y, raw_xy, raw_yx = _prepare(X, Y, raw_xy, raw_yx)
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    w, eps = weights.window, weights.eps
    shape = X.shape
    tp = _forward(X, Y, raw_xy, raw_yx, T, c)
    v_xy, v_yx = tp.v_xy, tp.v_yx

    ncc_mean, g_xh, g_yh = ncc_grad(tp.st_xh.sample(X), tp.st_yh.sample(Y), w, eps)
    ncc_x1, g_x1, _ = ncc_grad(tp.st_x1.sample(X), Y, w, eps)
    ncc_y1, g_y1, _ = ncc_grad(tp.st_y1.sample(Y), X, w, eps)
    l_jdet, (gj_xy, gj_yx) = jdet_grad([tp.h_xy, tp.h_yx])
    l_reg = sum(np.sum(np.diff(v, axis=a) ** 2) for v in (v_xy, v_yx) for a in (1, 2, 3)) / np.prod(shape)
    l_mag = (tp.mag_diff / v_xy.size) ** 2
    breakdown = LossBreakdown.assemble(-ncc_mean, -ncc_x1 - ncc_y1, l_jdet, l_reg, l_mag, weights)

    zeros = lambda: np.zeros((3,) + shape)  # noqa: E731
    g_h_xy, g_h_yx, g_ih_xy, g_ih_yx = zeros(), zeros(), zeros(), zeros()
    g_v_xy, g_v_yx = zeros(), zeros()

    if "mean" in terms:
        d_xy = tp.st_xh.adjoint_coords(X, -g_xh)
        d_yx = tp.st_yh.adjoint_coords(Y, -g_yh)
        _finite("l_mean", d_xy, d_yx)
        g_h_xy += d_xy
        g_h_yx += d_yx
    if "pair" in terms:
        g_f_xy = tp.st_x1.adjoint_coords(X, -g_x1)
        g_f_yx = tp.st_y1.adjoint_coords(Y, -g_y1)
        _finite("l_pair", g_f_xy, g_f_yx)
        # f = h + ih_other(x + h)
        g_h_xy += g_f_xy + tp.st_xh.adjoint_coords(tp.ih_yx, g_f_xy)
        g_ih_yx += tp.st_xh.adjoint_image(g_f_xy)
        g_h_yx += g_f_yx + tp.st_yh.adjoint_coords(tp.ih_xy, g_f_yx)
        g_ih_xy += tp.st_yh.adjoint_image(g_f_yx)
    if "jdet" in terms and weights.jdet:
        _finite("l_jdet", gj_xy, gj_yx)
        g_h_xy += weights.jdet * gj_xy
        g_h_yx += weights.jdet * gj_yx
    if "reg" in terms and weights.reg:
        gr_xy, gr_yx = smooth_grad(v_xy), smooth_grad(v_yx)
        _finite("l_reg", gr_xy, gr_yx)
        g_v_xy += weights.reg * gr_xy
        g_v_yx += weights.reg * gr_yx
    if "mag" in terms and weights.mag:
        gm_xy, gm_yx = mag_grad(v_xy, v_yx)
        _finite("l_mag", gm_xy, gm_yx)
        g_v_xy += weights.mag * gm_xy
        g_v_yx += weights.mag * gm_yx

    sq = tp.squaring
    g_v_xy += _exp_backward(g_h_xy, sq["h_xy"], 1, T) + _exp_backward(g_ih_xy, sq["ih_xy"], -1, T)
    g_v_yx += _exp_backward(g_h_yx, sq["h_yx"], 1, T) + _exp_backward(g_ih_yx, sq["ih_yx"], -1, T)
    _finite("scaling and squaring", g_v_xy, g_v_yx)

    g_xy = g_v_xy * c / (1.0 + np.abs(raw_xy)) ** 2
    g_yx = g_v_yx * c / (1.0 + np.abs(raw_yx)) ** 2
    return breakdown, GradientPair(g_xy, g_yx)


def _branch_signature(tp: _Tape):
    """Which interpolation cell, clamp state and kink branch every operation sits on."""
    stencils = [st for steps in tp.squaring.values() for _, st in steps]
    stencils += [tp.st_xh, tp.st_yh, tp.st_x1, tp.st_y1]
    parts = []
    for st in stencils:
        for k, n in enumerate(st.shape):
            c = st.coords[k]
            parts += [st.lo[k], (c < 0) | (c > n - 1), c == np.floor(c)]
    parts += [d < 0 for d in tp.dets]
    parts += [np.sign(tp.raw_xy), np.sign(tp.raw_yx)]
    return parts


def smooth_along(X, Y, raw_xy, raw_yx, T=DEFAULT_T, c=DEFAULT_C, index=(0, 0, 0, 0, 0), step=1e-4, step_units="voxel"):
    """True when the objective has no kink inside the central-difference interval.

    Trilinear cells, border clamps, the ReLU of the Jacobian penalty and the
    absolute values are the only non-smooth pieces; the interval is smooth when
    both end points sit on the same branch of all of them.
    """
    X, Y, raw_xy, raw_yx = _prepare(X, Y, raw_xy, raw_yx)
    which, pos = index[0], tuple(index[1:])
    raws = [raw_xy.copy(), raw_yx.copy()]
    base = raws[which][pos]
    if step_units == "voxel":
        step = step * (1.0 + abs(base)) ** 2 / c
    sigs = []
    for sgn in (1, -1):
        raws[which][pos] = base + sgn * step
        sigs.append(_branch_signature(_forward(X, Y, raws[0], raws[1], T, c)))
    return all(np.array_equal(a, b) for a, b in zip(*sigs))


def partial_total(breakdown: LossBreakdown, weights: LossWeights, terms=TERMS) -> float:
    """Weighted sum of the selected terms of a breakdown."""
    parts = {
        "mean": breakdown.l_mean,
        "pair": breakdown.l_pair,
        "jdet": weights.jdet * breakdown.l_jdet,
        "reg": weights.reg * breakdown.l_reg,
        "mag": weights.mag * breakdown.l_mag,
    }
    return float(sum(parts[t] for t in terms))


def objective(X, Y, raw_xy, raw_yx, weights=LossWeights(), T=DEFAULT_T, c=DEFAULT_C, terms=TERMS) -> float:
    """Forward-only loss as a function of the raw parameters."""
    X, Y, raw_xy, raw_yx = _prepare(X, Y, raw_xy, raw_yx)
    b = total_loss(X, Y, softsign_normalize(raw_xy, c), softsign_normalize(raw_yx, c), weights, T)
    return partial_total(b, weights, terms)


def fd_gradient(
    X,
    Y,
    raw_xy,
    raw_yx,
    weights=LossWeights(),
    T=DEFAULT_T,
    c=DEFAULT_C,
    index=(0, 0, 0, 0, 0),
    step=1e-4,
    terms=TERMS,
    fn=None,
    step_units="voxel",
) -> float:
    """Central difference of the objective along one raw parameter.

    ``index`` is ``(field, component, i, j, k)`` with field 0 for the X->Y
    parameters and 1 for Y->X. With ``step_units="voxel"`` the raw step is
    scaled by the inverse softsign slope so the velocity itself moves by about
    ``step`` voxels; ``"raw"`` uses ``step`` directly. ``fn(raw_xy, raw_yx)``
    replaces the objective when given.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if step_units not in ("voxel", "raw"):
        raise ValueError("step_units must be 'voxel' or 'raw'")
    raws = [np.array(raw_xy, dtype=np.float64), np.array(raw_yx, dtype=np.float64)]
    if fn is None:
        fn = lambda a, b: objective(X, Y, a, b, weights, T, c, terms)  # noqa: E731
    which, pos = index[0], tuple(index[1:])
    base = raws[which][pos]
    if step_units == "voxel":
        step = step * (1.0 + abs(base)) ** 2 / c
    raws[which][pos] = base + step
    up = fn(*raws)
    raws[which][pos] = base - step
    down = fn(*raws)
    return (up - down) / (2.0 * step)
