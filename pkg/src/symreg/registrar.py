"""Per-pair symmetric registration by momentum gradient descent on the raw velocities."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .field import DEFAULT_C, DEFAULT_T, full_transforms, softsign_normalize
from .grad import grad_total_loss
from .loss import LossBreakdown, LossWeights, jacobian_det_field

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationConfig:
    T: int = DEFAULT_T
    c: float = DEFAULT_C
    weights: LossWeights = field(default_factory=LossWeights)
    step_size: float = 0.1
    momentum: float = 0.9
    max_iters: int = 300
    tol: float = 1e-5
    window: int = 10
    patience: int = 3
    halve_on_increase: bool = False
    clamp_step: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @classmethod
    def preset(cls, name: str, **overrides) -> "RegistrationConfig":
        """``"direct"`` tuned for optimising the fields themselves; ``"paper"`` uses
        the learning rate the original network was trained with."""
        if name == "direct":
            return cls(**overrides)
        if name == "paper":
            return cls(**{"step_size": 1e-4, "momentum": 0.9, **overrides})
        raise ValueError(f"unknown preset {name!r}")


@dataclass
class OptimizerState:
    raw_xy: np.ndarray
    raw_yx: np.ndarray
    m_xy: np.ndarray
    m_yx: np.ndarray

    @classmethod
    def zeros(cls, dims):
        z = lambda: np.zeros((3,) + tuple(dims))  # noqa: E731
        return cls(z(), z(), z(), z())


@dataclass
class RegistrationResult:
    raw_xy: np.ndarray
    raw_yx: np.ndarray
    v_xy: np.ndarray
    v_yx: np.ndarray
    phi_xy_half: np.ndarray
    phi_yx_half: np.ndarray
    phi_xy: np.ndarray
    phi_yx: np.ndarray
    history: list
    folds: dict
    runtime: float
    converged: bool = False
    step_size: float = float("nan")

    def summary(self) -> dict:
        final = self.history[-1] if self.history else None
        return {
            "iterations": len(self.history),
            "converged": self.converged,
            "step_size": self.step_size,
            "runtime_seconds": self.runtime,
            "final_loss": None if final is None else vars(final),
            "fold_counts": self.folds,
        }


def step(state: OptimizerState, grads, cfg: RegistrationConfig) -> OptimizerState:
    """Classical momentum: ``m <- mu*m + g``, ``theta <- theta - lr*m``."""
    m_xy = cfg.momentum * state.m_xy + grads.g_xy
    m_yx = cfg.momentum * state.m_yx + grads.g_yx
    return OptimizerState(
        state.raw_xy - cfg.step_size * m_xy,
        state.raw_yx - cfg.step_size * m_yx,
        m_xy,
        m_yx,
    )


def stable_step(cfg: RegistrationConfig, dims) -> float:
    """Largest step for which momentum descent is stable on the smoothness term.

    The term is quadratic with Hessian bounded by ``24 * lambda2 * c**2 / N`` in
    raw units (discrete Laplacian bound 12, softsign slope at most c), and heavy
    ball descent on a quadratic with curvature L needs ``lr < 2 (1 + mu) / L``.
    A 0.9 safety factor keeps clear of the edge.
    """
    curvature = 24.0 * cfg.weights.reg * cfg.c**2 / float(np.prod(dims))
    if curvature == 0:
        return float("inf")
    return 0.9 * 2.0 * (1.0 + cfg.momentum) / curvature


def fold_count(u) -> int:
    return int(np.count_nonzero(jacobian_det_field(u) <= 0))


def _converged(totals, cfg):
    # relative change over consecutive windows, `patience` windows in a row
    k = cfg.window
    if len(totals) < k * (cfg.patience + 1) or len(totals) % k:
        return False
    for p in range(cfg.patience):
        new, old = totals[-1 - p * k], totals[-1 - (p + 1) * k]
        if abs(new - old) > cfg.tol * max(abs(old), 1e-12):
            return False
    return True


def register(X, Y, cfg: RegistrationConfig = RegistrationConfig(), callback=None) -> RegistrationResult:
    """Minimise the symmetric objective starting from the identity.

    ``callback(iteration, breakdown)`` is called after every loss evaluation.
    """
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    Y = np.asarray(getattr(Y, "data", Y), dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"image dims mismatch: {X.shape} vs {Y.shape}")
    if X.ndim != 3 or min(X.shape) < 3:
        raise ValueError(f"registration needs 3D volumes with at least 3 voxels per axis, got {X.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("input volumes contain non-finite values")

    t0 = time.perf_counter()
    state = OptimizerState.zeros(X.shape)
    history: list[LossBreakdown] = []
    lr = cfg.step_size
    if cfg.clamp_step and lr > stable_step(cfg, X.shape):
        lr = stable_step(cfg, X.shape)
        log.warning("step size %g unstable for %s voxels, using %g", cfg.step_size, X.shape, lr)
    converged = False
    for it in range(cfg.max_iters):
        breakdown, grads = grad_total_loss(X, Y, state.raw_xy, state.raw_yx, cfg.weights, cfg.T, cfg.c)
        if not np.isfinite(breakdown.total):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        if cfg.halve_on_increase and history and breakdown.total > history[-1].total:
            lr *= 0.5
            state.m_xy[:] = 0
            state.m_yx[:] = 0
        history.append(breakdown)
        if callback is not None:
            callback(it, breakdown)
        log.debug("iter %d total %.6f", it, breakdown.total)
        if _converged([b.total for b in history], cfg):
            converged = True
            break
        if it == cfg.max_iters - 1:
            break
        state = step(state, grads, replace(cfg, step_size=lr))

    v_xy = softsign_normalize(state.raw_xy, cfg.c)
    v_yx = softsign_normalize(state.raw_yx, cfg.c)
    fields = full_transforms(v_xy, v_yx, cfg.T)
    names = ("phi_xy_half", "phi_yx_half", "phi_xy", "phi_yx")
    folds = {name: fold_count(u) for name, u in zip(names, fields)}
    return RegistrationResult(
        state.raw_xy,
        state.raw_yx,
        v_xy,
        v_yx,
        *fields,
        history=history,
        folds=folds,
        runtime=time.perf_counter() - t0,
        converged=converged,
        step_size=lr,
    )
