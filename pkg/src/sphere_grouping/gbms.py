"""Recurrent Gaussian-blurring mean shift on the unit sphere.

One step with a von Mises-Fisher kernel::

    S = X^T X
    K = exp(beta * S)
    d = K^T 1,  q = 1 / d
    P = (1 - eta) I + eta K diag(q)
    Y = normalize(X P)

The kernel is recomputed from the moved points on every step. Backward passes
are written out by hand and verified against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, InvalidMargin, MissingCache, NumericalOverflow, ShapeMismatch
from .geometry import (
    as_matrix,
    calibrated_similarity,
    calibrated_similarity_backward,
    check_unit_columns,
    inner_product_backward,
    normalize_columns,
    normalize_columns_backward,
)
from .loss import InstanceLabeling, LossConfig, LossResult, pair_loss, sample_pixels

DEFAULT_BETA = 6.0
DEFAULT_ETA = 1.0
DEFAULT_LOOPS = 10


@dataclass(frozen=True)
class KernelConfig:
    beta: float = DEFAULT_BETA
    eta: float = DEFAULT_ETA
    loops: int = DEFAULT_LOOPS

    def __post_init__(self):
        if not self.beta > 0:
            raise InputError(f"beta must be positive, got {self.beta}")
        if not (0.0 < self.eta <= 1.0):
            raise InputError(f"eta must lie in (0, 1], got {self.eta}")
        if int(self.loops) < 1:
            raise InputError(f"loops must be >= 1, got {self.loops}")


@dataclass
class GbmsStepCache:
    X_in: np.ndarray
    S: np.ndarray
    K: np.ndarray
    d: np.ndarray
    q: np.ndarray
    P: np.ndarray
    Y_raw: np.ndarray
    Y: np.ndarray
    beta: float
    eta: float


@dataclass
class GbmsTrajectory:
    states: list
    caches: Optional[list]
    per_loop_losses: list
    total_loss: float
    loop_weights: np.ndarray
    config: KernelConfig
    labels: InstanceLabeling = field(repr=False)
    weights: np.ndarray = field(repr=False)
    loss_config: LossConfig = field(repr=False)
    subset: np.ndarray = field(repr=False)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class StepGradient:
    dX: np.ndarray
    dBeta: float


def bandwidth_from_margin(alpha: float) -> float:
    """Kernel concentration placing the margin three kernel widths away."""
    if not alpha < 1.0:
        raise InvalidMargin(f"margin must be < 1, got {alpha}")
    return 3.0 / (1.0 - alpha)


def _step_from_kernel(X, K, eta):
    d = K.sum(axis=0)
    q = 1.0 / d
    P = eta * (K * q[None, :])
    P[np.diag_indices_from(P)] += 1.0 - eta
    return d, q, P


def gbms_step(X, config: KernelConfig) -> GbmsStepCache:
    X = check_unit_columns(X)
    G = X.T @ X
    S = 0.5 * (G + G.T)
    with np.errstate(over="ignore"):
        K = np.exp(config.beta * S)
    if not np.all(np.isfinite(K)):
        raise NumericalOverflow(f"kernel overflow at beta={config.beta}")
    d, q, P = _step_from_kernel(X, K, config.eta)
    Y_raw = X @ P
    Y = normalize_columns(Y_raw)
    return GbmsStepCache(X, S, K, d, q, P, Y_raw, Y, float(config.beta), float(config.eta))


def _kernel_weights_backward(cache, dP):
    """Gradient into K from P = (1-eta) I + eta K diag(1 / K^T 1)."""
    eta, K, q, d = cache.eta, cache.K, cache.q, cache.d
    dK = eta * dP * q[None, :]
    dq = eta * np.sum(dP * K, axis=0)
    dd = -dq / (d * d)
    dK += dd[None, :]
    return dK


def gbms_step_backward(cache: GbmsStepCache, dY) -> StepGradient:
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != cache.Y.shape:
        raise ShapeMismatch(f"dY has shape {dY.shape}, expected {cache.Y.shape}")
    dY_raw = normalize_columns_backward(cache.Y_raw, dY)
    X = cache.X_in
    dX = dY_raw @ cache.P.T
    dP = X.T @ dY_raw
    dK = _kernel_weights_backward(cache, dP)
    KdK = cache.K * dK
    dS = cache.beta * KdK
    dBeta = float(np.sum(cache.S * KdK))
    dX += inner_product_backward(X, 0.5 * (dS + dS.T))
    return StepGradient(dX=dX, dBeta=dBeta)


def gbms_run(X, config: KernelConfig) -> list:
    """Forward-only iteration; returns the states X^0..X^T."""
    states = [check_unit_columns(X)]
    for _ in range(int(config.loops)):
        states.append(gbms_step(states[-1], config).Y)
    return states


def _loop_loss(X, labels, weights, loss_cfg, subset) -> LossResult:
    return pair_loss(calibrated_similarity(X), labels, weights, loss_cfg, subset)


def gbms_unroll(
    X0,
    config: KernelConfig,
    labels: InstanceLabeling,
    weights,
    loss_cfg: LossConfig,
    loop_weights: Optional[Sequence[float]] = None,
    subset=None,
    rng=None,
    keep_caches: bool = True,
) -> GbmsTrajectory:
    """Run ``config.loops`` steps, scoring the loss on every state.

    One pixel subset is drawn (unless given) and reused for all ``T + 1``
    loss evaluations. ``loop_weights`` scales each loop's loss in the total;
    it defaults to all ones.
    """
    X0 = check_unit_columns(X0)
    n = X0.shape[1]
    weights = np.asarray(weights, dtype=np.float64)
    if labels.n != n or weights.shape != (n,):
        raise ShapeMismatch(f"embedding has {n} columns, labels {labels.n}, weights {weights.shape}")
    loops = int(config.loops)
    if loop_weights is None:
        loop_weights = np.ones(loops + 1)
    loop_weights = np.asarray(loop_weights, dtype=np.float64)
    if loop_weights.shape != (loops + 1,):
        raise ShapeMismatch(f"need {loops + 1} loop weights, got {loop_weights.shape}")
    if subset is None:
        subset = sample_pixels(labels, loss_cfg, rng)

    states = [X0]
    caches = []
    losses = [_loop_loss(X0, labels, weights, loss_cfg, subset)]
    for _ in range(loops):
        cache = gbms_step(states[-1], config)
        caches.append(cache)
        states.append(cache.Y)
        losses.append(_loop_loss(cache.Y, labels, weights, loss_cfg, subset))
    total = float(sum(w * r.value for w, r in zip(loop_weights, losses)))
    return GbmsTrajectory(
        states=states,
        caches=caches if keep_caches else None,
        per_loop_losses=losses,
        total_loss=total,
        loop_weights=loop_weights,
        config=config,
        labels=labels,
        weights=weights,
        loss_config=loss_cfg,
        subset=subset,
    )


def gbms_unroll_backward(traj: GbmsTrajectory) -> StepGradient:
    caches = traj.caches
    loops = len(traj.states) - 1
    if caches is None or len(caches) != loops:
        raise MissingCache("trajectory was built without step caches")
    w = traj.loop_weights

    def loss_grad(t):
        if w[t] == 0.0:
            return 0.0
        return w[t] * calibrated_similarity_backward(traj.states[t], traj.per_loop_losses[t].grad_S)

    g = np.zeros_like(traj.states[-1]) + loss_grad(loops)
    dBeta = 0.0
    for t in range(loops, 0, -1):
        step = gbms_step_backward(caches[t - 1], g)
        dBeta += step.dBeta
        g = step.dX + loss_grad(t - 1)
    return StepGradient(dX=g, dBeta=dBeta)


# --- Euclidean variant (unconstrained data, squared-exponential kernel) ---


@dataclass
class EuclideanStepCache:
    X_in: np.ndarray
    K: np.ndarray
    d: np.ndarray
    q: np.ndarray
    P: np.ndarray
    Y: np.ndarray
    bandwidth: float
    eta: float


def euclidean_gbms_step(X, bandwidth: float, eta: float = 1.0) -> EuclideanStepCache:
    """One blurring step with ``K_ij = exp(-|x_i - x_j|^2 / (2 b^2))``; no renormalization."""
    X = as_matrix(X)
    if not bandwidth > 0:
        raise InputError("bandwidth must be positive")
    sq = np.sum(X * X, axis=0)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X.T @ X), 0.0)
    K = np.exp(-D2 / (2.0 * bandwidth**2))
    d, q, P = _step_from_kernel(X, K, eta)
    return EuclideanStepCache(X, K, d, q, P, X @ P, float(bandwidth), float(eta))


def euclidean_gbms_step_backward(cache: EuclideanStepCache, dY) -> np.ndarray:
    dY = np.asarray(dY, dtype=np.float64).reshape(cache.Y.shape)
    X = cache.X_in
    dX = dY @ cache.P.T
    dP = X.T @ dY
    dK = _kernel_weights_backward(cache, dP)
    # dK_ij / dx_i = -K_ij (x_i - x_j) / b^2
    A = cache.K * dK
    A = (A + A.T) / cache.bandwidth**2
    dX -= X * A.sum(axis=0)[None, :] - X @ A
    return dX
