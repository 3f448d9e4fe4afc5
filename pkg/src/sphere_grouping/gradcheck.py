"""Central finite-difference checks for every hand-written backward pass.

Each path draws random instances, computes the analytic gradient and a
numeric one, and reports the worst relative error (see ``relative_error``).
Instances that sit within ``KINK_MARGIN`` of a hinge or rectifier kink are
redrawn, since finite differences are meaningless across a kink, and so are
draws whose gradient vanishes identically (nothing to check).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .gbms import KernelConfig, gbms_step, gbms_step_backward, gbms_unroll, gbms_unroll_backward
from .geometry import (
    FD_RTOL,
    FD_RTOL_COMPOSITE,
    FD_STEP,
    calibrated_similarity,
    calibrated_similarity_backward,
    normalize_columns,
    normalize_columns_backward,
)
from .loss import InstanceLabeling, LossConfig, instance_weights, pair_loss, sample_pixels

KINK_MARGIN = 1e-4
# entries smaller than this fraction of the largest gradient entry are
# compared against that fraction instead of their own magnitude
RELATIVE_FLOOR = 1e-2
DEGENERATE_GRAD = 1e-8
PATHS = ("normalize", "similarity", "loss", "gbms_step", "gbms_beta", "unroll", "net")


def numerical_gradient(f: Callable[[np.ndarray], float], x, h: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """``max_k |a_k - n_k| / max(|a_k|, |n_k|, floor)``.

    ``floor`` is ``RELATIVE_FLOOR`` times the largest magnitude in either
    array, so near-zero entries are judged on the gradient's overall scale.
    """
    a = np.ravel(np.asarray(analytic, dtype=np.float64))
    n = np.ravel(np.asarray(numeric, dtype=np.float64))
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), RELATIVE_FLOOR * scale)
    return float(np.max(np.abs(a - n) / denom))


@dataclass
class PathReport:
    name: str
    max_error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _labels(rng, n, q):
    labels = rng.integers(0, q, size=n)
    labels[: min(q, n)] = np.arange(min(q, n))
    return InstanceLabeling(labels)


def _near_kink(states, alpha, subset):
    for X in states:
        s = calibrated_similarity(X)[np.ix_(subset, subset)]
        if np.any(np.abs(s - alpha) < KINK_MARGIN):
            return True
    return False


def _case_normalize(rng):
    d, n = rng.integers(1, 9), rng.integers(1, 33)
    M = rng.standard_normal((d, n))
    G = rng.standard_normal((d, n))
    analytic = normalize_columns_backward(M, G)
    numeric = numerical_gradient(lambda m: np.sum(G * normalize_columns(m)), M)
    return analytic, numeric


def _case_similarity(rng):
    d, n = rng.integers(1, 9), rng.integers(1, 33)
    X = normalize_columns(rng.standard_normal((d, n)))
    dS = rng.standard_normal((n, n))
    dS = dS + dS.T
    analytic = calibrated_similarity_backward(X, dS)
    numeric = numerical_gradient(lambda x: np.sum(dS * 0.5 * (1.0 + x.T @ x)), X)
    return analytic, numeric


def _case_loss(rng):
    while True:
        n = int(rng.integers(3, 33))
        X = normalize_columns(rng.standard_normal((int(rng.integers(2, 9)), n)))
        labels = _labels(rng, n, int(rng.integers(2, 5)))
        cfg = LossConfig(alpha=float(rng.uniform(0.1, 0.8)), sample_size=int(rng.integers(2, n + 1)),
                         seed=int(rng.integers(1 << 31)))
        subset = sample_pixels(labels, cfg)
        S = calibrated_similarity(X)
        if not _near_kink([X], cfg.alpha, subset):
            break
    w = instance_weights(labels)
    analytic = pair_loss(S, labels, w, cfg, subset).grad_S
    numeric = numerical_gradient(lambda s: pair_loss(s, labels, w, cfg, subset).value, S)
    return analytic, numeric


def _step_instance(rng):
    d, n = int(rng.integers(2, 9)), int(rng.integers(2, 33))
    M = rng.standard_normal((d, n))
    cfg = KernelConfig(beta=float(rng.uniform(0.5, 6.0)), eta=float(rng.uniform(0.2, 1.0)), loops=1)
    G = rng.standard_normal((d, n))
    return M, cfg, G


def _case_gbms_step(rng):
    M, cfg, G = _step_instance(rng)
    X = normalize_columns(M)
    dX = gbms_step_backward(gbms_step(X, cfg), G).dX
    analytic = normalize_columns_backward(M, dX)
    numeric = numerical_gradient(lambda m: np.sum(G * gbms_step(normalize_columns(m), cfg).Y), M)
    return analytic, numeric


def _case_gbms_beta(rng):
    M, cfg, G = _step_instance(rng)
    X = normalize_columns(M)
    analytic = np.array([gbms_step_backward(gbms_step(X, cfg), G).dBeta])

    def f(b):
        c = KernelConfig(beta=float(b[0]), eta=cfg.eta, loops=1)
        return np.sum(G * gbms_step(X, c).Y)

    return analytic, numerical_gradient(f, np.array([cfg.beta]))


def _unroll_instance(rng, loops):
    while True:
        d, n = int(rng.integers(2, 9)), int(rng.integers(4, 33))
        M = rng.standard_normal((d, n))
        labels = _labels(rng, n, int(rng.integers(2, 5)))
        kcfg = KernelConfig(beta=float(rng.uniform(0.5, 4.0)), eta=float(rng.uniform(0.3, 1.0)), loops=loops)
        lcfg = LossConfig(alpha=float(rng.uniform(0.2, 0.8)), sample_size=int(rng.integers(2, n + 1)),
                          seed=int(rng.integers(1 << 31)))
        subset = sample_pixels(labels, lcfg)
        w = instance_weights(labels)
        traj = gbms_unroll(normalize_columns(M), kcfg, labels, w, lcfg, subset=subset)
        if not _near_kink(traj.states, lcfg.alpha, subset):
            return M, labels, w, kcfg, lcfg, subset, traj


def _case_unroll(rng, loops):
    M, labels, w, kcfg, lcfg, subset, traj = _unroll_instance(rng, loops)
    analytic = normalize_columns_backward(M, gbms_unroll_backward(traj).dX)

    def f(m):
        return gbms_unroll(normalize_columns(m), kcfg, labels, w, lcfg, subset=subset).total_loss

    return analytic, numerical_gradient(f, M)


def _case_net(rng, loops):
    from .toy import PerPixelNet, net_backward, net_forward

    while True:
        F, H, D = (int(v) for v in rng.integers(2, 5, size=3))
        n = int(rng.integers(4, 13))
        net = PerPixelNet.init(F, H, D, seed=int(rng.integers(1 << 31)))
        net.b1 = 0.3 * rng.standard_normal(H)
        net.b2 = 0.3 * rng.standard_normal(D)
        feats = rng.standard_normal((F, n))
        pre = net.W1 @ feats + net.b1[:, None]
        if np.any(np.abs(pre) < KINK_MARGIN) or not np.all(np.any(pre > 0, axis=0)):
            continue
        X, cache = net_forward(net, feats, return_cache=True)
        labels = _labels(rng, n, int(rng.integers(2, 4)))
        kcfg = KernelConfig(beta=float(rng.uniform(0.5, 4.0)), eta=1.0, loops=loops)
        lcfg = LossConfig(alpha=0.5, sample_size=n, seed=0)
        subset = np.arange(n)
        w = instance_weights(labels)
        traj = gbms_unroll(X, kcfg, labels, w, lcfg, subset=subset)
        if not _near_kink(traj.states, lcfg.alpha, subset):
            break
    grads = net_backward(net, cache, gbms_unroll_backward(traj).dX)
    names = list(net.params)
    analytic = np.concatenate([grads[k].ravel() for k in names])
    flat = np.concatenate([net.params[k].ravel() for k in names])
    shapes = [net.params[k].shape for k in names]

    def f(theta):
        parts, off = {}, 0
        for k, shp in zip(names, shapes):
            size = int(np.prod(shp))
            parts[k] = theta[off : off + size].reshape(shp)
            off += size
        candidate = PerPixelNet(**parts)
        return gbms_unroll(net_forward(candidate, feats), kcfg, labels, w, lcfg, subset=subset).total_loss

    return analytic, numerical_gradient(f, flat)


def run_gradcheck(
    instances: int = 10,
    seed: int = 0,
    loops: int = 2,
    fault: Optional[str] = None,
    paths=PATHS,
) -> list:
    """Check each path on ``instances`` random draws; ``fault`` flips one path's sign."""
    rng = np.random.default_rng(seed)
    cases = {
        "normalize": (_case_normalize, FD_RTOL),
        "similarity": (_case_similarity, FD_RTOL),
        "loss": (_case_loss, FD_RTOL),
        "gbms_step": (_case_gbms_step, FD_RTOL),
        "gbms_beta": (_case_gbms_beta, FD_RTOL),
        "unroll": (lambda r: _case_unroll(r, loops), FD_RTOL),
        "net": (lambda r: _case_net(r, min(loops, 2)), FD_RTOL_COMPOSITE),
    }
    reports = []
    for name in paths:
        make, tol = cases[name]
        worst = 0.0
        for _ in range(instances):
            analytic, numeric = make(rng)
            while np.max(np.abs(analytic)) < DEGENERATE_GRAD:
                analytic, numeric = make(rng)
            if name == fault:
                analytic = -analytic
            worst = max(worst, relative_error(analytic, numeric))
        reports.append(PathReport(name, worst, tol, instances))
    return reports
