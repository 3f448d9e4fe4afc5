"""Desk-scale training: the 1-D regression toy and a per-pixel MLP on scenes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .decode import DEFAULT_TAU, ProposalSet, decode_modes
from .errors import InputError, MissingCache, ShapeMismatch
from .evaluation import AR_THRESHOLDS, average_recall, best_iou
from .gbms import (
    KernelConfig,
    euclidean_gbms_step,
    euclidean_gbms_step_backward,
    gbms_run,
    gbms_unroll,
    gbms_unroll_backward,
)
from .geometry import (
    as_matrix,
    calibrated_similarity,
    calibrated_similarity_backward,
    normalize_columns,
    normalize_columns_backward,
)
from .loss import LossConfig, instance_weights, pair_loss, sample_pixels


class LossMode(str, enum.Enum):
    FINAL_LOOP_ONLY = "final_loop_only"
    ALL_LOOPS = "all_loops"


def loop_weights(loops: int, mode: LossMode) -> np.ndarray:
    mode = LossMode(mode)
    if mode is LossMode.ALL_LOOPS:
        return np.ones(loops + 1)
    w = np.zeros(loops + 1)
    w[-1] = 1.0
    return w


@dataclass(frozen=True)
class FixedRegressor:
    a: float = 0.5
    b: float = -0.5

    def __call__(self, x):
        return self.a * np.asarray(x) + self.b

    def target_embedding(self, y):
        return (np.asarray(y, dtype=np.float64) - self.b) / self.a


@dataclass(frozen=True)
class ToyTrainConfig:
    """Training settings shared by both toys.

    ``gbms=None`` disables the grouping module. ``bandwidth`` and
    ``loss_scale`` only apply to the 1-D toy, whose loss is
    ``loss_scale * sum_i (reg(x_i) - y_i)^2`` per scored state.
    """

    steps: int = 30
    lr: float = 0.1
    gbms: Optional[KernelConfig] = field(default_factory=lambda: KernelConfig(loops=5))
    loss_mode: LossMode = LossMode.ALL_LOOPS
    seed: int = 0
    bandwidth: float = 0.2
    loss_scale: float = 0.25
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if int(self.steps) < 1:
            raise InputError("steps must be >= 1")
        if self.lr < 0:
            raise InputError("lr must be non-negative")
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))


# --- 1-D regression toy ---


@dataclass
class Toy1DResult:
    trajectory: list  # embedding positions before each update, plus the final one
    outputs: list  # post-grouping positions for each entry of trajectory
    losses: np.ndarray  # mean squared error of the regressor on ``outputs``
    final_mse: float


def _toy_forward(x, cfg: ToyTrainConfig):
    states, caches = [x[None, :]], []
    if cfg.gbms is not None:
        for _ in range(int(cfg.gbms.loops)):
            c = euclidean_gbms_step(states[-1], cfg.bandwidth, cfg.gbms.eta)
            caches.append(c)
            states.append(c.Y)
    return states, caches


def toy_1d_gradient(x, labels, reg: FixedRegressor, cfg: ToyTrainConfig):
    """Loss and gradient with respect to the raw 1-D embeddings."""
    states, caches = _toy_forward(np.asarray(x, dtype=np.float64), cfg)
    T = len(caches)
    w = loop_weights(T, cfg.loss_mode)
    y = np.asarray(labels, dtype=np.float64)

    def term(t):
        r = reg(states[t][0]) - y
        return cfg.loss_scale * np.sum(r * r), 2.0 * cfg.loss_scale * reg.a * r[None, :]

    total, g = 0.0, np.zeros_like(states[-1])
    for t in range(T, -1, -1):
        if w[t]:
            value, grad = term(t)
            total += w[t] * value
            g = g + w[t] * grad
        if t > 0:
            g = euclidean_gbms_step_backward(caches[t - 1], g)
    return total, g[0], states[-1][0]


def toy_1d_descent(points, labels, reg: FixedRegressor, cfg: ToyTrainConfig) -> Toy1DResult:
    """Plain gradient descent on the embeddings themselves."""
    x = np.asarray(points, dtype=np.float64).copy()
    labels = np.asarray(labels)
    if x.shape != labels.shape:
        raise ShapeMismatch("points and labels differ in length")
    trajectory, outputs, losses = [], [], []
    for step in range(int(cfg.steps) + 1):
        _, g, out = toy_1d_gradient(x, labels, reg, cfg)
        trajectory.append(x.copy())
        outputs.append(out)
        losses.append(float(np.mean((reg(out) - labels) ** 2)))
        if step < cfg.steps:
            x = x - cfg.lr * g
    return Toy1DResult(trajectory, outputs, np.array(losses), losses[-1])


def mean_shift_modes(x, bandwidth: float = 0.2, min_fraction: float = 0.05, tol: float = 1e-3):
    """Modes of a 1-D Gaussian KDE that attract at least ``min_fraction`` of the points.

    Each point climbs the fixed density by mean-shift iterations; converged
    positions closer than ``10 * tol`` are merged.
    """
    x = np.asarray(x, dtype=np.float64)
    m = x.copy()
    for _ in range(1000):
        K = np.exp(-((m[:, None] - x[None, :]) ** 2) / (2 * bandwidth**2))
        new = K @ x / K.sum(axis=1)
        done = np.max(np.abs(new - m)) < tol * 1e-3
        m = new
        if done:
            break
    order = np.sort(m)
    groups, current = [], [order[0]]
    for v in order[1:]:
        if v - current[-1] <= 10 * tol:
            current.append(v)
        else:
            groups.append(current)
            current = [v]
    groups.append(current)
    keep = [g for g in groups if len(g) >= min_fraction * x.size]
    return np.array([np.mean(g) for g in keep])


# --- per-pixel network ---


@dataclass
class PerPixelNet:
    """``features -> relu(W1 f + b1) -> W2 h + b2 -> unit sphere``, per pixel."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(-1)
        H, F = self.W1.shape
        if self.b1.shape != (H,) or self.W2.shape[1] != H or self.b2.shape != (self.W2.shape[0],):
            raise ShapeMismatch("layer shapes do not chain")

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_out: int, seed: int = 0) -> PerPixelNet:
        rng = np.random.default_rng(seed)
        return cls(
            W1=rng.standard_normal((n_hidden, n_in)) * np.sqrt(2.0 / n_in),
            b1=np.zeros(n_hidden),
            W2=rng.standard_normal((n_out, n_hidden)) * np.sqrt(1.0 / n_hidden),
            b2=np.zeros(n_out),
        )

    @property
    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> PerPixelNet:
        return PerPixelNet(**{k: v.copy() for k, v in self.params.items()})

    @property
    def shape(self):
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]


@dataclass
class NetCache:
    features: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray
    raw_out: np.ndarray


def net_forward(net: PerPixelNet, features, return_cache: bool = False):
    F = as_matrix(features)
    if F.shape[0] != net.W1.shape[1]:
        raise ShapeMismatch(f"features have {F.shape[0]} rows, net expects {net.W1.shape[1]}")
    Z1 = net.W1 @ F + net.b1[:, None]
    A = np.maximum(Z1, 0.0)
    Z2 = net.W2 @ A + net.b2[:, None]
    X = normalize_columns(Z2)
    if return_cache:
        return X, NetCache(F, Z1, A, Z2)
    return X


def net_backward(net: PerPixelNet, cache: Optional[NetCache], dX) -> dict:
    if cache is None:
        raise MissingCache("net_backward needs the cache from net_forward(..., return_cache=True)")
    dZ2 = normalize_columns_backward(cache.raw_out, dX)
    dA = net.W2.T @ dZ2
    dZ1 = dA * (cache.pre_hidden > 0)
    return {
        "W1": dZ1 @ cache.features.T,
        "b1": dZ1.sum(axis=1),
        "W2": dZ2 @ cache.hidden.T,
        "b2": dZ2.sum(axis=1),
    }


# --- end-to-end instance training ---


@dataclass
class StepOutcome:
    loss: float
    grads: dict
    final_loop_loss: float  # loss on the last state alone, comparable across loss modes


def instance_step(net: PerPixelNet, features, labels, cfg: ToyTrainConfig, rng) -> StepOutcome:
    """Forward and backward for one image through net, grouping and loss."""
    X, cache = net_forward(net, features, return_cache=True)
    subset = sample_pixels(labels, cfg.loss, rng)
    weights = np.zeros(labels.n)
    # instance weights are computed over the sampled pixels
    weights[subset] = instance_weights(labels.subset(subset))
    if cfg.gbms is None:
        result = pair_loss(calibrated_similarity(X), labels, weights, cfg.loss, subset)
        loss = final = result.value
        dX = calibrated_similarity_backward(X, result.grad_S)
    else:
        lw = loop_weights(int(cfg.gbms.loops), cfg.loss_mode)
        traj = gbms_unroll(X, cfg.gbms, labels, weights, cfg.loss, loop_weights=lw, subset=subset)
        loss = traj.total_loss
        final = traj.per_loop_losses[-1].value
        dX = gbms_unroll_backward(traj).dX
    return StepOutcome(loss, net_backward(net, cache, dX), final)


@dataclass
class TrainResult:
    loss_curve: np.ndarray
    net: PerPixelNet
    final_loop_curve: np.ndarray


def train_toy_instances(dataset: Sequence, net: PerPixelNet, cfg: ToyTrainConfig) -> TrainResult:
    """SGD, one image per step, images visited in a seeded random order.

    ``dataset`` holds ``(features, InstanceLabeling)`` pairs or objects with
    ``features`` and ``labels`` attributes. The input net is left untouched.
    """
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    items = [(d.features, d.labels) if hasattr(d, "features") else tuple(d) for d in dataset]
    rng = np.random.default_rng(cfg.seed)
    net = net.copy()
    curve, final_curve = [], []
    for step in range(int(cfg.steps)):
        if step % len(items) == 0:
            order = rng.permutation(len(items))
        features, labels = items[order[step % len(items)]]
        out = instance_step(net, features, labels, cfg, rng)
        curve.append(out.loss)
        final_curve.append(out.final_loop_loss)
        for name, value in net.params.items():
            value -= cfg.lr * out.grads[name]
    return TrainResult(np.array(curve), net, np.array(final_curve))


@dataclass
class SceneEvaluation:
    mean_best_iou: float
    average_recall: float
    per_scene_iou: np.ndarray
    per_scene_ar: np.ndarray


def segment(net: PerPixelNet, features, gbms: Optional[KernelConfig], tau: float = DEFAULT_TAU):
    """Embeddings before and after grouping, and the decoded partition."""
    X0 = net_forward(net, features)
    XT = gbms_run(X0, gbms)[-1] if gbms is not None else X0
    return X0, XT, decode_modes(XT, tau)


def evaluate_net(
    net: PerPixelNet,
    dataset: Sequence,
    gbms: Optional[KernelConfig],
    tau: float = DEFAULT_TAU,
    thresholds=AR_THRESHOLDS,
) -> SceneEvaluation:
    ious, ars = [], []
    for d in dataset:
        features, labels = (d.features, d.labels) if hasattr(d, "features") else d
        _, _, partition = segment(net, features, gbms, tau)
        proposals = ProposalSet.from_partition(partition)
        ious.append(best_iou(proposals, labels, ignore_background=True).mean_best_iou)
        ars.append(average_recall(proposals, labels, thresholds))
    return SceneEvaluation(float(np.mean(ious)), float(np.mean(ars)), np.array(ious), np.array(ars))
