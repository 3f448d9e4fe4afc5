"""Weighted pairwise max-margin loss on calibrated similarities.

Positive pairs (same instance) pay ``1 - s_ij``; negative pairs pay the hinge
``max(s_ij - alpha, 0)``. Every pair is weighted by ``w_i w_j`` and the sum is
divided either by the image size or by the number of sampled pixels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InvalidSubset, ShapeMismatch, VacuousBound
from .geometry import INVARIANT_ATOL, check_unit_columns

DEFAULT_ALPHA = 0.5
DEFAULT_SAMPLE_SIZE = 1024


class Normalization(str, enum.Enum):
    PER_IMAGE_N = "per_image_N"
    PER_SAMPLE_S = "per_sample_S"


@dataclass(frozen=True)
class InstanceLabeling:
    """Per-pixel instance ids (non-negative integers)."""

    labels: np.ndarray
    instance_sizes: dict = field(init=False, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size < 1:
            raise InputError("labels must be a non-empty 1-D array")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise InputError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise InputError("instance ids must be >= 0")
        labels.setflags(write=False)
        ids, counts = np.unique(labels, return_counts=True)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(
            self, "instance_sizes", {int(i): int(c) for i, c in zip(ids, counts)}
        )

    @property
    def num_instances(self) -> int:
        return len(self.instance_sizes)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def ids(self) -> list[int]:
        return sorted(self.instance_sizes)

    def mask(self, instance_id: int) -> np.ndarray:
        return self.labels == instance_id

    def subset(self, indices) -> InstanceLabeling:
        return InstanceLabeling(self.labels[np.asarray(indices)])


@dataclass(frozen=True)
class LossConfig:
    alpha: float = DEFAULT_ALPHA
    sample_size: int = DEFAULT_SAMPLE_SIZE
    seed: int = 0
    normalization: Normalization = Normalization.PER_SAMPLE_S

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise InputError(f"alpha must lie in [0, 1), got {self.alpha}")
        if int(self.sample_size) < 2:
            raise InputError("sample_size must be at least 2")
        object.__setattr__(self, "normalization", Normalization(self.normalization))


@dataclass
class LossResult:
    value: float
    positive_term: float
    negative_term: float
    grad_S: np.ndarray
    sampled_indices: np.ndarray


def instance_weights(labels: InstanceLabeling) -> np.ndarray:
    """``w_i = 1 / |I_q|`` so every instance carries total weight one."""
    sizes = np.array([labels.instance_sizes[int(y)] for y in labels.labels], dtype=np.float64)
    return 1.0 / sizes


def sample_pixels(labels: InstanceLabeling, config: LossConfig, rng=None) -> np.ndarray:
    """Draw ``sample_size`` distinct pixel indices uniformly (sorted).

    ``rng`` defaults to a generator seeded from ``config.seed``. When the
    sample size reaches the image size every pixel is returned.
    """
    n = labels.n
    size = int(config.sample_size)
    if size >= n:
        return np.arange(n)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    return np.sort(rng.choice(n, size=size, replace=False))


def pair_loss(
    S_sim,
    labels: InstanceLabeling,
    weights,
    config: LossConfig,
    subset=None,
) -> LossResult:
    S_sim = np.asarray(S_sim, dtype=np.float64)
    n = labels.n
    if S_sim.shape != (n, n):
        raise ShapeMismatch(f"similarity matrix has shape {S_sim.shape}, expected {(n, n)}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,):
        raise ShapeMismatch(f"weights have shape {weights.shape}, expected {(n,)}")
    if subset is None:
        subset = np.arange(n)
    subset = np.asarray(subset)
    if subset.ndim != 1 or subset.size == 0 or not np.issubdtype(subset.dtype, np.integer):
        raise InvalidSubset("subset must be a non-empty 1-D integer array")
    if subset.min() < 0 or subset.max() >= n:
        raise InvalidSubset(f"subset indices must lie in [0, {n})")

    if config.normalization is Normalization.PER_IMAGE_N:
        divisor = float(n)
    else:
        divisor = float(subset.size)

    y = labels.labels[subset]
    s = S_sim[np.ix_(subset, subset)]
    w = weights[subset]
    pair_w = np.outer(w, w) / divisor
    same = y[:, None] == y[None, :]
    active = ~same & (s > config.alpha)

    positive = float(np.sum(pair_w[same] * (1.0 - s[same])))
    negative = float(np.sum(pair_w[active] * (s[active] - config.alpha)))

    g = np.where(same, -pair_w, np.where(active, pair_w, 0.0))
    grad_S = np.zeros((n, n))
    # np.add.at keeps repeated subset indices summing correctly
    np.add.at(grad_S, np.ix_(subset, subset), g)
    return LossResult(
        value=positive + negative,
        positive_term=positive,
        negative_term=negative,
        grad_S=grad_S,
        sampled_indices=subset,
    )


def margin_lower_bound(n: int) -> float:
    """Smallest useful margin for ``n`` instances on the 2-sphere."""
    if n < 2:
        raise InputError("n must be at least 2")
    return 1.0 - 2.0 * math.pi / (math.sqrt(3.0) * n)


def margin_upper_bound(n: int, C: float = 0.0) -> float:
    """Margin above which a zero-hinge embedding of ``n`` instances exists.

    ``C`` is the unspecified constant of the asymptotic packing-distance bound.
    """
    if n < 2:
        raise InputError("n must be at least 2")
    if C < 0:
        raise InputError("C must be non-negative")
    leading = math.sqrt(8.0 * math.pi / (math.sqrt(3.0) * n))
    correction = C * n ** (-2.0 / 3.0)
    if leading < correction:
        raise VacuousBound(
            f"bound is vacuous for n={n}, C={C}: {leading:.4g} < {correction:.4g}"
        )
    return 1.0 - 0.25 * (leading - correction) ** 2


@dataclass(frozen=True)
class SimilarityBoundCheck:
    lhs: float
    bound: float
    holds: bool


def check_total_similarity_bound(X) -> SimilarityBoundCheck:
    X = check_unit_columns(X)
    total = X.sum(axis=1)
    lhs = float(total @ total - np.sum(X * X))
    bound = -float(X.shape[1])
    return SimilarityBoundCheck(lhs=lhs, bound=bound, holds=lhs >= bound - INVARIANT_ATOL)
