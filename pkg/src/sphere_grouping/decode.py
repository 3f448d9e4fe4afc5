"""Turn (near-)collapsed embeddings into discrete instances and proposals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError
from .geometry import check_unit_columns, normalize_columns
from .gbms import KernelConfig, gbms_run

DEFAULT_TAU = 0.95
DEFAULT_DEDUP_IOU = 0.95


@dataclass
class InstancePartition:
    assignment: np.ndarray
    modes: np.ndarray
    counts: np.ndarray

    @property
    def num_modes(self) -> int:
        return self.modes.shape[1]

    def masks(self) -> list:
        return [self.assignment == m for m in range(self.num_modes)]


@dataclass
class ProposalSet:
    masks: list = field(default_factory=list)
    betas: list = field(default_factory=list)

    def __len__(self):
        return len(self.masks)

    @classmethod
    def from_partition(cls, partition: InstancePartition, beta: float = float("nan")):
        masks = partition.masks()
        return cls(masks=masks, betas=[beta] * len(masks))


def _calibrated(a: np.ndarray, B: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + a @ B)


def _compact(assignment: np.ndarray, X: np.ndarray) -> InstancePartition:
    # relabel in order of first appearance
    _, first = np.unique(assignment, return_index=True)
    order = assignment[np.sort(first)]
    remap = {int(old): new for new, old in enumerate(order)}
    assignment = np.array([remap[int(a)] for a in assignment], dtype=np.int64)
    m = len(order)
    sums = np.zeros((X.shape[0], m))
    np.add.at(sums.T, assignment, X.T)
    counts = np.bincount(assignment, minlength=m)
    return InstancePartition(assignment, normalize_columns(sums), counts)


def decode_modes(X, tau: float = DEFAULT_TAU) -> InstancePartition:
    """Greedy threshold grouping in pixel order, then one refinement pass.

    A pixel joins the first mode whose calibrated similarity to it is at least
    ``tau``, otherwise it founds a new mode. Modes are then replaced by the
    normalized mean of their members and every pixel moves to its most similar
    mode (lowest index on ties) provided that similarity still reaches
    ``tau``; otherwise it keeps its first assignment.
    """
    if not (0.5 < tau <= 1.0):
        raise InputError(f"tau must lie in (0.5, 1], got {tau}")
    X = check_unit_columns(X)
    n = X.shape[1]
    modes = []
    assignment = np.empty(n, dtype=np.int64)
    for i in range(n):
        x = X[:, i]
        if modes:
            sims = _calibrated(x, np.stack(modes, axis=1))
            hits = np.flatnonzero(sims >= tau)
            if hits.size:
                assignment[i] = hits[0]
                continue
        assignment[i] = len(modes)
        modes.append(x)

    first = _compact(assignment, X)
    sims = _calibrated(X.T, first.modes).reshape(n, first.num_modes)
    best = np.argmax(sims, axis=1)
    ok = sims[np.arange(n), best] >= tau
    refined = np.where(ok, best, first.assignment)
    return _compact(refined, X)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def multi_bandwidth_proposals(
    X0,
    betas: Sequence[float],
    config: KernelConfig,
    tau: float = DEFAULT_TAU,
    dedup_iou: float = DEFAULT_DEDUP_IOU,
) -> ProposalSet:
    """Pool decoded instances over several kernel concentrations.

    Masks overlapping an already kept mask with IoU >= ``dedup_iou`` are
    dropped; betas are processed in the given order.
    """
    if len(betas) == 0:
        raise InputError("betas must be non-empty")
    kept = ProposalSet()
    for beta in betas:
        cfg = KernelConfig(beta=float(beta), eta=config.eta, loops=config.loops)
        partition = decode_modes(gbms_run(X0, cfg)[-1], tau)
        for mask in partition.masks():
            if not mask.any():
                continue
            if any(mask_iou(mask, k) >= dedup_iou for k in kept.masks):
                continue
            kept.masks.append(mask)
            kept.betas.append(float(beta))
    return kept
