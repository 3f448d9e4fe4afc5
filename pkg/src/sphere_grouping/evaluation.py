"""Instance-level metrics: best IoU, average recall, similarity histograms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .decode import InstancePartition, ProposalSet
from .errors import InputError, ShapeMismatch
from .loss import InstanceLabeling

AR_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
BACKGROUND_ID = 0


@dataclass
class IouMatchResult:
    per_gt_best_iou: np.ndarray
    mean_best_iou: float
    matched_pred: np.ndarray  # -1 when a gt instance is left unmatched
    gt_ids: np.ndarray


@dataclass
class SimilarityHistogram:
    edges: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def positive_mass_above(self, level: float) -> float:
        return _mass_above(self.edges, self.positive, level)

    def negative_mass_above(self, level: float) -> float:
        return _mass_above(self.edges, self.negative, level)


def _mass_above(edges, counts, level):
    total = counts.sum()
    if total == 0:
        return 0.0
    return float(counts[edges[:-1] >= level - 1e-12].sum() / total)


def _pred_masks(pred: Union[ProposalSet, InstancePartition, Sequence]) -> list:
    if isinstance(pred, InstancePartition):
        return pred.masks()
    if isinstance(pred, ProposalSet):
        return list(pred.masks)
    return [np.asarray(m, dtype=bool) for m in pred]


def _gt_masks(gt: InstanceLabeling, ignore_background: bool):
    ids = [i for i in gt.ids if not (ignore_background and i == BACKGROUND_ID)]
    return np.array(ids, dtype=np.int64), [gt.mask(i) for i in ids]


def iou_table(pred_masks: list, gt_masks: list) -> np.ndarray:
    """IoU for every (gt, pred) pair, shape ``(len(gt), len(pred))``."""
    if not pred_masks or not gt_masks:
        return np.zeros((len(gt_masks), len(pred_masks)))
    G = np.stack(gt_masks).astype(np.float64)
    P = np.stack(pred_masks).astype(np.float64)
    inter = G @ P.T
    union = G.sum(1)[:, None] + P.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def _greedy_match(table: np.ndarray, min_iou: float = 0.0) -> np.ndarray:
    matched = np.full(table.shape[0], -1, dtype=np.int64)
    if table.size == 0:
        return matched
    used = np.zeros(table.shape[1], dtype=bool)
    flat = np.argsort(-table, axis=None, kind="stable")
    for idx in flat:
        g, p = np.unravel_index(idx, table.shape)
        if table[g, p] < min_iou or table[g, p] <= 0.0:
            break
        if matched[g] >= 0 or used[p]:
            continue
        matched[g] = p
        used[p] = True
    return matched


def best_iou(pred, gt: InstanceLabeling, ignore_background: bool = True) -> IouMatchResult:
    masks = _pred_masks(pred)
    for m in masks:
        if m.shape != (gt.n,):
            raise ShapeMismatch(f"prediction mask of shape {m.shape}, expected {(gt.n,)}")
    ids, gts = _gt_masks(gt, ignore_background)
    table = iou_table(masks, gts)
    per_gt = table.max(axis=1) if table.shape[1] else np.zeros(len(gts))
    mean = float(per_gt.mean()) if per_gt.size else 0.0
    return IouMatchResult(per_gt, mean, _greedy_match(table), ids)


def recall_at(pred, gt: InstanceLabeling, threshold: float, ignore_background: bool = True) -> float:
    masks = _pred_masks(pred)
    _, gts = _gt_masks(gt, ignore_background)
    if not gts:
        return 0.0
    matched = _greedy_match(iou_table(masks, gts), min_iou=threshold)
    return float(np.count_nonzero(matched >= 0) / len(gts))


def average_recall(
    pred,
    gt: InstanceLabeling,
    thresholds: Sequence[float] = AR_THRESHOLDS,
    ignore_background: bool = True,
) -> float:
    thresholds = list(thresholds)
    if not thresholds or any(not (0.0 < t <= 1.0) for t in thresholds):
        raise InputError("thresholds must be non-empty and lie in (0, 1]")
    return float(np.mean([recall_at(pred, gt, t, ignore_background) for t in thresholds]))


def similarity_histogram(
    S,
    labels: InstanceLabeling,
    bins: int = 1000,
    max_pairs: int = 100_000,
    seed: int = 0,
) -> SimilarityHistogram:
    """Histogram of ``s_ij`` over distinct pairs, split by same/different instance."""
    if bins < 2:
        raise InputError("bins must be >= 2")
    S = np.asarray(S, dtype=np.float64)
    if S.shape != (labels.n, labels.n):
        raise ShapeMismatch(f"S has shape {S.shape}, expected {(labels.n, labels.n)}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(labels.n, k=1)
    same = labels.labels[iu] == labels.labels[ju]
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = []
    for sel in (same, ~same):
        vals = S[iu[sel], ju[sel]]
        if vals.size > max_pairs:
            vals = vals[rng.choice(vals.size, size=max_pairs, replace=False)]
        counts, _ = np.histogram(np.clip(vals, 0.0, 1.0), bins=edges)
        out.append(counts)
    return SimilarityHistogram(edges, out[0], out[1])
