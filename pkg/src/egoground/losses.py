"""Anchor assignment and the training losses.

Assignment uses center sampling (radius in strides, window clipped to the
ground truth) plus per-level regression ranges in clip units. Losses:
focal classification over all valid anchors, 1-D distance-IoU regression
over positives, symmetric multi-positive InfoNCE for the shot branch, and
a momentum-normalized total.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .core import Interval
from .fusion import AnchorGrid
from .shots import ContrastiveBatch

log = logging.getLogger(__name__)

DEFAULT_CENTER_RADIUS = 1.5
DEFAULT_FOCAL_ALPHA = 0.25
DEFAULT_FOCAL_GAMMA = 2.0
DEFAULT_NORMALIZER_MOMENTUM = 0.9
_P_FLOOR = 1e-12


def default_level_ranges(num_levels: int) -> list[tuple[float, float]]:
    """Regression ranges (lo, hi] in clip units: (0,4], (4,8], (8,16], ..., (2^(L+1), inf)."""
    ranges = []
    for j in range(num_levels + 1):
        lo = 0.0 if j == 0 else float(2 ** (j + 1))
        hi = np.inf if j == num_levels else float(2 ** (j + 2))
        ranges.append((lo, hi))
    return ranges


@dataclass
class AssignmentResult:
    """Flat per-anchor assignment for one episode (levels concatenated)."""

    positive_mask: np.ndarray       # [A] bool
    class_targets: np.ndarray       # [A] float {0, 1}
    regression_targets: np.ndarray  # [A, 2], defined where positive
    level: np.ndarray               # [A] int
    timestamp: np.ndarray           # [A] float
    stride: np.ndarray              # [A] float

    @property
    def num_positives(self) -> int:
        return int(self.positive_mask.sum())


def assign_positives(anchors: list[AnchorGrid], valid: list[np.ndarray], gt: Interval,
                     center_radius: float, level_ranges: list[tuple[float, float]]) -> AssignmentResult:
    """An anchor is positive iff its timestamp falls inside the gt-clipped
    center window and its max regression distance (clip units) lands in the
    level's range (lo, hi]. Padded anchors are never positive."""
    if len(anchors) != len(level_ranges):
        raise ValueError(f"{len(anchors)} levels but {len(level_ranges)} ranges")
    if gt.length <= 0:
        log.warning("zero-length ground truth %s yields no positive anchors", gt)
    pos_parts, tgt_parts, lvl_parts, ts_parts, st_parts = [], [], [], [], []
    center = gt.center
    for grid, valid_j, (lo, hi) in zip(anchors, valid, level_ranges):
        t = grid.timestamps
        stride = float(grid.stride)
        win_lo = max(gt.start, center - center_radius * stride)
        win_hi = min(gt.end, center + center_radius * stride)
        s_star = (t - gt.start) / stride
        e_star = (gt.end - t) / stride
        max_off = np.maximum(s_star, e_star) * stride
        pos = ((t >= win_lo) & (t <= win_hi)
               & (max_off > lo) & (max_off <= hi)
               & valid_j.astype(bool))
        if gt.length <= 0:
            pos[:] = False
        pos_parts.append(pos)
        tgt_parts.append(np.stack([s_star, e_star], axis=1))
        lvl_parts.append(np.full(grid.length, grid.level))
        ts_parts.append(t)
        st_parts.append(np.full(grid.length, stride))
    positive = np.concatenate(pos_parts)
    return AssignmentResult(
        positive_mask=positive,
        class_targets=positive.astype(np.float64),
        regression_targets=np.concatenate(tgt_parts, axis=0),
        level=np.concatenate(lvl_parts),
        timestamp=np.concatenate(ts_parts),
        stride=np.concatenate(st_parts),
    )


def focal_loss(confidences: Tensor, class_targets: np.ndarray, alpha: float,
               gamma: float, valid_mask: np.ndarray) -> Tensor:
    """Sum over valid anchors of -alpha_t (1 - p_t)^gamma log(p_t)."""
    targets = np.asarray(class_targets, dtype=np.float64)
    p_t = confidences * targets + (1.0 - confidences) * (1.0 - targets)
    alpha_t = alpha * targets + (1.0 - alpha) * (1.0 - targets)
    term = (1.0 - p_t) ** gamma * ag.log(ag.clip(p_t, _P_FLOOR, 2.0)) * alpha_t
    return -(term * valid_mask.astype(np.float64)).sum()


def diou_terms_batch(ps: Tensor, pe: Tensor, gs: np.ndarray, ge: np.ndarray):
    """Differentiable IoU and center-distance penalty for aligned boundary arrays."""
    gs_t, ge_t = Tensor(gs), Tensor(ge)
    inter = ag.maximum(ag.minimum(pe, ge_t) - ag.maximum(ps, gs_t), Tensor(np.zeros(ps.shape)))
    union = (pe - ps) + (ge_t - gs_t) - inter
    iou = inter / union
    c = ag.maximum(pe, ge_t) - ag.minimum(ps, gs_t)
    d = (ps + pe) * 0.5 - (gs_t + ge_t) * 0.5
    penalty = (d * d) / (c * c)
    return iou, penalty


def diou_loss(pred_offsets: Tensor, assignment: AssignmentResult, gt: Interval) -> Tensor:
    """Sum over positive anchors of 1 - IoU + d^2/c^2 on decoded intervals."""
    pos = np.nonzero(assignment.positive_mask)[0]
    if pos.size == 0:
        return Tensor(0.0)
    gs = np.full(pos.size, gt.start)
    ge = np.full(pos.size, gt.end)
    return _diou_sum(pred_offsets[pos], assignment.timestamp[pos],
                     assignment.stride[pos], gs, ge)


def _diou_sum(off: Tensor, t: np.ndarray, stride: np.ndarray,
              gs: np.ndarray, ge: np.ndarray) -> Tensor:
    ps = Tensor(t) - off[:, 0] * stride
    pe = Tensor(t) + off[:, 1] * stride
    iou, penalty = diou_terms_batch(ps, pe, gs, ge)
    return (1.0 - iou + penalty).sum()


def diou_loss_batch(pred_offsets: Tensor, timestamps: np.ndarray, strides: np.ndarray,
                    gt_start: np.ndarray, gt_end: np.ndarray,
                    positive_mask: np.ndarray) -> Tensor:
    """Batched variant: offsets [B, A, 2], per-episode gt bounds, mask [B, A]."""
    b_idx, a_idx = np.nonzero(positive_mask)
    if b_idx.size == 0:
        return Tensor(0.0)
    off = pred_offsets[b_idx, a_idx]
    return _diou_sum(off, timestamps[a_idx], strides[a_idx],
                     gt_start[b_idx], gt_end[b_idx])


def infonce(batch: ContrastiveBatch) -> Tensor:
    """Symmetric multi-positive InfoNCE over cosine similarities.

    Each direction averages -log(sum_pos exp(sim/tau) / sum_all exp(sim/tau))
    over rows that have at least one positive; rows without positives are
    excluded from that direction's average.
    """
    qn = _l2_normalize(batch.q_batch)
    vn = _l2_normalize(batch.v_batch)
    sim = qn @ vn.swapaxes(0, 1)
    logits = sim * (1.0 / batch.tau)
    m, n = logits.shape

    pos_of_q: dict[int, list[int]] = {}
    pos_of_v: dict[int, list[int]] = {}
    for qi, sj in batch.positives:
        pos_of_q.setdefault(qi, []).append(sj)
        pos_of_v.setdefault(sj, []).append(qi)

    def direction(mat: Tensor, rows: int, pos_of: dict[int, list[int]]) -> Tensor | None:
        terms = []
        for i in range(rows):
            cols = pos_of.get(i)
            if not cols:
                continue
            row = mat[i]
            terms.append(ag.logsumexp(row, axis=-1) - ag.logsumexp(row[np.array(sorted(cols))], axis=-1))
        if not terms:
            return None
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total * (1.0 / len(terms))

    d_q = direction(logits, m, pos_of_q)
    d_v = direction(logits.swapaxes(0, 1), n, pos_of_v)
    if d_q is None and d_v is None:
        log.warning("contrastive batch has no positive pairs; loss is 0")
        return Tensor(0.0)
    if d_q is None:
        return d_v
    if d_v is None:
        return d_q
    return d_q + d_v


def _l2_normalize(x: Tensor) -> Tensor:
    return x / ag.sqrt((x * x).sum(axis=-1, keepdims=True))


class LossNormalizer:
    """Momentum-tracked count of positive candidates, floored at 1."""

    def __init__(self, momentum: float = DEFAULT_NORMALIZER_MOMENTUM, c_ema: float = 1.0):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self.c_ema = float(c_ema)

    def update(self, num_positives: int) -> float:
        target = float(max(num_positives, 1))
        self.c_ema = self.momentum * self.c_ema + (1.0 - self.momentum) * target
        self.c_ema = max(self.c_ema, 1.0)
        return self.c_ema

    def state(self) -> dict:
        return {"momentum": self.momentum, "c_ema": self.c_ema}

    @classmethod
    def from_state(cls, state: dict) -> "LossNormalizer":
        return cls(momentum=state["momentum"], c_ema=state["c_ema"])


def total_loss(l_ml: Tensor, l_con: Tensor, normalizer: LossNormalizer,
               lam: float, num_positives_this_step: int) -> Tensor:
    """(L_ML + lambda * L_con) / C, with C updated by momentum first."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    c = normalizer.update(num_positives_this_step)
    return (l_ml + lam * l_con) * (1.0 / c)
