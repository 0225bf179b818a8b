"""Decoding, Gaussian SoftNMS, and the Rank@m / IoU metric.

Everything here is deterministic: ties break by (score desc, level asc,
index asc) so repeated runs produce identical output, including order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Interval, iou
from .fusion import PyramidOutputs


@dataclass
class ScoredMoment:
    interval: Interval
    score: float
    source_anchor: tuple[int, int]  # (level, index)

    def sort_key(self):
        return (-self.score, self.source_anchor[0], self.source_anchor[1])


def decode_predictions(outputs: PyramidOutputs, episode: int, num_clips: float,
                       pre_nms_score_floor: float, pre_nms_topk: int) -> list[ScoredMoment]:
    """Decode one episode's pyramid into clamped scored moments.

    Keeps unpadded anchors with confidence > floor, sorts by score with the
    deterministic tie-break, and truncates to the top-k.
    """
    moments: list[ScoredMoment] = []
    for level in range(outputs.num_levels):
        conf = outputs.confidences[level].data[episode]
        offs = outputs.offsets[level].data[episode]
        valid = outputs.valid[level][episode]
        grid = outputs.anchors[level]
        keep = np.nonzero(valid & (conf > pre_nms_score_floor))[0]
        for k in keep:
            t = grid.timestamps[k]
            s = max(0.0, min(t - offs[k, 0] * grid.stride, num_clips))
            e = max(0.0, min(t + offs[k, 1] * grid.stride, num_clips))
            moments.append(ScoredMoment(
                interval=Interval(s, e),
                score=float(conf[k]),
                source_anchor=(grid.level, int(k)),
            ))
    moments.sort(key=ScoredMoment.sort_key)
    return moments[:pre_nms_topk]


def soft_nms(moments: list[ScoredMoment], sigma: float, score_floor: float,
             max_keep: int) -> list[ScoredMoment]:
    """Gaussian SoftNMS: emit the best remaining moment, decay the rest by
    exp(-iou^2 / sigma), drop any that fall below the floor."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    pool = [ScoredMoment(m.interval, m.score, m.source_anchor) for m in moments]
    kept: list[ScoredMoment] = []
    while pool and len(kept) < max_keep:
        best = min(pool, key=ScoredMoment.sort_key)
        pool.remove(best)
        kept.append(best)
        survivors = []
        for m in pool:
            overlap = iou(best.interval, m.interval)
            m.score = m.score * float(np.exp(-(overlap * overlap) / sigma))
            if m.score >= score_floor:
                survivors.append(m)
        pool = survivors
    kept.sort(key=ScoredMoment.sort_key)
    return kept


def rank_at_m(predictions_per_query: list[list[ScoredMoment]], gts: list[Interval],
              m: int, n_iou: float) -> float:
    """Percentage of queries whose top-m predictions contain a moment with
    IoU strictly greater than n_iou against the ground truth."""
    if not predictions_per_query:
        raise ValueError("rank_at_m needs at least one query")
    if len(predictions_per_query) != len(gts):
        raise ValueError("predictions and ground truths must align")
    hits = 0
    for preds, gt in zip(predictions_per_query, gts):
        top = sorted(preds, key=ScoredMoment.sort_key)[:m]
        if any(iou(p.interval, gt) > n_iou for p in top):
            hits += 1
    return 100.0 * hits / len(gts)


def dump_predictions(path: str | Path, episode_id: str, moments: list[ScoredMoment],
                     seconds_per_clip: float, append: bool = False):
    """Line-delimited records (episode_id, start_seconds, end_seconds, score)."""
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as f:
        for m in moments:
            f.write(json.dumps({
                "episode_id": episode_id,
                "start_seconds": m.interval.start * seconds_per_clip,
                "end_seconds": m.interval.end * seconds_per_clip,
                "score": m.score,
            }, sort_keys=True) + "\n")
