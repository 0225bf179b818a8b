"""Shot branch: narration-driven segmentation, pure-video features via the
shared fusion mixers, learnable-query aggregation, and contrastive pairing.

Shots tile [0, T] exactly. A query-shot pair is positive only when the
ground truth overlaps the shot with positive measure (touching at a
boundary does not count). The branch runs during fine-tuning only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .core import Interval
from .nn import Conv1d, CrossAttnLayer, ParamStore, xavier_uniform

log = logging.getLogger(__name__)

VERB_GROUPS = {
    "R": ("turns around", "looks around"),
    "HM": ("walks", "moves around"),
    "RM": ("rides", "runs", "cycles", "jogs", "jumps"),
}

SHOT_MODES = ("R", "R+HM", "R+HM+RM", "fixed_length")
DEFAULT_SHOT_LEN_SECONDS = 13.0


@dataclass
class ShotSet:
    """Boundaries 0 = t_1 < ... < t_{N+1} = T and the shots between them."""

    boundaries: list[float]
    shots: list[Interval] = field(init=False)

    def __post_init__(self):
        if len(self.boundaries) < 2:
            raise ValueError("need at least [0, T]")
        if any(b <= a for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must be strictly increasing")
        self.shots = [Interval(a, b) for a, b in zip(self.boundaries, self.boundaries[1:])]

    @property
    def num_shots(self) -> int:
        return len(self.shots)


def active_verbs(mode: str, verb_groups: dict[str, tuple[str, ...]] | None = None) -> tuple[str, ...]:
    groups = verb_groups or VERB_GROUPS
    order = {"R": ("R",), "R+HM": ("R", "HM"), "R+HM+RM": ("R", "HM", "RM")}
    if mode not in order:
        raise ValueError(f"mode {mode!r} has no verb set")
    out: list[str] = []
    for g in order[mode]:
        out.extend(groups[g])
    return tuple(out)


def segment_shots(narrations: list[tuple[float, str]], num_clips: float, mode: str,
                  verb_groups: dict[str, tuple[str, ...]] | None = None,
                  shot_len: float | None = None) -> ShotSet:
    """Boundaries at movement narrations (or fixed spacing), always tiling [0, T].

    Verb matching is a case-insensitive substring test against the active
    groups. `shot_len` (clips) is required for fixed_length mode.
    """
    T = float(num_clips)
    if mode == "fixed_length":
        if shot_len is None or shot_len <= 0:
            raise ValueError("fixed_length mode needs a positive shot_len")
        inner = list(np.arange(shot_len, T, shot_len, dtype=np.float64))
    else:
        verbs = tuple(v.lower() for v in active_verbs(mode, verb_groups))
        inner = []
        for t, text in narrations:
            low = text.lower()
            if any(v in low for v in verbs):
                inner.append(float(t))
    keep = sorted({t for t in inner if 0.0 < t < T})
    return ShotSet(boundaries=[0.0] + keep + [T])


def positive_pairs(gts: list[Interval], shot_sets: list[ShotSet],
                   video_of_query: list[int]) -> set[tuple[int, int]]:
    """(query, shot) pairs with positive-measure overlap, shots indexed globally.

    Shot j of video v has global index offset(v) + j, where videos are laid
    out in `shot_sets` order. Cross-video pairs are never positive.
    """
    offsets = np.cumsum([0] + [s.num_shots for s in shot_sets])
    pairs: set[tuple[int, int]] = set()
    for qi, (gt, v) in enumerate(zip(gts, video_of_query)):
        for sj, shot in enumerate(shot_sets[v].shots):
            overlap = min(gt.end, shot.end) - max(gt.start, shot.start)
            if overlap > 0.0:
                pairs.add((qi, int(offsets[v]) + sj))
    return pairs


@dataclass
class ContrastiveBatch:
    q_batch: Tensor          # [m, D] projected sentence embeddings
    v_batch: Tensor          # [n, D] projected shot embeddings
    positives: set[tuple[int, int]]
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        m, n = self.q_batch.shape[0], self.v_batch.shape[0]
        for qi, sj in self.positives:
            if not (0 <= qi < m and 0 <= sj < n):
                raise ValueError(f"positive pair ({qi}, {sj}) out of range ({m}, {n})")


def pure_video_features(v_projected: Tensor, fusion_layers, pad_mask: np.ndarray) -> Tensor:
    """Video-only features through the fusion layers' mixer sub-blocks.

    Reuses the fusion parameters by reference; no cross-attention, no gate.
    """
    x = v_projected
    mf = pad_mask[..., None].astype(np.float64)
    for layer in fusion_layers:
        x = layer.mixer(x * mf)
    return x


class Aggregator:
    """Single-layer learnable-query readout followed by a conv over the slots.

    K learnable queries cross-attend over the span's features; a 1-D conv
    over the K slots and mean pooling produce one vector per span.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 num_queries: int, rng: np.random.Generator):
        self.queries = store.add(f"{name}.queries",
                                 xavier_uniform(rng, num_queries, dim, (num_queries, dim)))
        self.layer = CrossAttnLayer(store, f"{name}.layer", dim, heads, rng)
        self.conv = Conv1d(store, f"{name}.conv", dim, dim, rng)

    def __call__(self, keys: Tensor, key_mask: np.ndarray) -> Tensor:
        """keys [n, S, D] + mask [n, S] -> [n, D]."""
        n = keys.shape[0]
        K, D = self.queries.shape
        q = self.queries.reshape(1, K, D) + Tensor(np.zeros((n, 1, 1)))
        x = self.layer(q, keys, key_mask=key_mask)
        return self.conv(x).mean(axis=1)


def shot_clip_indices(shot_sets: list[ShotSet], num_clips: int):
    """Padded clip-index table for every shot across a batch of videos.

    Clip i belongs to a shot when its center i + 0.5 falls inside. Returns
    (video_index [n], clip_index [n, S_max], key_mask [n, S_max]); shots
    whose span contains no clip center get an all-False mask row.
    """
    rows: list[tuple[int, np.ndarray]] = []
    centers = np.arange(num_clips) + 0.5
    for v, ss in enumerate(shot_sets):
        for shot in ss.shots:
            if shot.length == 0.0:
                log.warning("zero-length shot %s excluded from aggregation", shot)
                continue
            idx = np.nonzero((centers >= shot.start) & (centers < shot.end))[0]
            rows.append((v, idx))
    n = len(rows)
    s_max = max((len(idx) for _, idx in rows), default=1)
    s_max = max(s_max, 1)
    video = np.zeros(n, dtype=np.int64)
    clips = np.zeros((n, s_max), dtype=np.int64)
    mask = np.zeros((n, s_max), dtype=bool)
    for r, (v, idx) in enumerate(rows):
        video[r] = v
        clips[r, : len(idx)] = idx
        mask[r, : len(idx)] = True
    return video, clips, mask
