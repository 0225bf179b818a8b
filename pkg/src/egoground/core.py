"""Temporal geometry: intervals, anchor points, and the arithmetic between them.

All geometry lives in clip-index units. Seconds only appear at I/O
boundaries via `seconds_per_clip`.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_FPS = 30.0
DEFAULT_WINDOW_FRAMES = 16


def seconds_per_clip(window_frames: int = DEFAULT_WINDOW_FRAMES, fps: float = DEFAULT_FPS) -> float:
    return window_frames / fps


@dataclass(frozen=True)
class Interval:
    """A temporal span [start, end] in clip-index units, start <= end.

    Ground-truth intervals additionally satisfy 0 <= start (checked where
    datasets are built); unclamped anchor decoding may step below 0.
    """

    start: float
    end: float

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"interval end {self.end} < start {self.start}")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass(frozen=True)
class AnchorPoint:
    """A pyramid position: level j, index k, timestamp 2^j * k, stride 2^j."""

    level: int
    index: int

    @property
    def stride(self) -> int:
        return 1 << self.level

    @property
    def timestamp(self) -> float:
        return float(self.stride * self.index)


def iou(a: Interval, b: Interval) -> float:
    """Intersection over union of two intervals, in [0, 1].

    Two identical zero-length intervals score 1; a zero-length interval
    against anything else scores 0 unless interiors coincide.
    """
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter < 0.0:
        inter = 0.0
    union = a.length + b.length - inter
    if union <= 0.0:
        # Both zero-length: identical points count as a perfect match.
        return 1.0 if a.start == b.start else 0.0
    return inter / union


def diou_terms(pred: Interval, gt: Interval) -> tuple[float, float]:
    """IoU plus the normalized center-distance penalty d^2 / c^2.

    c is the length of the smallest interval enclosing both; the penalty is
    0 when centers coincide, and defined as 0 in the degenerate c = 0 case.
    """
    c = max(pred.end, gt.end) - min(pred.start, gt.start)
    if c <= 0.0:
        return iou(pred, gt), 0.0
    d = pred.center - gt.center
    return iou(pred, gt), (d * d) / (c * c)


def decode_anchor(
    anchor: AnchorPoint,
    start_offset: float,
    end_offset: float,
    clamp_to: float | None = None,
) -> Interval:
    """Decode nonnegative offsets into (t - s*2^j, t + e*2^j).

    No clamping by default; pass `clamp_to=T` to clip into [0, T], which is
    what inference does (the loss keeps raw geometry).
    """
    if start_offset < 0 or end_offset < 0:
        raise ValueError("offsets must be nonnegative")
    t = anchor.timestamp
    s = t - start_offset * anchor.stride
    e = t + end_offset * anchor.stride
    if clamp_to is not None:
        s = min(max(s, 0.0), clamp_to)
        e = min(max(e, 0.0), clamp_to)
    return Interval(s, e)
