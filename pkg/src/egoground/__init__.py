"""Moment localization for egocentric video over synthetic feature streams.

Query-conditioned anchor pyramid with object cross-attention and a
shot-contrastive auxiliary branch, trained end to end on CPU.
"""

from .core import AnchorPoint, Interval, decode_anchor, diou_terms, iou, seconds_per_clip

__all__ = [
    "AnchorPoint",
    "Interval",
    "decode_anchor",
    "diou_terms",
    "iou",
    "seconds_per_clip",
]

__version__ = "0.1.0"
