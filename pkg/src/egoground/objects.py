"""Noun-conditioned object selection.

Detections are kept when their confidence strictly exceeds the threshold
and their category embedding is cosine-close to at least one query noun;
survivors are packed into a fixed-width per-clip bank with a validity mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class Detection:
    clip_index: int
    category_id: int
    confidence: float
    category_embedding: np.ndarray  # [D_o]


@dataclass
class ObjectBank:
    features: np.ndarray  # [T, N_o, D_o] float, zero where mask is False
    mask: np.ndarray      # [T, N_o] bool


def match_nouns(query_noun_embeddings: np.ndarray, category_embedding: np.ndarray,
                sim_threshold: float) -> bool:
    """True iff max cosine similarity of the category to any noun >= threshold.

    Zero-norm embeddings never match (logged once per call site at debug).
    """
    if query_noun_embeddings.shape[0] == 0:
        return False
    cat_norm = np.linalg.norm(category_embedding)
    if cat_norm == 0.0:
        log.debug("zero-norm category embedding treated as non-match")
        return False
    noun_norms = np.linalg.norm(query_noun_embeddings, axis=1)
    valid = noun_norms > 0.0
    if not valid.any():
        log.debug("all noun embeddings zero-norm, treated as non-match")
        return False
    sims = (query_noun_embeddings[valid] @ category_embedding) / (noun_norms[valid] * cat_norm)
    return bool(sims.max() >= sim_threshold)


def select_objects(detections: list[Detection], query_noun_embeddings: np.ndarray,
                   theta: float, n_objects: int, num_clips: int, d_obj: int,
                   sim_threshold: float = 0.5) -> ObjectBank:
    """Filter by confidence > theta and noun match, keep top-N per clip.

    Per clip, survivors are ordered by descending confidence; ties break on
    smaller category_id, then input order, so output does not depend on how
    detections were shuffled.
    """
    features = np.zeros((num_clips, n_objects, d_obj), dtype=np.float64)
    mask = np.zeros((num_clips, n_objects), dtype=bool)
    per_clip: dict[int, list[Detection]] = {}
    for det in detections:
        if not (0 <= det.clip_index < num_clips):
            raise ValueError(f"detection clip_index {det.clip_index} outside [0, {num_clips})")
        if det.confidence <= theta:
            continue
        if not match_nouns(query_noun_embeddings, det.category_embedding, sim_threshold):
            continue
        per_clip.setdefault(det.clip_index, []).append(det)
    for t, dets in per_clip.items():
        dets.sort(key=lambda d: (-d.confidence, d.category_id))
        for slot, det in enumerate(dets[:n_objects]):
            features[t, slot] = det.category_embedding
            mask[t, slot] = True
    return ObjectBank(features=features, mask=mask)
