"""The assembled grounding network.

Main branch: project clips, encode query and objects, run the fusion
stack, build the pyramid, decode heads. Shot branch: reuse the fusion
mixers on video alone, aggregate shots and the query sentence, and project
both into the contrastive space. Episodes in a batch must share T; query
lengths are padded with a sentence mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import RunConfig
from .core import Interval
from .data import EpisodeRecord
from .encoders import ObjectEncoder, TextEncoder
from .fusion import FusionLayer, Heads, MultiScale, PyramidOutputs, pad_to_multiple
from .nn import Linear
from .objects import ObjectBank, select_objects
from .params import ParamStore
from .shots import Aggregator, ShotSet, pure_video_features, shot_clip_indices

TEXT_LAYERS = 4
OBJECT_LAYERS = 4


@dataclass
class Batch:
    episode_ids: list[str]
    clip_features: np.ndarray   # [B, T, D_v]
    query_tokens: np.ndarray    # [B, L_max, D_T]
    query_mask: np.ndarray      # [B, L_max] bool
    obj_features: np.ndarray    # [B, T, N_o, D_o]
    obj_mask: np.ndarray        # [B, T, N_o] bool
    gts: list[Interval]
    narrations: list[list[tuple[float, str]]]

    @property
    def size(self) -> int:
        return len(self.episode_ids)

    @property
    def num_clips(self) -> int:
        return self.clip_features.shape[1]


def build_object_bank(record: EpisodeRecord, cfg: RunConfig) -> ObjectBank:
    return select_objects(
        record.detections,
        record.noun_embeddings.astype(np.float64),
        theta=cfg.objects.theta,
        n_objects=cfg.model.N_o,
        num_clips=record.num_clips,
        d_obj=record.noun_embeddings.shape[1],
        sim_threshold=cfg.objects.sim_threshold,
    )


def collate(records: list[EpisodeRecord], cfg: RunConfig,
            banks: dict[str, ObjectBank] | None = None) -> Batch:
    T = records[0].num_clips
    if any(r.num_clips != T for r in records):
        raise ValueError("episodes in a batch must share the clip count")
    B = len(records)
    l_max = max(r.query_tokens.shape[0] for r in records)
    d_t = records[0].query_tokens.shape[1]
    d_o = records[0].noun_embeddings.shape[1]
    n_o = cfg.model.N_o

    tokens = np.zeros((B, l_max, d_t))
    tmask = np.zeros((B, l_max), dtype=bool)
    clips = np.zeros((B, T, records[0].clip_features.shape[1]))
    obj_feat = np.zeros((B, T, n_o, d_o))
    obj_mask = np.zeros((B, T, n_o), dtype=bool)
    for i, rec in enumerate(records):
        L = rec.query_tokens.shape[0]
        tokens[i, :L] = rec.query_tokens
        tmask[i, :L] = True
        clips[i] = rec.clip_features
        bank = banks[rec.episode_id] if banks else build_object_bank(rec, cfg)
        obj_feat[i] = bank.features
        obj_mask[i] = bank.mask
    return Batch(
        episode_ids=[r.episode_id for r in records],
        clip_features=clips,
        query_tokens=tokens,
        query_mask=tmask,
        obj_features=obj_feat,
        obj_mask=obj_mask,
        gts=[r.gt for r in records],
        narrations=[r.narrations for r in records],
    )


class GroundingModel:
    def __init__(self, cfg: RunConfig, init_seed: int):
        self.cfg = cfg
        m = cfg.model
        rng = np.random.default_rng(init_seed)
        store = ParamStore()
        self.store = store
        self.video_proj = Linear(store, "input.video_proj", cfg.data.D_v, m.D, rng)
        self.text_encoder = TextEncoder(store, "text_encoder", cfg.data.D_T, m.D,
                                        m.heads, TEXT_LAYERS, rng)
        self.object_encoder = ObjectEncoder(store, "object_encoder", cfg.data.D_o, m.D,
                                            m.heads, OBJECT_LAYERS, rng)
        self.fusion_layers = [
            FusionLayer(store, f"fusion.layer{i}", m.D, m.heads, m.ssm_state, rng,
                        tie_directions=m.tie_directions)
            for i in range(m.L_f)
        ]
        self.multiscale = MultiScale(store, "pyramid", m.D, m.heads, m.L_s, rng)
        self.heads = Heads(store, "heads", m.D, rng)
        self.shot_aggregator = Aggregator(store, "shot.shot_agg", m.D, m.heads, m.K, rng)
        self.text_aggregator = Aggregator(store, "shot.text_agg", m.D, m.heads, m.K, rng)
        self.shot_proj = _ProjectionMLP(store, "shot.video_proj", m.D, rng)
        self.text_proj = _ProjectionMLP(store, "shot.text_proj", m.D, rng)

    # -- forward passes ------------------------------------------------------

    def encode_query(self, batch: Batch) -> Tensor:
        return self.text_encoder(Tensor(batch.query_tokens), batch.query_mask)

    def project_clips(self, batch: Batch) -> tuple[Tensor, np.ndarray]:
        """Projected clip features, right-padded to a multiple of 2^L_s."""
        v = self.video_proj(Tensor(batch.clip_features))
        padded, mask = pad_to_multiple(v.data, 1 << self.cfg.model.L_s)
        if padded.shape[1] != v.shape[1]:
            B, T_pad = mask.shape
            pad = Tensor(np.zeros((B, T_pad - v.shape[1], v.shape[2])))
            v = ag.concat([v, pad], axis=1)
        return v, mask

    def forward_main(self, batch: Batch, use_objects: bool,
                     query: Tensor | None = None) -> PyramidOutputs:
        qf = self.encode_query(batch) if query is None else query
        v, pad_mask = self.project_clips(batch)
        objects = obj_mask = None
        if use_objects:
            of = self.object_encoder(Tensor(batch.obj_features), batch.obj_mask,
                                     qf, batch.query_mask)
            objects, obj_mask = _pad_objects(of, batch.obj_mask, pad_mask.shape[1])
        for layer in self.fusion_layers:
            v = layer(v, qf, batch.query_mask, objects, obj_mask, pad_mask, use_objects)
        feats, masks = self.multiscale(v, pad_mask)
        return self.heads(feats, masks)

    def forward_shot(self, batch: Batch, shot_sets: list[ShotSet],
                     query: Tensor | None = None) -> tuple[Tensor, Tensor, np.ndarray]:
        """Contrastive embeddings: (queries [B, D], shots [n, D], video_of_shot)."""
        qf = self.encode_query(batch) if query is None else query
        v, pad_mask = self.project_clips(batch)
        pure = pure_video_features(v, self.fusion_layers, pad_mask)
        video_idx, clip_idx, key_mask = shot_clip_indices(shot_sets, batch.num_clips)
        keys = pure[video_idx[:, None], clip_idx]
        v_shot = self.shot_aggregator(keys, key_mask)
        q_sent = self.text_aggregator(qf, batch.query_mask)
        return self.text_proj(q_sent), self.shot_proj(v_shot), video_idx

    # -- parameter plumbing ----------------------------------------------------

    def copy_query_attention_to_objects(self):
        """Initialize each object cross-attention block from its query twin."""
        for i in range(self.cfg.model.L_f):
            src_prefix = f"fusion.layer{i}.query_ca."
            dst_prefix = f"fusion.layer{i}.obj_ca."
            for name in self.store.names():
                if name.startswith(src_prefix):
                    dst = dst_prefix + name[len(src_prefix):]
                    self.store[dst].data = self.store[name].data.copy()


def _pad_objects(of: Tensor, obj_mask: np.ndarray, t_pad: int):
    B, T, N, D = of.shape
    if t_pad == T:
        return of, obj_mask
    pad = Tensor(np.zeros((B, t_pad - T, N, D)))
    mask = np.zeros((B, t_pad, N), dtype=bool)
    mask[:, :T] = obj_mask
    return ag.concat([of, pad], axis=1), mask


class _ProjectionMLP:
    """Two-layer projection into the joint contrastive space."""

    def __init__(self, store: ParamStore, name: str, dim: int, rng: np.random.Generator):
        self.fc1 = Linear(store, f"{name}.fc1", dim, dim, rng)
        self.fc2 = Linear(store, f"{name}.fc2", dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))
