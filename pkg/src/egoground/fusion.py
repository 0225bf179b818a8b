"""Main-branch blocks: video mixing, query/object cross-attention with gated
fusion, the multi-scale pyramid, and the prediction heads.

The pyramid halves sequence length per level with a masked stride-2
depthwise convolution; heads are two-layer convs shared across levels by
default. All padding masks ride along and are honored by attention, convs,
losses, and decoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import (Conv1d, CrossAttnLayer, DepthwiseConv1d, Linear, MixerBlock,
                 ParamStore, SelfAttnLayer)


@dataclass
class AnchorGrid:
    """Anchor metadata for one pyramid level: timestamp = stride * index."""

    level: int
    length: int

    @property
    def stride(self) -> int:
        return 1 << self.level

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.length)

    @property
    def timestamps(self) -> np.ndarray:
        return self.indices.astype(np.float64) * self.stride


@dataclass
class PyramidOutputs:
    features: list[Tensor]      # per level [B, T_j, D]
    confidences: list[Tensor]   # per level [B, T_j], sigmoid outputs
    offsets: list[Tensor]       # per level [B, T_j, 2], softplus outputs
    anchors: list[AnchorGrid]
    valid: list[np.ndarray]     # per level [B, T_j] bool, False on padding

    @property
    def num_levels(self) -> int:
        return len(self.features)


def pad_to_multiple(x: np.ndarray, multiple: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad [B, T, D] with zeros to a multiple; returns (padded, keep mask)."""
    B, T, D = x.shape
    T_pad = ((T + multiple - 1) // multiple) * multiple
    mask = np.zeros((B, T_pad), dtype=bool)
    mask[:, :T] = True
    if T_pad == T:
        return x, mask
    out = np.zeros((B, T_pad, D), dtype=x.dtype)
    out[:, :T] = x
    return out, mask


class GateFuse:
    """Convex gate: A = sigmoid(MLP(x || y)); out = A*x + (1-A)*y."""

    def __init__(self, store: ParamStore, name: str, dim: int, rng: np.random.Generator):
        self.fc1 = Linear(store, f"{name}.fc1", 2 * dim, dim, rng)
        self.fc2 = Linear(store, f"{name}.fc2", dim, dim, rng)

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        gate = ag.sigmoid(self.fc2(ag.gelu(self.fc1(ag.concat([x, y], axis=-1)))))
        return gate * x + (1.0 - gate) * y


class FusionLayer:
    """One fusion layer: mixer, then parallel query/object attention, gated."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, state: int,
                 rng: np.random.Generator, tie_directions: bool = False):
        self.mixer = MixerBlock(store, f"{name}.mixer", dim, state, rng, tie_directions)
        self.query_ca = CrossAttnLayer(store, f"{name}.query_ca", dim, heads, rng)
        self.obj_ca = CrossAttnLayer(store, f"{name}.obj_ca", dim, heads, rng)
        self.gate = GateFuse(store, f"{name}.gate", dim, rng)

    def __call__(self, v: Tensor, query: Tensor, query_mask: np.ndarray,
                 objects: Tensor | None, obj_mask: np.ndarray | None,
                 pad_mask: np.ndarray, use_objects: bool) -> Tensor:
        v = v * pad_mask[..., None].astype(np.float64)
        v_hat = self.mixer(v)
        v_q = self.query_ca(v_hat, query, key_mask=query_mask)
        if not use_objects or objects is None:
            return v_q
        v_o = _per_clip_attention(self.obj_ca, v_hat, objects, obj_mask)
        return self.gate(v_q, v_o)


def _per_clip_attention(layer: CrossAttnLayer, v: Tensor, objects: Tensor,
                        obj_mask: np.ndarray) -> Tensor:
    """Each timestep attends over its own clip's object slots only."""
    B, T, D = v.shape
    N = objects.shape[2]
    q = v.reshape(B * T, 1, D)
    kv = objects.reshape(B * T, N, D)
    out = layer(q, kv, key_mask=obj_mask.reshape(B * T, N))
    return out.reshape(B, T, D)


class MultiScale:
    """Stride-2 depthwise conv + self-attention per level; lengths halve."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 levels: int, rng: np.random.Generator):
        self.levels = levels
        self.blocks = []
        for j in range(levels):
            conv = DepthwiseConv1d(store, f"{name}.level{j}.down", dim, rng)
            attn = SelfAttnLayer(store, f"{name}.level{j}.attn", dim, heads, rng)
            self.blocks.append((conv, attn))

    def __call__(self, x: Tensor, mask: np.ndarray) -> tuple[list[Tensor], list[np.ndarray]]:
        if x.shape[1] == 0:
            raise ValueError("multiscale input must have at least one timestep")
        feats, masks = [x], [mask]
        for conv, attn in self.blocks:
            x = x * masks[-1][..., None].astype(np.float64)
            x = conv(x)
            m = masks[-1][:, ::2]
            x = attn(x, mask=m)
            feats.append(x)
            masks.append(m)
        return feats, masks


class Heads:
    """Two-layer conv heads: sigmoid confidence and softplus (s, e) offsets."""

    PRIOR_PROB = 0.01

    def __init__(self, store: ParamStore, name: str, dim: int, rng: np.random.Generator):
        self.cls1 = Conv1d(store, f"{name}.cls1", dim, dim, rng)
        self.cls2 = Conv1d(store, f"{name}.cls2", dim, 1, rng)
        self.reg1 = Conv1d(store, f"{name}.reg1", dim, dim, rng)
        self.reg2 = Conv1d(store, f"{name}.reg2", dim, 2, rng)
        # bias the confidence toward the negative class at init
        self.cls2.b.data[:] = -np.log((1.0 - self.PRIOR_PROB) / self.PRIOR_PROB)

    def __call__(self, feats: list[Tensor], masks: list[np.ndarray]) -> PyramidOutputs:
        confidences, offsets, anchors, valid = [], [], [], []
        for level, (x, m) in enumerate(zip(feats, masks)):
            mf = m[..., None].astype(np.float64)
            c = ag.sigmoid(self.cls2(ag.gelu(self.cls1(x * mf)) * mf))
            o = ag.softplus(self.reg2(ag.gelu(self.reg1(x * mf)) * mf))
            confidences.append(c.reshape(c.shape[0], c.shape[1]))
            offsets.append(o)
            anchors.append(AnchorGrid(level=level, length=x.shape[1]))
            valid.append(m)
        return PyramidOutputs(features=feats, confidences=confidences,
                              offsets=offsets, anchors=anchors, valid=valid)
