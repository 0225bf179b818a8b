"""Text and object encoders.

The text encoder is a linear projection plus a stack of self-attention
layers over query tokens. The object encoder refines per-clip object slots
against the query: slots attend to query tokens only, never to each other,
so every slot is an independent function of (its input, the query).
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .nn import CrossAttnLayer, Linear, ParamStore, SelfAttnLayer, sinusoidal_positions


class TextEncoder:
    def __init__(self, store: ParamStore, name: str, d_token: int, dim: int,
                 heads: int, layers: int, rng: np.random.Generator,
                 use_positions: bool = True):
        self.proj = Linear(store, f"{name}.proj", d_token, dim, rng)
        self.layers = [SelfAttnLayer(store, f"{name}.layer{i}", dim, heads, rng)
                       for i in range(layers)]
        self.use_positions = use_positions
        self.dim = dim

    def __call__(self, tokens: Tensor, mask: np.ndarray) -> Tensor:
        """tokens [B, L, d_token], mask [B, L] -> [B, L, dim]."""
        x = self.proj(tokens)
        if self.use_positions:
            x = x + Tensor(sinusoidal_positions(tokens.shape[1], self.dim))
        for layer in self.layers:
            x = layer(x, mask=mask)
        return x


class ObjectEncoder:
    def __init__(self, store: ParamStore, name: str, d_obj: int, dim: int,
                 heads: int, layers: int, rng: np.random.Generator):
        self.proj = Linear(store, f"{name}.proj", d_obj, dim, rng)
        self.layers = [CrossAttnLayer(store, f"{name}.layer{i}", dim, heads, rng)
                       for i in range(layers)]

    def __call__(self, bank_features: Tensor, bank_mask: np.ndarray,
                 query: Tensor, query_mask: np.ndarray) -> Tensor:
        """bank [B, T, N_o, d_obj] + mask -> refined slots [B, T, N_o, dim].

        Slots are flattened into the attention query axis, which keeps them
        mutually independent by construction. Padded slots come out exactly
        zero after the final mask application.
        """
        B, T, N, _ = bank_features.shape
        x = self.proj(bank_features).reshape(B, T * N, -1)
        for layer in self.layers:
            x = layer(x, query, key_mask=query_mask)
        out = x.reshape(B, T, N, -1)
        return out * bank_mask[..., None].astype(np.float64)
