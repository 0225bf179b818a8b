"""Neural building blocks on top of the autograd tape.

Blocks register their parameters in a ParamStore under a dotted prefix and
are pure functions of (inputs, store state) afterwards. Residual blocks are
pre-norm. Feedforward hidden width is fixed at HIDDEN_RATIO * dim.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from . import kernels
from .autograd import Tensor
from .params import ParamStore

HIDDEN_RATIO = 2
NEG_MASK = -1e9


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: dim // 2])
    return table


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = store.add(f"{name}.w", xavier_uniform(rng, d_in, d_out, (d_in, d_out)))
        self.b = store.add(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.g = store.add(f"{name}.g", np.ones(dim))
        self.b = store.add(f"{name}.b", np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / ag.sqrt(var + self.eps) * self.g + self.b


class FFN:
    def __init__(self, store: ParamStore, name: str, dim: int, rng: np.random.Generator):
        hidden = HIDDEN_RATIO * dim
        self.fc1 = Linear(store, f"{name}.fc1", dim, hidden, rng)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class MultiheadAttention:
    """Scaled dot-product attention with a key mask.

    If a query row has no valid key, its attention term is exactly zero
    (the surrounding residual then passes through untouched).
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim, self.heads, self.hd = dim, heads, dim // heads
        self.wq = Linear(store, f"{name}.q", dim, dim, rng)
        self.wk = Linear(store, f"{name}.k", dim, dim, rng)
        self.wv = Linear(store, f"{name}.v", dim, dim, rng)
        self.wo = Linear(store, f"{name}.o", dim, dim, rng)

    def __call__(self, q: Tensor, kv: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        B, Tq, _ = q.shape
        Tk = kv.shape[1]
        H, hd = self.heads, self.hd

        def split(x: Tensor, T: int) -> Tensor:
            return x.reshape(B, T, H, hd).swapaxes(1, 2)

        qh = split(self.wq(q), Tq)
        kh = split(self.wk(kv), Tk)
        vh = split(self.wv(kv), Tk)
        logits = (qh @ kh.swapaxes(-1, -2)) * (1.0 / np.sqrt(hd))
        if key_mask is not None:
            bias = np.where(key_mask, 0.0, NEG_MASK)[:, None, None, :]
            logits = logits + bias
        attn = ag.softmax(logits, axis=-1)
        ctx = (attn @ vh).swapaxes(1, 2).reshape(B, Tq, self.dim)
        out = self.wo(ctx)
        if key_mask is not None:
            any_valid = key_mask.any(axis=-1).astype(np.float64)[:, None, None]
            out = out * any_valid
        return out


class SelfAttnLayer:
    """Pre-norm transformer layer: x + SA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiheadAttention(store, f"{name}.attn", dim, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.ffn = FFN(store, f"{name}.ffn", dim, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, key_mask=mask)
        return x + self.ffn(self.ln2(x))


class CrossAttnLayer:
    """Pre-norm cross-attention layer: q + CA(LN(q), kv), then + FFN."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiheadAttention(store, f"{name}.attn", dim, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.ffn = FFN(store, f"{name}.ffn", dim, rng)

    def __call__(self, q: Tensor, kv: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        q = q + self.attn(self.ln1(q), kv, key_mask=key_mask)
        return q + self.ffn(self.ln2(q))


class Conv1d:
    """Same-padded 1-D convolution over [B, T, C_in] -> [B, T, C_out]."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, kernel: int = 3):
        self.kernel = kernel
        fan = d_in * kernel
        self.w = store.add(f"{name}.w", xavier_uniform(rng, fan, d_out, (kernel, d_in, d_out)))
        self.b = store.add(f"{name}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        pad = self.kernel // 2
        zeros = Tensor(np.zeros((B, pad, x.shape[2])))
        xp = ag.concat([zeros, x, zeros], axis=1)
        out = None
        for k in range(self.kernel):
            term = xp[:, k:k + T, :] @ self.w[k]
            out = term if out is None else out + term
        return out + self.b


class DepthwiseConv1d:
    """Depthwise 1-D convolution with stride, used for pyramid downsampling."""

    def __init__(self, store: ParamStore, name: str, dim: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 2):
        self.kernel, self.stride = kernel, stride
        self.w = store.add(f"{name}.w", rng.uniform(-1, 1, (kernel, dim)) / np.sqrt(kernel))
        self.b = store.add(f"{name}.b", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        B, T, D = x.shape
        pad = self.kernel // 2
        t_out = (T + 2 * pad - self.kernel) // self.stride + 1
        zeros = Tensor(np.zeros((B, pad, D)))
        xp = ag.concat([zeros, x, zeros], axis=1)
        out = None
        for k in range(self.kernel):
            stop = k + self.stride * (t_out - 1) + 1
            term = xp[:, k:stop:self.stride, :] * self.w[k]
            out = term if out is None else out + term
        return out + self.b


def ssm_scan(dA: Tensor, dBx: Tensor, C: Tensor) -> Tensor:
    """Autograd primitive wrapping the scan kernels (numba or numpy path)."""
    dA_c = np.ascontiguousarray(dA.data)
    dBx_c = np.ascontiguousarray(dBx.data)
    C_c = np.ascontiguousarray(C.data)
    y, h_all = kernels.ssm_scan_forward(dA_c, dBx_c, C_c)

    def vjp(g):
        return kernels.ssm_scan_backward(dA_c, h_all, C_c, np.ascontiguousarray(g))

    return Tensor.from_op(y, (dA, dBx, C), vjp)


class BiMamba:
    """Bidirectional selective state-space mixer.

    Per direction: data-dependent (dt, B, C) from linear maps of the input,
    discretized as exp(dt*A) and dt*B, scanned over time. The backward
    direction runs on the flipped sequence; outputs are averaged, gated by
    a sigmoid of the input, and linearly projected.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, state: int,
                 rng: np.random.Generator, tie_directions: bool = False):
        self.dim, self.state = dim, state
        self.tied = tie_directions
        directions = ("fwd",) if tie_directions else ("fwd", "bwd")
        self.dir_params = {}
        for d in directions:
            p = {
                "w_dt": store.add(f"{name}.{d}.w_dt", rng.uniform(-0.1, 0.1, (dim, dim))),
                "b_dt": store.add(f"{name}.{d}.b_dt", _dt_bias_init(rng, dim)),
                "w_b": store.add(f"{name}.{d}.w_b", xavier_uniform(rng, dim, state, (dim, state))),
                "w_c": store.add(f"{name}.{d}.w_c", xavier_uniform(rng, dim, state, (dim, state))),
                "a_log": store.add(f"{name}.{d}.a_log",
                                   np.tile(np.log(np.arange(1, state + 1, dtype=np.float64)), (dim, 1))),
            }
            self.dir_params[d] = p
        if tie_directions:
            self.dir_params["bwd"] = self.dir_params["fwd"]
        self.gate = Linear(store, f"{name}.gate", dim, dim, rng)
        self.proj = Linear(store, f"{name}.proj", dim, dim, rng)

    def _direction(self, x: Tensor, which: str) -> Tensor:
        p = self.dir_params[which]
        B, T, D = x.shape
        dt = ag.softplus(x @ p["w_dt"] + p["b_dt"])
        Bm = x @ p["w_b"]
        Cm = x @ p["w_c"]
        A = -ag.exp(p["a_log"])
        dA = ag.exp(dt.reshape(B, T, D, 1) * A)
        dBx = (dt * x).reshape(B, T, D, 1) * Bm.reshape(B, T, 1, self.state)
        return ssm_scan(dA, dBx, Cm)

    def __call__(self, x: Tensor) -> Tensor:
        y_f = self._direction(x, "fwd")
        y_b = self._direction(x.flip(1), "bwd").flip(1)
        y = (y_f + y_b) * 0.5
        g = ag.sigmoid(self.gate(x))
        return self.proj(y * g)


def _dt_bias_init(rng: np.random.Generator, dim: int) -> np.ndarray:
    # softplus(b) spread across [1e-3, 1e-1], the usual ssm step-size band
    lo = np.log(np.expm1(1e-3))
    hi = np.log(np.expm1(1e-1))
    return rng.uniform(lo, hi, dim)


class MixerBlock:
    """x + MLP(BiMamba(x)): the video self-mixing sub-block of a fusion layer."""

    def __init__(self, store: ParamStore, name: str, dim: int, state: int,
                 rng: np.random.Generator, tie_directions: bool = False):
        self.mamba = BiMamba(store, f"{name}.mamba", dim, state, rng, tie_directions)
        self.mlp = FFN(store, f"{name}.mlp", dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.mlp(self.mamba(x))
