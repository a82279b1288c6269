"""Deterministic dense-tensor kernels for the toy generative models.

Everything computes in FP32. Reductions that feed autoregressive state
(matmul, softmax denominators) accumulate strictly left-to-right so that
incremental decoding and batched recomputation produce bit-identical
results: appending exact zeros (masked attention terms) to a left-to-right
accumulation never changes the value, and each output row depends only on
its own inputs, never on how many rows are processed together.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, NumericError, StateError

F32 = np.float32

_GELU_K0 = np.float32(math.sqrt(2.0 / math.pi))
_GELU_K1 = np.float32(0.044715)
_HALF = np.float32(0.5)
_ONE = np.float32(1.0)


def _as_f32(x) -> np.ndarray:
    a = np.asarray(x)
    return a if a.dtype == np.float32 else a.astype(np.float32)


def matmul(a, b) -> np.ndarray:
    """FP32 matrix product with fixed left-to-right accumulation.

    Accepts matching leading batch dimensions: (..., m, k) @ (..., k, n).
    The inner dimension is reduced one term at a time in index order, so
    the result for each output element is exactly what a naive scalar
    triple loop in FP32 would produce.
    """
    a = _as_f32(a)
    b = _as_f32(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.zeros(lead + (a.shape[-2], b.shape[-1]), dtype=F32)
    tmp = np.empty_like(out)
    for t in range(a.shape[-1]):
        np.multiply(a[..., :, t : t + 1], b[..., t : t + 1, :], out=tmp)
        np.add(out, tmp, out=out)
    return out


def _sum_last(x: np.ndarray) -> np.ndarray:
    """Left-to-right sum over the last axis, keepdims."""
    out = np.zeros(x.shape[:-1], dtype=F32)
    for t in range(x.shape[-1]):
        np.add(out, x[..., t], out=out)
    return out[..., None]


def softmax(x) -> np.ndarray:
    """Softmax over the last axis with max-subtraction.

    -inf entries (attention masking) contribute exact zeros and therefore
    never perturb the remaining probabilities.
    """
    x = _as_f32(x)
    if x.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    if np.isnan(x).any():
        raise NumericError("softmax: NaN input")
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / _sum_last(e)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = _as_f32(x)
    gamma = _as_f32(gamma)
    beta = _as_f32(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine params must have shape ({d},)")
    mean = np.mean(x, axis=-1, keepdims=True, dtype=F32)
    c = x - mean
    var = np.mean(c * c, axis=-1, keepdims=True, dtype=F32)
    inv = _ONE / np.sqrt(var + np.float32(eps))
    return c * inv * gamma + beta


def gelu(x) -> np.ndarray:
    """GELU, tanh approximation, all constants pinned to FP32."""
    x = _as_f32(x)
    inner = _GELU_K0 * (x + _GELU_K1 * (x * x * x))
    return _HALF * x * (_ONE + np.tanh(inner))


def seeded_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Weight draw: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], FP32."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(F32)


class KvCache:
    """Per-attention-block key/value store for one session.

    Preallocated to max_len so appends never reallocate; a cache instance
    must only ever be touched by one session.
    """

    def __init__(self, n_heads: int, head_dim: int, max_len: int):
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.max_len = max_len
        self._k = np.zeros((n_heads, max_len, head_dim), dtype=F32)
        self._v = np.zeros((n_heads, max_len, head_dim), dtype=F32)
        self.length = 0

    def append(self, k_new: np.ndarray, v_new: np.ndarray) -> None:
        expect = (self.n_heads, k_new.shape[1], self.head_dim)
        if k_new.shape != expect or v_new.shape != expect:
            raise StateError(f"kv append shape mismatch: {k_new.shape} vs {expect}")
        if k_new.dtype != np.float32 or v_new.dtype != np.float32:
            raise StateError("kv caches are FP32 only")
        r = k_new.shape[1]
        if self.length + r > self.max_len:
            raise StateError(f"kv cache overflow beyond max_len={self.max_len}")
        self._k[:, self.length : self.length + r] = k_new
        self._v[:, self.length : self.length + r] = v_new
        self.length += r

    @property
    def keys(self) -> np.ndarray:
        return self._k[:, : self.length]

    @property
    def values(self) -> np.ndarray:
        return self._v[:, : self.length]


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    r, d = x.shape
    return x.reshape(r, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, r, dh = x.shape
    return x.transpose(1, 0, 2).reshape(r, h * dh)


def causal_attention_fused(x, cache: KvCache, w_qkv, wo, n_heads: int) -> np.ndarray:
    """Multi-head causal attention over new rows ``x`` given cached history.

    ``w_qkv`` is the (D, 3D) concatenation of the query/key/value projections;
    one fused product yields bit-identical columns to three separate ones
    because left-to-right accumulation is independent per output column.
    Appends the new keys/values to ``cache`` and returns outputs for the new
    rows only. Processing r rows in one call is bit-identical to stepping
    them one at a time.
    """
    x = _as_f32(x)
    if x.ndim != 2:
        raise DimensionError(f"attention input must be (rows, dim), got {x.shape}")
    r, d = x.shape
    if d % n_heads != 0:
        raise DimensionError(f"dim {d} not divisible by {n_heads} heads")
    qkv = matmul(x, w_qkv)
    q = _split_heads(qkv[:, :d], n_heads)
    k = _split_heads(qkv[:, d : 2 * d], n_heads)
    v = _split_heads(qkv[:, 2 * d :], n_heads)
    prior = cache.length
    cache.append(np.ascontiguousarray(k), np.ascontiguousarray(v))
    keys = cache.keys  # (H, prior + r, dh)
    vals = cache.values
    scale = np.float32(1.0 / math.sqrt(d // n_heads))
    scores = matmul(q, keys.transpose(0, 2, 1)) * scale
    if r > 1:
        # row j sits at absolute position prior + j and may attend up to it
        total = prior + r
        allowed = np.arange(total)[None, :] <= (prior + np.arange(r))[:, None]
        scores = np.where(allowed[None, :, :], scores, np.float32(-np.inf))
    attn = softmax(scores)
    ctx = _merge_heads(matmul(attn, vals))
    return matmul(ctx, wo)


def causal_attention(x, cache: KvCache, wq, wk, wv, wo, n_heads: int) -> np.ndarray:
    """Attention with separate projection matrices; see causal_attention_fused."""
    w_qkv = np.concatenate((_as_f32(wq), _as_f32(wk), _as_f32(wv)), axis=1)
    return causal_attention_fused(x, cache, w_qkv, wo, n_heads)


def causal_attention_step(q_row, cache: KvCache, wq, wk, wv, wo, n_heads: int):
    """Single-new-position attention step; returns (output row, cache)."""
    q_row = _as_f32(q_row)
    if q_row.shape[0] != 1:
        raise DimensionError(f"step expects one row, got {q_row.shape}")
    out = causal_attention(q_row, cache, wq, wk, wv, wo, n_heads)
    return out, cache
