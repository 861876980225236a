"""Straight-line reference implementations used as independent oracles.

These deliberately re-derive each result with plain loops from the written
contracts, sharing no code with the production paths they check. They are
slow and only run at test scale.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import AttentionParams


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.result_type(a, b))
    for i in range(m):
        for j in range(n):
            for kk in range(k):
                out[i, j] += a[i, kk] * b[kk, j]
    return out


def rms_norm_loops(x: np.ndarray, weight: np.ndarray, eps: float) -> np.ndarray:
    out = np.zeros_like(x)
    t, d = x.shape
    for i in range(t):
        ms = sum(float(v) * float(v) for v in x[i]) / d
        s = 1.0 / math.sqrt(ms + eps)
        for j in range(d):
            out[i, j] = x[i, j] * s * weight[j]
    return out


def spatial_pool_loops(data: np.ndarray) -> np.ndarray:
    n, c, h, w = data.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=data.dtype)
    for f in range(n):
        for ch in range(c):
            for y in range(h // 2):
                for x in range(w // 2):
                    block_sum = (
                        data[f, ch, 2 * y, 2 * x]
                        + data[f, ch, 2 * y, 2 * x + 1]
                        + data[f, ch, 2 * y + 1, 2 * x]
                        + data[f, ch, 2 * y + 1, 2 * x + 1]
                    )
                    out[f, ch, y, x] = block_sum / 4.0
    return out


def adaptive_pool_loops(frames: np.ndarray, out_count: int) -> np.ndarray:
    n = frames.shape[0]
    out = np.zeros((out_count,) + frames.shape[1:], dtype=frames.dtype)
    for i in range(out_count):
        lo = math.floor(i * n / out_count)
        hi = math.ceil((i + 1) * n / out_count)
        acc = frames[lo].copy()
        for j in range(lo + 1, hi):
            acc = acc + frames[j]
        out[i] = acc / (hi - lo)
    return out


def compress_fast_straightline(
    data: np.ndarray, sample_stride: int, pool_stride: int, min_fast: int
) -> np.ndarray:
    """The four compression steps written out linearly: zero-pad the frame
    axis to a multiple of sample_stride*pool_stride, take
    max(n_padded//sample_stride, min_fast) uniform indices floor(i*n'/n''),
    adaptively average-pool time down to max(n''//pool_stride, min_fast)
    (never above n''), flatten frame-major then row-major."""
    n, c, h, w = data.shape
    block = sample_stride * pool_stride
    n_padded = n if n % block == 0 else n + block - (n % block)
    padded = np.zeros((n_padded, c, h, w), dtype=data.dtype)
    padded[:n] = data
    n_sampled = max(n_padded // sample_stride, min_fast)
    sampled = np.stack([padded[(i * n_padded) // n_sampled] for i in range(n_sampled)])
    out_count = min(max(n_sampled // pool_stride, min_fast), n_sampled)
    pooled = sampled.copy() if out_count == n_sampled else adaptive_pool_loops(sampled, out_count)
    tokens = np.zeros((out_count * h * w, c), dtype=data.dtype)
    t = 0
    for f in range(out_count):
        for y in range(h):
            for x in range(w):
                tokens[t] = pooled[f, :, y, x]
                t += 1
    return tokens


def mha_per_head_loops(
    q_input: np.ndarray, kv_input: np.ndarray, params: AttentionParams, causal: bool
):
    """Naive per-head attention: explicit loops over heads and positions."""
    Tq, Tk = q_input.shape[0], kv_input.shape[0]
    H, KV, dh = params.num_heads, params.num_kv_heads, params.head_dim
    groups = H // KV
    q = q_input @ params.w_q
    k = kv_input @ params.w_k
    v = kv_input @ params.w_v
    weights = np.zeros((H, Tq, Tk))
    ctx = np.zeros((Tq, H * dh))
    for h in range(H):
        kv_head = h // groups
        qh = q[:, h * dh : (h + 1) * dh]
        kh = k[:, kv_head * dh : (kv_head + 1) * dh]
        vh = v[:, kv_head * dh : (kv_head + 1) * dh]
        for i in range(Tq):
            scores = np.array(
                [
                    -np.inf if (causal and j > i) else float(qh[i] @ kh[j]) / math.sqrt(dh)
                    for j in range(Tk)
                ]
            )
            shifted = scores - scores.max()
            e = np.exp(shifted)
            w = e / e.sum()
            weights[h, i] = w
            for j in range(Tk):
                ctx[i, h * dh : (h + 1) * dh] += w[j] * vh[j]
    return ctx @ params.w_o, weights
