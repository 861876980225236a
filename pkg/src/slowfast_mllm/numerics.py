"""Dense-tensor kernels for the decoder stack, with manual backward passes.

Tensors are plain numpy arrays (row-major). float64 is required wherever
gradients are checked against finite differences; float32 is fine for
forward-only use. Every exported op is a pure function and raises rather
than returning NaN/Inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeError",
    "NumericsError",
    "UsageError",
    "AttentionParams",
    "MhaCache",
    "MhaGrads",
    "matmul",
    "softmax_rows",
    "rms_norm",
    "mha_forward",
    "mha_forward_with_cache",
    "mha_backward",
    "finite_diff_grad",
    "grouped_attention_fwd",
    "grouped_attention_bwd",
    "rms_norm_fwd",
    "rms_norm_bwd",
    "rope_fwd",
    "rope_bwd",
    "swiglu_fwd",
    "swiglu_bwd",
]


class ShapeError(ValueError):
    """Tensor dimensions do not line up."""


class NumericsError(ArithmeticError):
    """An operation produced or received non-finite values."""


class UsageError(RuntimeError):
    """API misuse, e.g. backward called with a missing or mismatched cache."""


def _require_finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"{op}: non-finite values in result")
    return x


# ---------------------------------------------------------------------------
# Basic kernels
# ---------------------------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a [M,K] and b [K,N]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 inputs, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    return _require_finite(a @ b, "matmul")


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of x [M,N], stabilized by max subtraction."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank-2 input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericsError("softmax_rows: non-finite input")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return _require_finite(e / e.sum(axis=1, keepdims=True), "softmax_rows")


def rms_norm(x: np.ndarray, weight: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Scale each row of x [T,d] to unit root-mean-square, then multiply by weight [d]."""
    if eps <= 0:
        raise ValueError(f"rms_norm eps must be positive, got {eps}")
    out, _ = rms_norm_fwd(np.asarray(x), np.asarray(weight), eps)
    return _require_finite(out, "rms_norm")


def rms_norm_fwd(x: np.ndarray, weight: np.ndarray, eps: float = 1e-6):
    """x [T,d], weight [d] -> (out [T,d], cache)."""
    if x.ndim != 2 or weight.shape != (x.shape[1],):
        raise ShapeError(f"rms_norm: x {x.shape} incompatible with weight {weight.shape}")
    ms = np.mean(x * x, axis=1) + eps
    scale = ms**-0.5
    xhat = x * scale[:, None]
    return xhat * weight, (x, xhat, scale, weight)


def rms_norm_bwd(grad_out: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_weight) for rms_norm_fwd."""
    x, xhat, scale, weight = cache
    grad_weight = (grad_out * xhat).sum(axis=0)
    g_xhat = grad_out * weight
    # d/dx of x*scale with scale = (mean(x^2)+eps)^-1/2
    inner = np.mean(g_xhat * xhat, axis=1, keepdims=True)
    grad_x = scale[:, None] * (g_xhat - xhat * inner)
    return grad_x, grad_weight


def rope_fwd(x: np.ndarray, positions: np.ndarray, base: float = 10000.0):
    """Rotary position transform of x [T,H,dh] at integer positions [T].

    Rotate-half layout: the first dh/2 channels pair with the last dh/2.
    Returns (rotated, (cos, sin)).
    """
    T, H, dh = x.shape
    if dh % 2 != 0:
        raise ShapeError(f"rope requires even head_dim, got {dh}")
    half = dh // 2
    inv_freq = base ** (-np.arange(half, dtype=x.dtype) / half)
    angles = positions.astype(x.dtype)[:, None] * inv_freq[None, :]  # [T, half]
    cos = np.cos(angles)[:, None, :]  # [T,1,half]
    sin = np.sin(angles)[:, None, :]
    x1, x2 = x[..., :half], x[..., half:]
    out = np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1)
    return out, (cos, sin)


def rope_bwd(grad_out: np.ndarray, cache) -> np.ndarray:
    """Inverse rotation of the gradient (the transform is orthogonal)."""
    cos, sin = cache
    half = grad_out.shape[-1] // 2
    g1, g2 = grad_out[..., :half], grad_out[..., half:]
    return np.concatenate([g1 * cos + g2 * sin, g2 * cos - g1 * sin], axis=-1)


def swiglu_fwd(x: np.ndarray, w_gate: np.ndarray, w_up: np.ndarray, w_down: np.ndarray):
    """SwiGLU feed-forward: (silu(x@w_gate) * (x@w_up)) @ w_down. Returns (out, cache)."""
    a = x @ w_gate
    b = x @ w_up
    sig = 1.0 / (1.0 + np.exp(-a))
    s = a * sig
    out = (s * b) @ w_down
    return out, (x, a, b, sig, s, w_gate, w_up, w_down)


def swiglu_bwd(grad_out: np.ndarray, cache):
    """Returns (grad_x, grad_w_gate, grad_w_up, grad_w_down)."""
    x, a, b, sig, s, w_gate, w_up, w_down = cache
    sb = s * b
    grad_w_down = sb.T @ grad_out
    g_sb = grad_out @ w_down.T
    g_s = g_sb * b
    g_b = g_sb * s
    g_a = g_s * (sig * (1.0 + a * (1.0 - sig)))
    grad_w_gate = x.T @ g_a
    grad_w_up = x.T @ g_b
    grad_x = g_a @ w_gate.T + g_b @ w_up.T
    return grad_x, grad_w_gate, grad_w_up, grad_w_down


# ---------------------------------------------------------------------------
# Grouped multi-head attention core (shared by self- and cross-attention)
# ---------------------------------------------------------------------------


def grouped_attention_fwd(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, num_kv_groups: int, causal: bool
):
    """Attention over per-head tensors.

    q [Tq,H,dh]; k, v [Tk,KV,dh] with H == KV * num_kv_groups. Each KV head
    serves num_kv_groups consecutive query heads. Scores scaled by
    1/sqrt(dh). Returns (ctx [Tq,H,dh], weights [H,Tq,Tk], cache).
    """
    Tq, H, dh = q.shape
    Tk, KV, _ = k.shape
    if KV * num_kv_groups != H:
        raise ShapeError(f"head grouping mismatch: {H} query heads, {KV} kv heads, group {num_kv_groups}")
    if causal and Tq != Tk:
        raise ShapeError(f"causal mask requires Tq == Tk, got {Tq} vs {Tk}")
    kexp = np.repeat(k, num_kv_groups, axis=1)  # [Tk,H,dh]
    vexp = np.repeat(v, num_kv_groups, axis=1)
    scale = 1.0 / math.sqrt(dh)
    scores = np.einsum("qhd,khd->hqk", q, kexp) * scale
    if causal:
        mask = np.triu(np.ones((Tq, Tk), dtype=bool), k=1)
        scores = np.where(mask[None, :, :], -np.inf, scores)
    shifted = scores - scores.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=2, keepdims=True)
    ctx = np.einsum("hqk,khd->qhd", weights, vexp)
    cache = (q, k, v, weights, num_kv_groups, scale)
    return ctx, weights, cache


def grouped_attention_bwd(grad_ctx: np.ndarray, cache):
    """Returns (grad_q, grad_k, grad_v) for grouped_attention_fwd."""
    q, k, v, weights, groups, scale = cache
    Tk, KV, dh = k.shape
    kexp = np.repeat(k, groups, axis=1)
    vexp = np.repeat(v, groups, axis=1)
    g_weights = np.einsum("qhd,khd->hqk", grad_ctx, vexp)
    g_vexp = np.einsum("hqk,qhd->khd", weights, grad_ctx)
    g_scores = weights * (g_weights - (weights * g_weights).sum(axis=2, keepdims=True))
    grad_q = np.einsum("hqk,khd->qhd", g_scores, kexp) * scale
    g_kexp = np.einsum("hqk,qhd->khd", g_scores, q) * scale
    grad_k = g_kexp.reshape(Tk, KV, groups, dh).sum(axis=2)
    grad_v = g_vexp.reshape(Tk, KV, groups, dh).sum(axis=2)
    return grad_q, grad_k, grad_v


# ---------------------------------------------------------------------------
# Full multi-head attention op (projections included)
# ---------------------------------------------------------------------------


@dataclass
class AttentionParams:
    """Projection matrices and head layout for one attention module.

    w_q maps d -> num_heads*head_dim, w_k/w_v map d -> num_kv_heads*head_dim,
    w_o maps num_heads*head_dim -> d.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    num_heads: int
    num_kv_heads: int
    head_dim: int

    def __post_init__(self):
        if self.num_heads % self.num_kv_heads != 0:
            raise ShapeError(
                f"num_heads ({self.num_heads}) must be a multiple of num_kv_heads ({self.num_kv_heads})"
            )
        d = self.w_q.shape[0]
        expect = {
            "w_q": (d, self.num_heads * self.head_dim),
            "w_k": (d, self.num_kv_heads * self.head_dim),
            "w_v": (d, self.num_kv_heads * self.head_dim),
            "w_o": (self.num_heads * self.head_dim, d),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"AttentionParams.{name}: expected {shape}, got {got}")

    @property
    def groups(self) -> int:
        return self.num_heads // self.num_kv_heads

    @property
    def model_dim(self) -> int:
        return self.w_q.shape[0]


@dataclass
class MhaCache:
    q_input: np.ndarray
    kv_input: np.ndarray
    params: AttentionParams
    attn_cache: tuple
    ctx_flat: np.ndarray
    causal: bool
    out_shape: tuple = field(default=())


@dataclass
class MhaGrads:
    q_input: np.ndarray
    kv_input: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray


def mha_forward_with_cache(
    q_input: np.ndarray,
    kv_input: np.ndarray,
    params: AttentionParams,
    causal: bool = False,
):
    """Grouped multi-head attention with projections.

    q_input [Tq,d], kv_input [Tk,d] -> (output [Tq,d], weights [H,Tq,Tk], cache).
    Self-attention is the q_input is kv_input case with causal=True.
    """
    if q_input.ndim != 2 or kv_input.ndim != 2:
        raise ShapeError(f"mha inputs must be rank-2, got {q_input.shape} and {kv_input.shape}")
    d = params.model_dim
    if q_input.shape[1] != d or kv_input.shape[1] != d:
        raise ShapeError(
            f"mha input dim mismatch: q {q_input.shape}, kv {kv_input.shape}, params expect d={d}"
        )
    if q_input.shape[0] < 1 or kv_input.shape[0] < 1:
        raise ShapeError("mha requires Tq >= 1 and Tk >= 1")
    Tq, Tk = q_input.shape[0], kv_input.shape[0]
    H, KV, dh = params.num_heads, params.num_kv_heads, params.head_dim
    q = (q_input @ params.w_q).reshape(Tq, H, dh)
    k = (kv_input @ params.w_k).reshape(Tk, KV, dh)
    v = (kv_input @ params.w_v).reshape(Tk, KV, dh)
    ctx, weights, attn_cache = grouped_attention_fwd(q, k, v, params.groups, causal)
    ctx_flat = ctx.reshape(Tq, H * dh)
    output = ctx_flat @ params.w_o
    cache = MhaCache(q_input, kv_input, params, attn_cache, ctx_flat, causal, output.shape)
    return _require_finite(output, "mha_forward"), weights, cache


def mha_forward(
    q_input: np.ndarray,
    kv_input: np.ndarray,
    params: AttentionParams,
    causal: bool = False,
):
    """As mha_forward_with_cache but returning only (output, weights)."""
    output, weights, _ = mha_forward_with_cache(q_input, kv_input, params, causal)
    return output, weights


def mha_backward(grad_output: np.ndarray, cache: MhaCache) -> MhaGrads:
    """Exact reverse-mode gradients of mha_forward w.r.t. inputs and all projections."""
    if not isinstance(cache, MhaCache):
        raise UsageError("mha_backward needs the cache returned by mha_forward_with_cache")
    if grad_output.shape != cache.out_shape:
        raise UsageError(
            f"grad_output shape {grad_output.shape} does not match cached forward output {cache.out_shape}"
        )
    p = cache.params
    Tq, Tk = cache.q_input.shape[0], cache.kv_input.shape[0]
    H, KV, dh = p.num_heads, p.num_kv_heads, p.head_dim
    g_wo = cache.ctx_flat.T @ grad_output
    g_ctx = (grad_output @ p.w_o.T).reshape(Tq, H, dh)
    g_q, g_k, g_v = grouped_attention_bwd(g_ctx, cache.attn_cache)
    g_qflat = g_q.reshape(Tq, H * dh)
    g_kflat = g_k.reshape(Tk, KV * dh)
    g_vflat = g_v.reshape(Tk, KV * dh)
    g_wq = cache.q_input.T @ g_qflat
    g_wk = cache.kv_input.T @ g_kflat
    g_wv = cache.kv_input.T @ g_vflat
    g_q_input = g_qflat @ p.w_q.T
    g_kv_input = g_kflat @ p.w_k.T + g_vflat @ p.w_v.T
    return MhaGrads(g_q_input, g_kv_input, g_wq, g_wk, g_wv, g_wo)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f, p: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at parameter tensor p.

    grad_i = (f(p + eps*e_i) - f(p - eps*e_i)) / (2*eps). f must not mutate
    its argument. eps restricted to [1e-7, 1e-3] (the useful float64 window).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"finite_diff_grad eps must lie in [1e-7, 1e-3], got {eps}")
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros_like(p)
    work = p.copy()
    for i in range(p.size):
        orig = work.flat[i]
        work.flat[i] = orig + eps
        f_plus = float(f(work))
        work.flat[i] = orig - eps
        f_minus = float(f(work))
        work.flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericsError(f"finite_diff_grad: non-finite evaluation at index {i}")
        grad.flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad
