"""Decoder stack with gated cross-attention hybrid layers.

Host layers are standard pre-norm decoder layers (RMSNorm, grouped-query
self-attention with rotary positions, SwiGLU feed-forward). A hybrid layer
adds a parallel cross-attention branch between self-attention and the FFN:
text queries are re-used from the self-attention projection (post-rotary) and
attend over normalized slow visual tokens projected by dedicated key/value
matrices; the branch output is merged back through a per-token gate scaled by
a warm-up scalar that starts at zero. The stand-alone variants insert the
gated cross-attention as a separate decoder layer instead.

All forwards return (state, cache); backwards consume the cache and produce
exact reverse-mode gradients keyed by dotted parameter names.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .numerics import (
    AttentionParams,
    ShapeError,
    UsageError,
    grouped_attention_bwd,
    grouped_attention_fwd,
    rms_norm_bwd,
    rms_norm_fwd,
    rope_bwd,
    rope_fwd,
    swiglu_bwd,
    swiglu_fwd,
)

RMS_EPS = 1e-6
INIT_STD = 0.02


class Segment(IntEnum):
    FAST_VISUAL = 0
    TEXT = 1


class GateMode(str, Enum):
    STATIC = "static"
    TOKEN_DYNAMIC = "token_dynamic"
    CHANNEL_DYNAMIC = "channel_dynamic"


class QueryMode(str, Enum):
    ALL = "all"
    VISUAL_ONLY = "visual_only"
    TEXT_ONLY = "text_only"


class Integration(str, Enum):
    HYBRID = "hybrid"
    STANDALONE_FFN = "standalone_ffn"
    STANDALONE_NOFFN = "standalone_noffn"


class InitMode(str, Enum):
    RANDOM = "random"
    SHARE = "share"
    COPY = "copy"


# ---------------------------------------------------------------------------
# Sequence types
# ---------------------------------------------------------------------------


@dataclass
class SequenceLayout:
    """Per-position segment labels for the LLM input sequence."""

    labels: np.ndarray  # int8, values from Segment

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.ndim != 1:
            raise ShapeError(f"layout labels must be rank-1, got {self.labels.shape}")

    @property
    def total_len(self) -> int:
        return int(self.labels.shape[0])

    def rows(self, mode: QueryMode) -> np.ndarray:
        if mode == QueryMode.ALL:
            return np.arange(self.total_len)
        want = Segment.TEXT if mode == QueryMode.TEXT_ONLY else Segment.FAST_VISUAL
        return np.flatnonzero(self.labels == want)


@dataclass
class HiddenState:
    x: np.ndarray  # [T, d]
    layout: SequenceLayout

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] != self.layout.total_len:
            raise ShapeError(
                f"hidden state {self.x.shape} does not match layout length {self.layout.total_len}"
            )


def build_sequence(fast: np.ndarray, text: np.ndarray) -> HiddenState:
    """Concatenate [fast; text] token embeddings and label the positions.

    fast may be empty (pure cross-attention ablation); text may not.
    """
    fast = np.asarray(fast)
    text = np.asarray(text)
    if text.ndim != 2 or text.shape[0] < 1:
        raise ShapeError(f"need at least one text token, got text shape {text.shape}")
    if fast.size == 0:
        fast = fast.reshape(0, text.shape[1])
    if fast.ndim != 2 or fast.shape[1] != text.shape[1]:
        raise ShapeError(f"fast dim {fast.shape} incompatible with text dim {text.shape}")
    labels = np.concatenate(
        [
            np.full(fast.shape[0], Segment.FAST_VISUAL, dtype=np.int8),
            np.full(text.shape[0], Segment.TEXT, dtype=np.int8),
        ]
    )
    return HiddenState(np.concatenate([fast, text], axis=0), SequenceLayout(labels))


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class GateParams:
    """Gate on the cross-attention skip connection.

    STATIC uses the warm-up scalar alone; the dynamic modes apply a linear
    layer + tanh per queried token (one value per token, or per channel) and
    multiply by the warm-up scalar.
    """

    mode: GateMode
    w_gate: np.ndarray | None  # [d, 1] token-wise, [d, d] channel-wise, None static
    b_gate: np.ndarray | None
    warmup: float = 0.0

    def gate_out_dim(self, d: int) -> int:
        if self.mode == GateMode.TOKEN_DYNAMIC:
            return 1
        if self.mode == GateMode.CHANNEL_DYNAMIC:
            return d
        return 0


@dataclass
class LayerParams:
    """One pretrained decoder layer: shared input norm, self-attention,
    post-attention norm, SwiGLU feed-forward."""

    input_norm_w: np.ndarray
    attn: AttentionParams
    post_norm_w: np.ndarray
    ffn_gate_w: np.ndarray
    ffn_up_w: np.ndarray
    ffn_down_w: np.ndarray


@dataclass
class HybridLayerParams:
    """Cross-attention add-ons riding on a host decoder layer."""

    host: LayerParams
    xattn_wk: np.ndarray
    xattn_wv: np.ndarray
    gate: GateParams
    init_mode: InitMode


@dataclass
class StandaloneLayerParams:
    """A separate inserted decoder layer holding the cross-attention."""

    norm_w: np.ndarray
    attn: AttentionParams  # fresh q/k/v/o for the cross-attention
    gate: GateParams
    query_mode: QueryMode
    with_ffn: bool
    init_mode: InitMode
    ffn_norm_w: np.ndarray | None = None
    ffn_gate_w: np.ndarray | None = None
    ffn_up_w: np.ndarray | None = None
    ffn_down_w: np.ndarray | None = None
    ffn_warmup: float = 0.0


@dataclass
class ModelConfig:
    num_layers: int
    hidden_dim: int
    num_heads: int
    num_kv_heads: int
    head_dim: int
    ffn_dim: int
    vocab_size: int
    hybrid_indices: tuple[int, ...] | None = None
    gate_mode: GateMode = GateMode.TOKEN_DYNAMIC
    query_mode: QueryMode = QueryMode.TEXT_ONLY
    integration: Integration = Integration.HYBRID
    init_mode: InitMode = InitMode.COPY

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "num_kv_heads", "head_dim", "ffn_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig.{name} must be >= 1")
        if self.num_heads % self.num_kv_heads != 0:
            raise ValueError("num_heads must be a multiple of num_kv_heads")
        if self.head_dim % 2 != 0:
            raise ValueError("head_dim must be even (rotary positions pair channels)")
        if self.hybrid_indices is None:
            # every 8th layer, which puts 4 hybrid layers at [0, 8, 16, 24] in a 28-layer stack
            self.hybrid_indices = tuple(range(0, self.num_layers, 8))
        self.hybrid_indices = tuple(int(i) for i in self.hybrid_indices)
        if list(self.hybrid_indices) != sorted(set(self.hybrid_indices)):
            raise ValueError(f"hybrid_indices must be strictly increasing, got {self.hybrid_indices}")
        if self.hybrid_indices and not (
            0 <= self.hybrid_indices[0] and self.hybrid_indices[-1] < self.num_layers
        ):
            raise ValueError(
                f"hybrid_indices {self.hybrid_indices} out of range for {self.num_layers} layers"
            )
        self.gate_mode = GateMode(self.gate_mode)
        self.query_mode = QueryMode(self.query_mode)
        self.integration = Integration(self.integration)
        self.init_mode = InitMode(self.init_mode)

    @property
    def q_dim(self) -> int:
        return self.num_heads * self.head_dim

    @property
    def kv_dim(self) -> int:
        return self.num_kv_heads * self.head_dim


@dataclass
class ModelParams:
    layers: list[LayerParams]
    hybrid: dict[int, HybridLayerParams]
    standalone: dict[int, StandaloneLayerParams]
    final_norm_w: np.ndarray
    unembed: np.ndarray  # [d, vocab]


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def init_cross_attn(
    host_attn: AttentionParams, mode: InitMode, seed: int
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Key/value projections for the cross branch: fresh random, aliased to the
    host self-attention storage, or an independent value copy.

    Returns (wk, wv, aliased).
    """
    mode = InitMode(mode)
    if mode == InitMode.SHARE:
        return host_attn.w_k, host_attn.w_v, True
    if mode == InitMode.COPY:
        return host_attn.w_k.copy(), host_attn.w_v.copy(), False
    rng = np.random.default_rng(seed)
    wk = rng.normal(0.0, INIT_STD, host_attn.w_k.shape).astype(host_attn.w_k.dtype)
    wv = rng.normal(0.0, INIT_STD, host_attn.w_v.shape).astype(host_attn.w_v.dtype)
    return wk, wv, False


def _init_gate(cfg: ModelConfig, rng: np.random.Generator, dtype) -> GateParams:
    if cfg.gate_mode == GateMode.STATIC:
        return GateParams(cfg.gate_mode, None, None, 0.0)
    g_out = 1 if cfg.gate_mode == GateMode.TOKEN_DYNAMIC else cfg.hidden_dim
    w = rng.normal(0.0, INIT_STD, (cfg.hidden_dim, g_out)).astype(dtype)
    b = np.zeros(g_out, dtype=dtype)
    return GateParams(cfg.gate_mode, w, b, 0.0)


def _init_from_host(source: np.ndarray, mode: InitMode, rng: np.random.Generator):
    if mode == InitMode.SHARE:
        return source
    if mode == InitMode.COPY:
        return source.copy()
    return rng.normal(0.0, INIT_STD, source.shape).astype(source.dtype)


def init_model_params(cfg: ModelConfig, seed: int, dtype=np.float64) -> ModelParams:
    """Seeded synthetic weights structured like the real model (no pretraining)."""
    rng = np.random.default_rng(seed)
    d, qd, kvd = cfg.hidden_dim, cfg.q_dim, cfg.kv_dim

    def w(*shape):
        return rng.normal(0.0, INIT_STD, shape).astype(dtype)

    layers = []
    for _ in range(cfg.num_layers):
        layers.append(
            LayerParams(
                input_norm_w=np.ones(d, dtype=dtype),
                attn=AttentionParams(
                    w(d, qd), w(d, kvd), w(d, kvd), w(qd, d),
                    cfg.num_heads, cfg.num_kv_heads, cfg.head_dim,
                ),
                post_norm_w=np.ones(d, dtype=dtype),
                ffn_gate_w=w(d, cfg.ffn_dim),
                ffn_up_w=w(d, cfg.ffn_dim),
                ffn_down_w=w(cfg.ffn_dim, d),
            )
        )
    final_norm_w = np.ones(d, dtype=dtype)
    unembed = w(d, cfg.vocab_size)

    hybrid: dict[int, HybridLayerParams] = {}
    standalone: dict[int, StandaloneLayerParams] = {}
    for idx in cfg.hybrid_indices:
        host = layers[idx]
        if cfg.integration == Integration.HYBRID:
            wk, wv, _ = init_cross_attn(host.attn, cfg.init_mode, seed=seed * 1000003 + idx)
            hybrid[idx] = HybridLayerParams(host, wk, wv, _init_gate(cfg, rng, dtype), cfg.init_mode)
        else:
            attn = AttentionParams(
                _init_from_host(host.attn.w_q, cfg.init_mode, rng),
                _init_from_host(host.attn.w_k, cfg.init_mode, rng),
                _init_from_host(host.attn.w_v, cfg.init_mode, rng),
                _init_from_host(host.attn.w_o, cfg.init_mode, rng),
                cfg.num_heads, cfg.num_kv_heads, cfg.head_dim,
            )
            with_ffn = cfg.integration == Integration.STANDALONE_FFN
            sp = StandaloneLayerParams(
                norm_w=np.ones(d, dtype=dtype),
                attn=attn,
                gate=_init_gate(cfg, rng, dtype),
                query_mode=cfg.query_mode,
                with_ffn=with_ffn,
                init_mode=cfg.init_mode,
            )
            if with_ffn:
                sp.ffn_norm_w = np.ones(d, dtype=dtype)
                sp.ffn_gate_w = _init_from_host(host.ffn_gate_w, cfg.init_mode, rng)
                sp.ffn_up_w = _init_from_host(host.ffn_up_w, cfg.init_mode, rng)
                sp.ffn_down_w = _init_from_host(host.ffn_down_w, cfg.init_mode, rng)
            standalone[idx] = sp
    return ModelParams(layers, hybrid, standalone, final_norm_w, unembed)


def set_all_warmups(params: ModelParams, value: float) -> None:
    """Force every warm-up scalar (cross-attention and stand-alone FFN gates)."""
    for hp in params.hybrid.values():
        hp.gate.warmup = value
    for sp in params.standalone.values():
        sp.gate.warmup = value
        sp.ffn_warmup = value


def is_cross_attention_param(name: str) -> bool:
    """True for parameters introduced by the cross-attention integration; the
    stage-1 training regime updates only these (host weights stay frozen)."""
    return name.startswith("hybrid.") or name.startswith("standalone.")


def named_param_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    """Every array-valued parameter keyed by its gradient name. Aliased
    entries (SHARE init) appear under each name with the same storage, so
    callers can detect sharing via object identity."""
    out: dict[str, np.ndarray] = {}
    for i, lp in enumerate(params.layers):
        out[f"layers.{i}.input_norm_w"] = lp.input_norm_w
        out[f"layers.{i}.attn.w_q"] = lp.attn.w_q
        out[f"layers.{i}.attn.w_k"] = lp.attn.w_k
        out[f"layers.{i}.attn.w_v"] = lp.attn.w_v
        out[f"layers.{i}.attn.w_o"] = lp.attn.w_o
        out[f"layers.{i}.post_norm_w"] = lp.post_norm_w
        out[f"layers.{i}.ffn_gate_w"] = lp.ffn_gate_w
        out[f"layers.{i}.ffn_up_w"] = lp.ffn_up_w
        out[f"layers.{i}.ffn_down_w"] = lp.ffn_down_w
    for i, hp in params.hybrid.items():
        out[f"hybrid.{i}.xattn_wk"] = hp.xattn_wk
        out[f"hybrid.{i}.xattn_wv"] = hp.xattn_wv
        if hp.gate.w_gate is not None:
            out[f"hybrid.{i}.gate.w_gate"] = hp.gate.w_gate
            out[f"hybrid.{i}.gate.b_gate"] = hp.gate.b_gate
    for i, sp in params.standalone.items():
        out[f"standalone.{i}.norm_w"] = sp.norm_w
        out[f"standalone.{i}.attn.w_q"] = sp.attn.w_q
        out[f"standalone.{i}.attn.w_k"] = sp.attn.w_k
        out[f"standalone.{i}.attn.w_v"] = sp.attn.w_v
        out[f"standalone.{i}.attn.w_o"] = sp.attn.w_o
        if sp.gate.w_gate is not None:
            out[f"standalone.{i}.gate.w_gate"] = sp.gate.w_gate
            out[f"standalone.{i}.gate.b_gate"] = sp.gate.b_gate
        if sp.with_ffn:
            out[f"standalone.{i}.ffn_norm_w"] = sp.ffn_norm_w
            out[f"standalone.{i}.ffn_gate_w"] = sp.ffn_gate_w
            out[f"standalone.{i}.ffn_up_w"] = sp.ffn_up_w
            out[f"standalone.{i}.ffn_down_w"] = sp.ffn_down_w
    out["final_norm_w"] = params.final_norm_w
    out["unembed"] = params.unembed
    return out


def collect_cross_attention(cache: StackCache) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-hybrid-layer (attention weights [H, n_rows, m], gate values
    [n_rows, g_out]) from a forward cache; static gates broadcast the
    warm-up scalar."""
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for kind, i, c in cache.entries:
        if kind not in ("hybrid", "standalone") or c.cross_cache is None:
            continue
        cc = c.cross_cache
        if cc.g_d is not None:
            gates = cc.g_d
        else:
            gates = np.full((cc.xattn.shape[0], 1), cc.warmup, dtype=cc.xattn.dtype)
        out[i] = (cc.weights, gates)
    return out


# ---------------------------------------------------------------------------
# Gate
# ---------------------------------------------------------------------------


def gate_values(text_hidden: np.ndarray, gate: GateParams):
    """Gate values for queried tokens: tanh(linear(x)) per token/channel, or
    the bare warm-up scalar for the static gate."""
    if gate.mode == GateMode.STATIC:
        return gate.warmup
    raw = text_hidden @ gate.w_gate + gate.b_gate
    return np.tanh(raw)


# ---------------------------------------------------------------------------
# Forward blocks (shared between layer kinds so the float op sequence of the
# host path is identical with and without a cross branch)
# ---------------------------------------------------------------------------


@dataclass
class _SelfAttnCache:
    x: np.ndarray
    norm_cache: tuple
    normed: np.ndarray
    q_rope_cache: tuple
    k_rope_cache: tuple
    attn_cache: tuple
    ctx_flat: np.ndarray
    weights: np.ndarray


def _self_attention_fwd(x: np.ndarray, host: LayerParams):
    T = x.shape[0]
    attn = host.attn
    normed, norm_cache = rms_norm_fwd(x, host.input_norm_w, RMS_EPS)
    q = (normed @ attn.w_q).reshape(T, attn.num_heads, attn.head_dim)
    k = (normed @ attn.w_k).reshape(T, attn.num_kv_heads, attn.head_dim)
    v = (normed @ attn.w_v).reshape(T, attn.num_kv_heads, attn.head_dim)
    positions = np.arange(T)
    q_rot, q_rope_cache = rope_fwd(q, positions)
    k_rot, k_rope_cache = rope_fwd(k, positions)
    ctx, weights, attn_cache = grouped_attention_fwd(q_rot, k_rot, v, attn.groups, causal=True)
    ctx_flat = ctx.reshape(T, attn.num_heads * attn.head_dim)
    x1 = x + ctx_flat @ attn.w_o
    cache = _SelfAttnCache(x, norm_cache, normed, q_rope_cache, k_rope_cache, attn_cache, ctx_flat, weights)
    return x1, normed, q_rot, cache


def _self_attention_bwd(g_x1: np.ndarray, g_qr_extra, g_normed_extra, cache: _SelfAttnCache, host: LayerParams):
    """g_x1 is the gradient at the post-residual point; extras come from a
    cross branch re-using the rotated queries / the normed hidden state."""
    attn = host.attn
    T = cache.x.shape[0]
    g_wo = cache.ctx_flat.T @ g_x1
    g_ctx = (g_x1 @ attn.w_o.T).reshape(T, attn.num_heads, attn.head_dim)
    g_q_rot, g_k_rot, g_v = grouped_attention_bwd(g_ctx, cache.attn_cache)
    if g_qr_extra is not None:
        g_q_rot = g_q_rot + g_qr_extra
    g_q = rope_bwd(g_q_rot, cache.q_rope_cache).reshape(T, -1)
    g_k = rope_bwd(g_k_rot, cache.k_rope_cache).reshape(T, -1)
    g_v = g_v.reshape(T, -1)
    g_normed = g_q @ attn.w_q.T + g_k @ attn.w_k.T + g_v @ attn.w_v.T
    if g_normed_extra is not None:
        g_normed = g_normed + g_normed_extra
    grads = {
        "attn.w_q": cache.normed.T @ g_q,
        "attn.w_k": cache.normed.T @ g_k,
        "attn.w_v": cache.normed.T @ g_v,
        "attn.w_o": g_wo,
    }
    g_x_norm, g_norm_w = rms_norm_bwd(g_normed, cache.norm_cache)
    grads["input_norm_w"] = g_norm_w
    return g_x1 + g_x_norm, grads


@dataclass
class _FfnCache:
    post_cache: tuple
    ffn_cache: tuple


def _ffn_block_fwd(x: np.ndarray, norm_w, wg, wu, wd):
    h, post_cache = rms_norm_fwd(x, norm_w, RMS_EPS)
    ffn, ffn_cache = swiglu_fwd(h, wg, wu, wd)
    return x + ffn, ffn, _FfnCache(post_cache, ffn_cache)


def _ffn_block_bwd(g_out: np.ndarray, cache: _FfnCache):
    g_h, g_wg, g_wu, g_wd = swiglu_bwd(g_out, cache.ffn_cache)
    g_x_norm, g_norm_w = rms_norm_bwd(g_h, cache.post_cache)
    grads = {"post_norm_w": g_norm_w, "ffn_gate_w": g_wg, "ffn_up_w": g_wu, "ffn_down_w": g_wd}
    return g_out + g_x_norm, grads


@dataclass
class _CrossBranchCache:
    rows: np.ndarray
    slow_normed: np.ndarray
    snorm_cache: tuple
    cattn_cache: tuple
    cctx_flat: np.ndarray
    xattn: np.ndarray
    weights: np.ndarray
    gate_in: np.ndarray
    g_d: np.ndarray | None
    warmup: float


def _cross_branch_fwd(
    q_rows: np.ndarray,  # [n_r, H, dh] queries at the selected rows
    gate_in: np.ndarray,  # [n_r, d] post-norm hidden at the selected rows
    slow: np.ndarray,
    norm_w: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    w_o: np.ndarray,
    gate: GateParams,
    groups: int,
    rows: np.ndarray,
):
    if slow is None or slow.ndim != 2 or slow.shape[0] == 0:
        shape = None if slow is None else slow.shape
        raise UsageError(f"cross-attention needs at least one slow token, got shape {shape}")
    m = slow.shape[0]
    n_r, H, dh = q_rows.shape
    slow_normed, snorm_cache = rms_norm_fwd(slow, norm_w, RMS_EPS)
    ck = (slow_normed @ wk).reshape(m, -1, dh)
    cv = (slow_normed @ wv).reshape(m, -1, dh)
    cctx, weights, cattn_cache = grouped_attention_fwd(q_rows, ck, cv, groups, causal=False)
    cctx_flat = cctx.reshape(n_r, H * dh)
    xattn = cctx_flat @ w_o
    if gate.mode == GateMode.STATIC:
        g_d = None
        merge = xattn * gate.warmup
    else:
        g_d = np.tanh(gate_in @ gate.w_gate + gate.b_gate)
        merge = xattn * g_d * gate.warmup
    cache = _CrossBranchCache(
        rows, slow_normed, snorm_cache, cattn_cache, cctx_flat, xattn, weights, gate_in, g_d, gate.warmup
    )
    return merge, cache


def _cross_branch_bwd(g_merge: np.ndarray, cache: _CrossBranchCache, wk, wv, w_o, gate: GateParams):
    """Returns (grads, g_q_rows, g_gate_in, g_slow, g_norm_w)."""
    n_r = cache.xattn.shape[0]
    grads: dict[str, np.ndarray] = {}
    if gate.mode == GateMode.STATIC:
        grads["gate.warmup"] = np.asarray((g_merge * cache.xattn).sum())
        g_xattn = g_merge * cache.warmup
        g_gate_in = None
    else:
        grads["gate.warmup"] = np.asarray((g_merge * cache.xattn * cache.g_d).sum())
        g_xattn = g_merge * cache.g_d * cache.warmup
        g_gd_full = g_merge * cache.xattn * cache.warmup
        if gate.mode == GateMode.TOKEN_DYNAMIC:
            g_gd = g_gd_full.sum(axis=1, keepdims=True)
        else:
            g_gd = g_gd_full
        g_raw = g_gd * (1.0 - cache.g_d * cache.g_d)
        grads["gate.w_gate"] = cache.gate_in.T @ g_raw
        grads["gate.b_gate"] = g_raw.sum(axis=0)
        g_gate_in = g_raw @ gate.w_gate.T
    grads["w_o"] = cache.cctx_flat.T @ g_xattn
    g_cctx = (g_xattn @ w_o.T).reshape(n_r, -1, cache.cattn_cache[0].shape[2])
    g_q_rows, g_ck, g_cv = grouped_attention_bwd(g_cctx, cache.cattn_cache)
    m = cache.slow_normed.shape[0]
    g_ck_flat = g_ck.reshape(m, -1)
    g_cv_flat = g_cv.reshape(m, -1)
    grads["wk"] = cache.slow_normed.T @ g_ck_flat
    grads["wv"] = cache.slow_normed.T @ g_cv_flat
    g_slow_normed = g_ck_flat @ wk.T + g_cv_flat @ wv.T
    g_slow, g_norm_w = rms_norm_bwd(g_slow_normed, cache.snorm_cache)
    return grads, g_q_rows, g_gate_in, g_slow, g_norm_w


# ---------------------------------------------------------------------------
# Layer forwards/backwards
# ---------------------------------------------------------------------------


@dataclass
class StandardLayerCache:
    host: LayerParams
    self_cache: _SelfAttnCache
    ffn_cache: _FfnCache
    out_shape: tuple


def standard_layer_forward(h: HiddenState, host: LayerParams):
    """Pre-norm self-attention + residual, pre-norm FFN + residual, causal mask."""
    x1, _, _, self_cache = _self_attention_fwd(h.x, host)
    out, _, ffn_cache = _ffn_block_fwd(x1, host.post_norm_w, host.ffn_gate_w, host.ffn_up_w, host.ffn_down_w)
    cache = StandardLayerCache(host, self_cache, ffn_cache, out.shape)
    return HiddenState(out, h.layout), cache


def standard_layer_backward(grad: np.ndarray, cache: StandardLayerCache):
    if not isinstance(cache, StandardLayerCache) or grad.shape != cache.out_shape:
        raise UsageError("standard_layer_backward: cache missing or grad shape mismatch")
    g_x1, ffn_grads = _ffn_block_bwd(grad, cache.ffn_cache)
    g_x, attn_grads = _self_attention_bwd(g_x1, None, None, cache.self_cache, cache.host)
    return {**attn_grads, **ffn_grads}, g_x


@dataclass
class HybridLayerCache:
    params: HybridLayerParams
    query_mode: QueryMode
    self_cache: _SelfAttnCache
    cross_cache: _CrossBranchCache | None
    merged: np.ndarray
    ffn_cache: _FfnCache
    out_shape: tuple


def hybrid_layer_forward(h: HiddenState, slow: np.ndarray, p: HybridLayerParams, cfg: ModelConfig):
    """Host decoder layer plus the parallel gated cross-attention branch.

    The shared input norm is applied to both the hidden states and the slow
    tokens; queries for the cross branch are the host self-attention's rotated
    queries at the rows selected by the query mode; the merge adds
    xattn * gate * warmup at those rows only, before the FFN sublayer.
    """
    x1, normed, q_rot, self_cache = _self_attention_fwd(h.x, p.host)
    rows = h.layout.rows(cfg.query_mode)
    cross_cache = None
    merged = x1
    if rows.size > 0:
        merge, cross_cache = _cross_branch_fwd(
            q_rot[rows], normed[rows], slow, p.host.input_norm_w,
            p.xattn_wk, p.xattn_wv, p.host.attn.w_o, p.gate, p.host.attn.groups, rows,
        )
        if p.gate.warmup != 0.0:
            merged = x1.copy()
            merged[rows] += merge
    out, _, ffn_cache = _ffn_block_fwd(
        merged, p.host.post_norm_w, p.host.ffn_gate_w, p.host.ffn_up_w, p.host.ffn_down_w
    )
    cache = HybridLayerCache(p, cfg.query_mode, self_cache, cross_cache, merged, ffn_cache, out.shape)
    return HiddenState(out, h.layout), cache


def hybrid_layer_backward(grad: np.ndarray, cache: HybridLayerCache):
    """Exact gradients for the hybrid layer; returns (grads, g_x, g_slow).

    grads keys: host params under host.*, new params as xattn_wk, xattn_wv,
    gate.w_gate, gate.b_gate, gate.warmup. Host gradients are always computed;
    trainability masking is the caller's concern.
    """
    if not isinstance(cache, HybridLayerCache) or grad.shape != cache.out_shape:
        raise UsageError("hybrid_layer_backward: cache missing or grad shape mismatch")
    p = cache.params
    g_merged, ffn_grads = _ffn_block_bwd(grad, cache.ffn_cache)
    grads: dict[str, np.ndarray] = {f"host.{k}": v for k, v in ffn_grads.items()}
    g_x1 = g_merged
    g_qr_extra = None
    g_normed_extra = None
    g_slow = None
    if cache.cross_cache is not None:
        cc = cache.cross_cache
        cgrads, g_q_rows, g_gate_in, g_slow, g_norm_w_slow = _cross_branch_bwd(
            g_merged[cc.rows], cc, p.xattn_wk, p.xattn_wv, p.host.attn.w_o, p.gate
        )
        grads["xattn_wk"] = cgrads["wk"]
        grads["xattn_wv"] = cgrads["wv"]
        for key in ("gate.warmup", "gate.w_gate", "gate.b_gate"):
            if key in cgrads:
                grads[key] = cgrads[key]
        grads["host.attn.w_o"] = cgrads["w_o"]  # accumulated with self path below
        T = cache.self_cache.x.shape[0]
        attn = p.host.attn
        g_qr_extra = np.zeros((T, attn.num_heads, attn.head_dim), dtype=grad.dtype)
        g_qr_extra[cc.rows] = g_q_rows
        if g_gate_in is not None:
            g_normed_extra = np.zeros_like(cache.self_cache.normed)
            g_normed_extra[cc.rows] = g_gate_in
        grads["host.input_norm_w"] = g_norm_w_slow  # shared norm: slow-side contribution
    g_x, attn_grads = _self_attention_bwd(g_x1, g_qr_extra, g_normed_extra, cache.self_cache, p.host)
    for k, v in attn_grads.items():
        key = f"host.{k}"
        grads[key] = grads[key] + v if key in grads else v
    if g_slow is None:
        g_slow = np.zeros((0, cache.self_cache.x.shape[1]), dtype=grad.dtype)
    return grads, g_x, g_slow


@dataclass
class StandaloneLayerCache:
    params: StandaloneLayerParams
    norm_cache: tuple
    normed: np.ndarray
    cross_cache: _CrossBranchCache | None
    x1: np.ndarray
    ffn_out: np.ndarray | None
    ffn_cache: _FfnCache | None
    out_shape: tuple


def standalone_xattn_layer_forward(h: HiddenState, slow: np.ndarray, p: StandaloneLayerParams, with_ffn: bool):
    """Inserted decoder layer: norm -> cross-attention with its own query
    projection (no rotary; slow tokens carry no positions) -> gated residual ->
    optional FFN sublayer behind its own warm-up scalar."""
    x = h.x
    T = x.shape[0]
    attn = p.attn
    normed, norm_cache = rms_norm_fwd(x, p.norm_w, RMS_EPS)
    rows = h.layout.rows(p.query_mode)
    cross_cache = None
    x1 = x
    if rows.size > 0:
        q_rows = (normed[rows] @ attn.w_q).reshape(rows.size, attn.num_heads, attn.head_dim)
        merge, cross_cache = _cross_branch_fwd(
            q_rows, normed[rows], slow, p.norm_w, attn.w_k, attn.w_v, attn.w_o,
            p.gate, attn.groups, rows,
        )
        if p.gate.warmup != 0.0:
            x1 = x.copy()
            x1[rows] += merge
    ffn_out = None
    ffn_cache = None
    out = x1
    if with_ffn:
        _, ffn_out, ffn_cache = _ffn_block_fwd(x1, p.ffn_norm_w, p.ffn_gate_w, p.ffn_up_w, p.ffn_down_w)
        if p.ffn_warmup != 0.0:
            out = x1 + ffn_out * p.ffn_warmup
    cache = StandaloneLayerCache(p, norm_cache, normed, cross_cache, x1, ffn_out, ffn_cache, out.shape)
    return HiddenState(out, h.layout), cache


def standalone_layer_backward(grad: np.ndarray, cache: StandaloneLayerCache):
    if not isinstance(cache, StandaloneLayerCache) or grad.shape != cache.out_shape:
        raise UsageError("standalone_layer_backward: cache missing or grad shape mismatch")
    p = cache.params
    grads: dict[str, np.ndarray] = {}
    g_x1 = grad
    if cache.ffn_cache is not None:
        # out = x1 + ffn_out * ffn_warmup with ffn_out = swiglu(norm(x1))
        grads["ffn_warmup"] = np.asarray((grad * cache.ffn_out).sum())
        g_ffn = grad * p.ffn_warmup
        g_h, g_wg, g_wu, g_wd = swiglu_bwd(g_ffn, cache.ffn_cache.ffn_cache)
        g_x1_norm, g_ffn_norm_w = rms_norm_bwd(g_h, cache.ffn_cache.post_cache)
        g_x1 = grad + g_x1_norm
        grads["ffn_norm_w"] = g_ffn_norm_w
        grads["ffn_gate_w"] = g_wg
        grads["ffn_up_w"] = g_wu
        grads["ffn_down_w"] = g_wd
    g_x = g_x1
    g_normed = None
    g_slow = None
    g_norm_w = np.zeros_like(p.norm_w)
    if cache.cross_cache is not None:
        cc = cache.cross_cache
        attn = p.attn
        cgrads, g_q_rows, g_gate_in, g_slow, g_norm_w_slow = _cross_branch_bwd(
            g_x1[cc.rows], cc, attn.w_k, attn.w_v, attn.w_o, p.gate
        )
        grads["attn.w_k"] = cgrads["wk"]
        grads["attn.w_v"] = cgrads["wv"]
        grads["attn.w_o"] = cgrads["w_o"]
        for key in ("gate.warmup", "gate.w_gate", "gate.b_gate"):
            if key in cgrads:
                grads[key] = cgrads[key]
        g_q_flat = g_q_rows.reshape(cc.rows.size, -1)
        grads["attn.w_q"] = cache.normed[cc.rows].T @ g_q_flat
        g_normed = np.zeros_like(cache.normed)
        g_normed[cc.rows] = g_q_flat @ attn.w_q.T
        if g_gate_in is not None:
            g_normed[cc.rows] += g_gate_in
        g_norm_w = g_norm_w + g_norm_w_slow
    if g_normed is not None:
        g_x_norm, g_norm_w_hidden = rms_norm_bwd(g_normed, cache.norm_cache)
        g_x = g_x + g_x_norm
        g_norm_w = g_norm_w + g_norm_w_hidden
    grads["norm_w"] = g_norm_w
    if g_slow is None:
        g_slow = np.zeros((0, cache.normed.shape[1]), dtype=grad.dtype)
    return grads, g_x, g_slow


# ---------------------------------------------------------------------------
# Public cross-attention op
# ---------------------------------------------------------------------------


def cross_attention(
    q_text: np.ndarray,
    slow_normed: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    host_attn: AttentionParams,
) -> np.ndarray:
    """Grouped multi-head attention of text queries over projected slow tokens.

    q_text [n, num_heads*head_dim] are the host self-attention's (rotated)
    queries at the selected rows; keys get no positional transform; output is
    mapped back to d by the host output projection. No mask.
    """
    if slow_normed.ndim != 2 or slow_normed.shape[0] == 0:
        raise UsageError(f"cross_attention needs at least one slow token, got {slow_normed.shape}")
    n = q_text.shape[0]
    H, dh = host_attn.num_heads, host_attn.head_dim
    if q_text.shape[1] != H * dh:
        raise ShapeError(f"q_text dim {q_text.shape} != num_heads*head_dim {H * dh}")
    q = q_text.reshape(n, H, dh)
    m = slow_normed.shape[0]
    ck = (slow_normed @ wk).reshape(m, host_attn.num_kv_heads, dh)
    cv = (slow_normed @ wv).reshape(m, host_attn.num_kv_heads, dh)
    ctx, _, _ = grouped_attention_fwd(q, ck, cv, host_attn.groups, causal=False)
    return ctx.reshape(n, H * dh) @ host_attn.w_o


# ---------------------------------------------------------------------------
# Decoder stack
# ---------------------------------------------------------------------------


@dataclass
class StackCache:
    entries: list  # (kind, layer_index, cache) in application order
    final_norm_cache: tuple
    in_shape: tuple
    slow_shape: tuple
    dtype: np.dtype


@dataclass
class StackResult:
    hidden: HiddenState
    logits: np.ndarray | None
    cache: StackCache


def _validate_stack(cfg: ModelConfig, params: ModelParams):
    if len(params.layers) != cfg.num_layers:
        raise ValueError(f"expected {cfg.num_layers} layers, got {len(params.layers)}")
    want = set(cfg.hybrid_indices)
    if cfg.integration == Integration.HYBRID:
        if set(params.hybrid) != want:
            raise ValueError(f"hybrid params at {sorted(params.hybrid)} do not match indices {sorted(want)}")
    else:
        if set(params.standalone) != want:
            raise ValueError(
                f"standalone params at {sorted(params.standalone)} do not match indices {sorted(want)}"
            )


def decoder_stack_forward(
    cfg: ModelConfig,
    h0: HiddenState,
    slow: np.ndarray | None,
    params: ModelParams,
    want_logits: bool = False,
) -> StackResult:
    """Run the full stack: hybrid behavior only at hybrid_indices (stand-alone
    layers are inserted before the host layer at each index), then the final
    norm and optionally vocab logits."""
    _validate_stack(cfg, params)
    state = h0
    entries = []
    for i in range(cfg.num_layers):
        if i in cfg.hybrid_indices and cfg.integration != Integration.HYBRID:
            sp = params.standalone[i]
            state, c = standalone_xattn_layer_forward(state, slow, sp, sp.with_ffn)
            entries.append(("standalone", i, c))
        if i in cfg.hybrid_indices and cfg.integration == Integration.HYBRID:
            state, c = hybrid_layer_forward(state, slow, params.hybrid[i], cfg)
            entries.append(("hybrid", i, c))
        else:
            state, c = standard_layer_forward(state, params.layers[i])
            entries.append(("standard", i, c))
    final, final_cache = rms_norm_fwd(state.x, params.final_norm_w, RMS_EPS)
    logits = final @ params.unembed if want_logits else None
    slow_shape = (0, h0.x.shape[1]) if slow is None else slow.shape
    cache = StackCache(entries, final_cache, h0.x.shape, slow_shape, h0.x.dtype)
    return StackResult(HiddenState(final, h0.layout), logits, cache)


def decoder_stack_backward(grad_final: np.ndarray, cache: StackCache) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss (with d loss/d final_hidden = grad_final)
    w.r.t. every parameter and both inputs.

    Keys: layers.{i}.*, hybrid.{i}.*, standalone.{i}.*, final_norm_w,
    input.x, input.slow.
    """
    if grad_final.shape != cache.in_shape:
        raise UsageError("decoder_stack_backward: grad shape does not match cached forward")
    grads: dict[str, np.ndarray] = {}
    g, g_final_w = rms_norm_bwd(grad_final, cache.final_norm_cache)
    grads["final_norm_w"] = g_final_w
    g_slow_total = np.zeros(cache.slow_shape, dtype=cache.dtype)

    def add(prefix: str, local: dict[str, np.ndarray]):
        for k, v in local.items():
            key = f"{prefix}.{k}"
            grads[key] = grads[key] + v if key in grads else v

    for kind, i, c in reversed(cache.entries):
        if kind == "standard":
            local, g = standard_layer_backward(g, c)
            add(f"layers.{i}", local)
        elif kind == "hybrid":
            local, g, g_slow = hybrid_layer_backward(g, c)
            host = {k.removeprefix("host."): v for k, v in local.items() if k.startswith("host.")}
            add(f"layers.{i}", host)
            add(f"hybrid.{i}", {k: v for k, v in local.items() if not k.startswith("host.")})
            if g_slow.shape == g_slow_total.shape:
                g_slow_total += g_slow
        else:
            local, g, g_slow = standalone_layer_backward(g, c)
            add(f"standalone.{i}", local)
            if g_slow.shape == g_slow_total.shape:
                g_slow_total += g_slow
    grads["input.x"] = g
    grads["input.slow"] = g_slow_total
    return grads
