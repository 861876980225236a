"""Invariant suites behind the `selftest` command and the ablation runner.

Each check is a small self-contained function returning (ok, detail); the
runner times them and renders one pass/fail line per check. Oracles come
from `reference` (straight-line reimplementations) so every comparison has
an independent second path.
"""

from __future__ import annotations

import itertools
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import fixtures, flops_model, gradcheck, reference
from . import hybrid_decoder as hd
from . import numerics as nm
from . import token_pipeline as tp
from .configs import toy_model_config
from .synth import synth_frames

TABLE6_CONFIGS = [("64-s4", 16), ("64-p4", 16), ("96-p6", 16), ("128-s2p4", 16), ("48-s3", 16)]


@dataclass
class CheckResult:
    suite: str
    name: str
    ok: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.suite}/{self.name} ({self.seconds:.2f}s) {self.detail}"


def _run(suite: str, name: str, fn) -> CheckResult:
    started = time.monotonic()
    try:
        ok, detail = fn()
    except Exception as e:  # a crashed check is a failed check
        ok, detail = False, f"exception: {type(e).__name__}: {e}"
    return CheckResult(suite, name, ok, detail, time.monotonic() - started)


# ---------------------------------------------------------------------------
# numerics
# ---------------------------------------------------------------------------


def _softmax_row_sums(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(200):
        m, n = rng.integers(1, 12, size=2)
        x = rng.normal(scale=rng.choice([0.5, 5.0, 200.0]), size=(m, n))
        s = nm.softmax_rows(x)
        worst = max(worst, float(np.abs(s.sum(axis=1) - 1.0).max()))
        if s.min() < 0:
            return False, "negative softmax output"
    stable = nm.softmax_rows(np.array([[1000.0, 0.0]]))
    if abs(stable[0, 0] - 1.0) > 1e-12 or abs(stable[0, 1]) > 1e-12:
        return False, f"overflow guard failed: {stable}"
    return worst <= 1e-6, f"max |row_sum-1| = {worst:.2e}"


def _tiny_attention_params(rng, d=8, heads=2, kv=1, dh=4):
    return nm.AttentionParams(
        rng.normal(size=(d, heads * dh)),
        rng.normal(size=(d, kv * dh)),
        rng.normal(size=(d, kv * dh)),
        rng.normal(size=(heads * dh, d)),
        heads, kv, dh,
    )


def _mha_oracle(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for causal in (False, True):
        p = _tiny_attention_params(rng)
        tq = 4
        q_in = rng.normal(size=(tq, 8))
        kv_in = q_in if causal else rng.normal(size=(5, 8))
        out, w = nm.mha_forward(q_in, kv_in, p, causal=causal)
        ref_out, ref_w = reference.mha_per_head_loops(q_in, kv_in, p, causal)
        worst = max(worst, float(np.abs(out - ref_out).max()), float(np.abs(w - ref_w).max()))
    return worst <= 1e-10, f"max |impl-oracle| = {worst:.2e}"


def _mha_permutation(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        p = _tiny_attention_params(rng)
        q_in = rng.normal(size=(3, 8))
        kv_in = rng.normal(size=(6, 8))
        perm = rng.permutation(6)
        out, w = nm.mha_forward(q_in, kv_in, p)
        out_p, w_p = nm.mha_forward(q_in, kv_in[perm], p)
        worst = max(worst, float(np.abs(out - out_p).max()))
        worst = max(worst, float(np.abs(w[:, :, perm] - w_p).max()))
    return worst <= 1e-6, f"max drift under kv permutation = {worst:.2e}"


def _mha_backward_fd(seed: int):
    rng = np.random.default_rng(seed)
    p = _tiny_attention_params(rng)
    q_in = rng.normal(size=(3, 8))
    kv_in = rng.normal(size=(4, 8))
    direction = rng.normal(size=(3, 8))
    _, _, cache = nm.mha_forward_with_cache(q_in, kv_in, p, causal=False)
    grads = nm.mha_backward(direction, cache)
    worst = 0.0

    def rel(analytic, fd):
        scale = max(float(np.abs(analytic).max()), float(np.abs(fd).max()), 1e-12)
        return float(np.abs(analytic - fd).max()) / scale

    def loss_for(attr):
        def f(x):
            kwargs = dict(w_q=p.w_q, w_k=p.w_k, w_v=p.w_v, w_o=p.w_o)
            if attr in kwargs:
                kwargs[attr] = x
                pp = nm.AttentionParams(kwargs["w_q"], kwargs["w_k"], kwargs["w_v"], kwargs["w_o"], 2, 1, 4)
                out, _ = nm.mha_forward(q_in, kv_in, pp)
            elif attr == "q":
                out, _ = nm.mha_forward(x, kv_in, p)
            else:
                out, _ = nm.mha_forward(q_in, x, p)
            return float((out * direction).sum())
        return f

    for attr, analytic, tensor in [
        ("w_q", grads.w_q, p.w_q), ("w_k", grads.w_k, p.w_k), ("w_v", grads.w_v, p.w_v),
        ("w_o", grads.w_o, p.w_o), ("q", grads.q_input, q_in), ("kv", grads.kv_input, kv_in),
    ]:
        fd = nm.finite_diff_grad(loss_for(attr), tensor, 1e-5)
        worst = max(worst, rel(analytic, fd))
    return worst < 1e-4, f"max group-relative error = {worst:.2e}"


def _numerics_determinism(seed: int):
    rng = np.random.default_rng(seed)
    p = _tiny_attention_params(rng)
    q_in = rng.normal(size=(4, 8))
    a, wa = nm.mha_forward(q_in, q_in, p, causal=True)
    b, wb = nm.mha_forward(q_in.copy(), q_in.copy(), p, causal=True)
    ok = np.array_equal(a, b) and np.array_equal(wa, wb)
    return ok, "bit-identical repeat" if ok else "repeat runs differ"


def numerics_checks(seed: int = 0) -> list[CheckResult]:
    return [
        _run("numerics", "softmax_row_sums", lambda: _softmax_row_sums(seed)),
        _run("numerics", "mha_vs_per_head_oracle", lambda: _mha_oracle(seed)),
        _run("numerics", "mha_kv_permutation", lambda: _mha_permutation(seed)),
        _run("numerics", "mha_backward_finite_diff", lambda: _mha_backward_fd(seed)),
        _run("numerics", "determinism", lambda: _numerics_determinism(seed)),
    ]


# ---------------------------------------------------------------------------
# token pipeline
# ---------------------------------------------------------------------------


def _named_table_configs(seed: int):
    rng = np.random.default_rng(seed)
    for text, want in TABLE6_CONFIGS:
        n, cfg = tp.parse_frame_config(text)
        frames = tp.FrameFeatures(rng.normal(size=(n, 2, 2, 2)))
        fast = tp.compress_fast(frames, cfg)
        got = fast.shape[0] // 4
        if got != want:
            return False, f"{text}: expected {want} fast frames, got {got}"
    return True, f"{len(TABLE6_CONFIGS)} named configs OK"


def fuzz_compression(seed: int, cases: int) -> tuple[bool, str]:
    """compress_fast vs the straight-line oracle, exact equality."""
    rng = np.random.default_rng(seed)
    for i in range(cases):
        n = int(rng.integers(1, 513))
        k = int(rng.integers(1, 9))
        t = int(rng.integers(1, 9))
        m = int(rng.integers(1, 33))
        data = rng.normal(size=(n, 2, 2, 2))
        cfg = tp.CompressionConfig(k, t, m)
        got = tp.compress_fast(tp.FrameFeatures(data), cfg)
        want = reference.compress_fast_straightline(data, k, t, m)
        if got.shape != want.shape or not np.array_equal(got, want):
            return False, f"case {i}: n={n} k={k} t={t} m={m} mismatch"
        # closed-form frame count: pooling of the padded/sampled sequence
        n_padded = ((n + k * t - 1) // (k * t)) * (k * t)
        n_sampled = max(n_padded // k, m)
        want_frames = min(max(n_sampled // t, m), n_sampled)
        if got.shape[0] != want_frames * 4:
            return False, f"case {i}: frame-count formula mismatch"
    return True, f"{cases} fuzz cases bit-exact"


def _identity_compression(seed: int):
    rng = np.random.default_rng(seed)
    frames = tp.FrameFeatures(rng.normal(size=(16, 3, 2, 2)))
    fast = tp.compress_fast(frames, tp.CompressionConfig(1, 1, 16))
    slow = tp.flatten_frames(frames)
    ok = np.array_equal(fast, slow)
    return ok, "k=1,t=1,n>=m is the identity" if ok else "identity violated"


def _spatial_pool_checks(seed: int):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(3, 2, 4, 6))
    pooled = tp.spatial_pool_2x2(tp.FrameFeatures(data))
    oracle = reference.spatial_pool_loops(data)
    if not np.array_equal(pooled.data, oracle):
        return False, "2x2 pool differs from block-loop oracle"
    drift = float(np.abs(pooled.data.mean(axis=(1, 2, 3)) - data.mean(axis=(1, 2, 3))).max())
    return drift <= 1e-12, f"per-frame mean drift {drift:.2e}"


def pipeline_checks(seed: int = 0, fuzz_cases: int = 300) -> list[CheckResult]:
    return [
        _run("pipeline", "named_frame_configs", lambda: _named_table_configs(seed)),
        _run("pipeline", "straight_line_oracle_fuzz", lambda: fuzz_compression(seed, fuzz_cases)),
        _run("pipeline", "identity_when_unstrided", lambda: _identity_compression(seed)),
        _run("pipeline", "spatial_pool_mean", lambda: _spatial_pool_checks(seed)),
    ]


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------


def _toy_inputs(cfg: hd.ModelConfig, seed: int, k_f=3, n_text=5, m=6):
    rng = np.random.default_rng(seed)
    d = cfg.hidden_dim
    h0 = hd.build_sequence(rng.normal(size=(k_f, d)), rng.normal(size=(n_text, d)))
    slow = rng.normal(size=(m, d))
    return h0, slow


def _combo_cfgs(base: hd.ModelConfig):
    for gate, query, integ in itertools.product(hd.GateMode, hd.QueryMode, hd.Integration):
        yield replace(base, gate_mode=gate, query_mode=query, integration=integ)


def warmup_identity(cfg: hd.ModelConfig, seed: int) -> bool:
    """Zero warm-ups make the stack bit-identical to the plain self-attention
    stack built from the same host parameters."""
    params = hd.init_model_params(cfg, seed=seed)
    gradcheck.randomize_for_gradcheck(params, cfg, seed + 1)
    hd.set_all_warmups(params, 0.0)
    h0, slow = _toy_inputs(cfg, seed + 2)
    out = hd.decoder_stack_forward(cfg, h0, slow, params).hidden.x
    plain_cfg = replace(cfg, hybrid_indices=())
    plain = hd.ModelParams(params.layers, {}, {}, params.final_norm_w, params.unembed)
    out_plain = hd.decoder_stack_forward(plain_cfg, h0, None, plain).hidden.x
    return np.array_equal(out, out_plain)


def _warmup_identity_all(base: hd.ModelConfig, seed: int):
    bad = [
        f"{c.gate_mode.value}/{c.query_mode.value}/{c.integration.value}"
        for c in _combo_cfgs(base)
        if not warmup_identity(c, seed)
    ]
    if bad:
        return False, f"combos not bit-identical: {bad}"
    return True, "27 combos bit-identical at zero warm-up"


def _fast_token_immutability(base: hd.ModelConfig, seed: int):
    """At every merge point, the cross branch must leave FAST_VISUAL rows
    bit-identical to a zero-warm-up pass of the same layer on the same input."""
    for integ in hd.Integration:
        for gate in hd.GateMode:
            cfg = replace(base, gate_mode=gate, query_mode=hd.QueryMode.TEXT_ONLY, integration=integ)
            params = hd.init_model_params(cfg, seed=seed)
            gradcheck.randomize_for_gradcheck(params, cfg, seed + 1)
            h0, slow = _toy_inputs(cfg, seed + 2)
            res = hd.decoder_stack_forward(cfg, h0, slow, params)
            fast_rows = np.flatnonzero(h0.layout.labels == hd.Segment.FAST_VISUAL)
            for kind, i, c in res.cache.entries:
                if kind == "hybrid":
                    merged, layer_in = c.merged, c.self_cache.x
                    p0 = hd.HybridLayerParams(
                        c.params.host, c.params.xattn_wk, c.params.xattn_wv,
                        hd.GateParams(c.params.gate.mode, c.params.gate.w_gate, c.params.gate.b_gate, 0.0),
                        c.params.init_mode,
                    )
                    _, c0 = hd.hybrid_layer_forward(hd.HiddenState(layer_in, h0.layout), slow, p0, cfg)
                    baseline = c0.merged
                elif kind == "standalone":
                    merged, layer_in = c.x1, c.norm_cache[0]
                    p0 = replace(c.params, gate=hd.GateParams(
                        c.params.gate.mode, c.params.gate.w_gate, c.params.gate.b_gate, 0.0))
                    _, c0 = hd.standalone_xattn_layer_forward(
                        hd.HiddenState(layer_in, h0.layout), slow, p0, c.params.with_ffn)
                    baseline = c0.x1
                else:
                    continue
                if not np.array_equal(merged[fast_rows], baseline[fast_rows]):
                    return False, f"{gate.value}/{integ.value}: fast rows moved at layer {i}"
    return True, "merge leaves FAST_VISUAL rows bit-identical (all gates x integrations)"


def _gate_bounded(base: hd.ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mode in (hd.GateMode.TOKEN_DYNAMIC, hd.GateMode.CHANNEL_DYNAMIC):
        cfg = replace(base, gate_mode=mode)
        g_out = 1 if mode == hd.GateMode.TOKEN_DYNAMIC else cfg.hidden_dim
        gate = hd.GateParams(
            mode,
            rng.normal(scale=3.0, size=(cfg.hidden_dim, g_out)),
            rng.normal(scale=1.0, size=(g_out,)),
            warmup=float(rng.uniform(-2, 2)),
        )
        x = rng.normal(scale=4.0, size=(9, cfg.hidden_dim))
        g = hd.gate_values(x, gate)
        if float(np.abs(g).max()) > 1.0:
            return False, f"{mode.value}: |g_d| exceeded 1"
        worst = max(worst, float(np.abs(g * gate.warmup).max()) - abs(gate.warmup))
    return worst <= 0.0, "gate magnitudes bounded by |warmup|"


def _slow_permutation(base: hd.ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for query in hd.QueryMode:
        cfg = replace(base, query_mode=query)
        params = hd.init_model_params(cfg, seed=seed)
        gradcheck.randomize_for_gradcheck(params, cfg, seed + 1)
        h0, slow = _toy_inputs(cfg, seed + 2)
        out = hd.decoder_stack_forward(cfg, h0, slow, params).hidden.x
        perm = rng.permutation(slow.shape[0])
        out_p = hd.decoder_stack_forward(cfg, h0, slow[perm], params).hidden.x
        worst = max(worst, float(np.abs(out - out_p).max()))
    return worst <= 1e-6, f"max drift under slow-token permutation = {worst:.2e}"


def _causality(base: hd.ModelConfig, seed: int):
    for integ in hd.Integration:
        cfg = replace(base, integration=integ)
        params = hd.init_model_params(cfg, seed=seed)
        gradcheck.randomize_for_gradcheck(params, cfg, seed + 1)
        h0, slow = _toy_inputs(cfg, seed + 2, k_f=3, n_text=5)
        out = hd.decoder_stack_forward(cfg, h0, slow, params).hidden.x
        for p in (4, h0.x.shape[0] - 1):  # a mid text position and the last one
            x2 = h0.x.copy()
            x2[p] = 0.0
            out2 = hd.decoder_stack_forward(cfg, hd.HiddenState(x2, h0.layout), slow, params).hidden.x
            if not np.array_equal(out[:p], out2[:p]):
                leak = float(np.abs(out[:p] - out2[:p]).max())
                return False, f"{integ.value}: leakage {leak:.2e} before position {p}"
    return True, "zeroing a position never changes earlier outputs (leakage = 0)"


def _copy_share_divergence(base: hd.ModelConfig, seed: int):
    for mode, expect_diverge in ((hd.InitMode.COPY, True), (hd.InitMode.SHARE, False)):
        cfg = replace(base, init_mode=mode)
        params = hd.init_model_params(cfg, seed=seed)
        hd.set_all_warmups(params, 0.5)  # nonzero learning signal into the cross branch
        idx = cfg.hybrid_indices[0]
        hp = params.hybrid[idx]
        host_wk = params.layers[idx].attn.w_k
        if mode == hd.InitMode.SHARE and hp.xattn_wk is not host_wk:
            return False, "SHARE init did not alias host storage"
        if mode == hd.InitMode.COPY and hp.xattn_wk is host_wk:
            return False, "COPY init aliased host storage"
        if not np.array_equal(hp.xattn_wk, host_wk):
            return False, f"{mode.value}: projections differ already at step 0"
        h0, slow = _toy_inputs(cfg, seed + 2)
        res = hd.decoder_stack_forward(cfg, h0, slow, params)
        grads = hd.decoder_stack_backward(np.ones_like(h0.x), res.cache)
        hp.xattn_wk -= 0.05 * grads[f"hybrid.{idx}.xattn_wk"]
        diverged = not np.array_equal(hp.xattn_wk, host_wk)
        if diverged != expect_diverge:
            return False, f"{mode.value}: divergence={diverged}, expected {expect_diverge}"
    return True, "COPY diverges after one step, SHARE stays identical"


def _stack_determinism(base: hd.ModelConfig, seed: int):
    params = hd.init_model_params(base, seed=seed)
    h0, slow = _toy_inputs(base, seed + 2)
    a = hd.decoder_stack_forward(base, h0, slow, params).hidden.x
    b = hd.decoder_stack_forward(base, h0, slow, params).hidden.x
    ok = np.array_equal(a, b)
    return ok, "bit-identical repeat" if ok else "repeat runs differ"


def decoder_checks(seed: int = 0, base: hd.ModelConfig | None = None) -> list[CheckResult]:
    base = base or toy_model_config()
    return [
        _run("decoder", "warmup_identity_all_combos", lambda: _warmup_identity_all(base, seed)),
        _run("decoder", "fast_token_immutability", lambda: _fast_token_immutability(base, seed)),
        _run("decoder", "gate_bounded", lambda: _gate_bounded(base, seed)),
        _run("decoder", "slow_token_permutation", lambda: _slow_permutation(base, seed)),
        _run("decoder", "causality", lambda: _causality(base, seed)),
        _run("decoder", "copy_share_divergence", lambda: _copy_share_divergence(base, seed)),
        _run("decoder", "determinism", lambda: _stack_determinism(base, seed)),
    ]


def gradient_checks(seed: int = 0, samples: int = gradcheck.DEFAULT_SAMPLES) -> list[CheckResult]:
    def run():
        report = gradcheck.run_gradcheck(toy_model_config(), seed=seed, samples=samples)
        return report.ok, f"worst group-relative error {report.worst:.2e} over 27 combos"

    return [_run("gradients", "finite_difference_matrix", run)]


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------


def _efficiency_table_check():
    rows = flops_model.efficiency_table()
    bad = [f"{r.arch} {r.frames}" for r in rows if not r.within_tolerance]
    if bad:
        return False, f"rows out of tolerance: {bad}"
    worst = max(abs(r.llm_rel_err) for r in rows)
    return True, f"6 rows OK, worst LLM error {100 * worst:.2f}%"


def _param_accounting_check():
    setup = flops_model.load_reference()
    total, added = flops_model.param_count(setup.model, setup.vision_encoder_params)
    base_cfg = replace(setup.model, hybrid_indices=())
    base_total, base_added = flops_model.param_count(base_cfg, setup.vision_encoder_params)
    if base_added != 0:
        return False, "zero hybrid layers should add zero params"
    pct = 100.0 * added / total
    ok = (
        round(base_total / 1e9, 2) == 8.48
        and round(total / 1e9, 2) == 8.50
        and round(pct, 1) == 0.2
    )
    return ok, f"{base_total / 1e9:.4f}B -> {total / 1e9:.4f}B, added {pct:.3f}%"


def _flops_shape_check():
    setup = flops_model.load_reference()
    cfg = setup.model
    ca1 = flops_model.cross_attn_flops(cfg, 5184, 0)
    ca2 = flops_model.cross_attn_flops(cfg, 2 * 5184, 0)
    if ca2 != 2 * ca1:
        return False, "cross-attention FLOPs not exactly linear in slow tokens"
    if flops_model.cross_attn_flops(cfg, 0, 0) != 0:
        return False, "zero slow tokens should cost zero"
    f1 = flops_model.llm_forward_flops(cfg, 1296)
    f2 = flops_model.llm_forward_flops(cfg, 2592)
    if not (f2 > 2 * f1):
        return False, "LLM FLOPs not superlinear in tokens"
    rep = flops_model.cost_report(cfg, 1296, n_slow=5184, n_text=32)
    if sum(rep.breakdown.values()) != rep.llm_flops + rep.xattn_flops:
        return False, "breakdown does not reconcile with totals"
    return True, "linearity, superlinearity, and breakdown reconciliation hold"


def flops_checks() -> list[CheckResult]:
    return [
        _run("flops", "efficiency_table", _efficiency_table_check),
        _run("flops", "parameter_accounting", _param_accounting_check),
        _run("flops", "scaling_and_breakdown", _flops_shape_check),
    ]


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


def _fixture_roundtrip(seed: int):
    rng = np.random.default_rng(seed)
    with tempfile.TemporaryDirectory() as tmp:
        for rank in (1, 2, 3, 4):
            for dtype in (np.float32, np.float64):
                shape = tuple(int(s) for s in rng.integers(1, 5, size=rank))
                arr = rng.normal(size=shape).astype(dtype)
                path = Path(tmp) / f"t{rank}_{dtype.__name__}.sftf"
                fixtures.write_tensor(path, arr)
                back = fixtures.read_tensor(path)
                if back.dtype != arr.dtype or not np.array_equal(back, arr):
                    return False, f"round-trip failed for rank {rank} {dtype.__name__}"
        # version rejection
        path = Path(tmp) / "bad.sftf"
        fixtures.write_tensor(path, np.zeros(3))
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        try:
            fixtures.read_tensor(path)
            return False, "unknown version accepted"
        except fixtures.FixtureError:
            pass
    return True, "round-trip identity, unknown version rejected"


def fixture_checks(seed: int = 0) -> list[CheckResult]:
    return [_run("fixtures", "roundtrip", lambda: _fixture_roundtrip(seed))]


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def _ramp_check():
    frames = synth_frames(64, 2, 4, 4, seed=0, pattern="ramp")
    means = frames.mean(axis=(1, 2, 3))
    if not np.array_equal(means, np.arange(64, dtype=np.float64)):
        return False, "ramp frame means are not exactly the frame index"
    n, cfg = tp.parse_frame_config("64-p4")
    seqs = tp.tokenize_frames(tp.FrameFeatures(frames), cfg)
    fast_frames = seqs.fast.reshape(seqs.fast_frames, seqs.tokens_per_frame, -1)
    for i in range(seqs.fast_frames):
        want = np.mean(np.arange(4 * i, 4 * i + 4, dtype=np.float64))
        got = float(fast_frames[i].mean())
        if got != want:
            return False, f"bucket {i}: mean {got} != index average {want}"
    return True, "ramp means exact through pooling and compression"


def synth_checks() -> list[CheckResult]:
    return [_run("synth", "ramp_bucket_arithmetic", _ramp_check)]


# ---------------------------------------------------------------------------
# umbrella
# ---------------------------------------------------------------------------


def run_selftest(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    fuzz = 120 if quick else 400
    samples = 6 if quick else gradcheck.DEFAULT_SAMPLES
    results = []
    results += numerics_checks(seed)
    results += pipeline_checks(seed, fuzz_cases=fuzz)
    results += decoder_checks(seed)
    results += gradient_checks(seed, samples=samples)
    results += flops_checks()
    results += fixture_checks(seed)
    results += synth_checks()
    return results
