"""Command-line harness.

Subcommands: compress, forward, gradcheck, flops, ablate, synth, selftest.
Exit codes: 0 success, 1 check failure, 2 usage/config error.

Every command is deterministic given (config, seed): artifacts carry no
timestamps or absolute paths, JSON is emitted with sorted keys, and timing
diagnostics go to stderr only.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fixtures, flops_model, gradcheck, synth
from . import hybrid_decoder as hd
from . import selftest as selftest_mod
from . import token_pipeline as tp
from .configs import (
    ConfigError,
    RunConfig,
    dump_json,
    load_run_config,
    model_config_to_dict,
    toy_run_config,
)
from .numerics import NumericsError, ShapeError, UsageError

USAGE_ERRORS = (
    ConfigError,
    tp.ConfigParseError,
    fixtures.FixtureError,
    ShapeError,
    UsageError,
    ValueError,
)


def _write_meta(path: Path, payload: dict) -> None:
    path.write_text(dump_json(payload))


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    dtype = np.float64 if args.dtype == 64 else np.float32
    frames = synth.synth_frames(args.n, args.d, args.height, args.width, args.seed, args.pattern, dtype)
    out = Path(args.out)
    fixtures.write_tensor(out, frames)
    _write_meta(
        out.with_suffix(out.suffix + ".meta.json"),
        {
            "artifact": "synth_frames",
            "format_version": 1,
            "seed": args.seed,
            "pattern": args.pattern,
            "dims": [args.n, args.d, args.height, args.width],
            "dtype": f"float{args.dtype}",
        },
    )
    print(f"frames={args.n} channels={args.d} grid={args.height}x{args.width} pattern={args.pattern}")
    return 0


# ---------------------------------------------------------------------------
# compress
# ---------------------------------------------------------------------------


def cmd_compress(args) -> int:
    declared_frames, cfg = tp.parse_frame_config(args.config, args.min_fast_frames)
    data = fixtures.read_tensor(args.input)
    if data.ndim != 4:
        raise ShapeError(f"compress expects a rank-4 fixture [n,d,h,w], got rank {data.ndim}")
    n = data.shape[0]
    if n != declared_frames:
        raise ConfigError(f"config {args.config!r} declares {declared_frames} frames, fixture has {n}")
    if args.frames is not None and args.frames != n:
        raise ConfigError(f"--frames {args.frames} does not match fixture frame count {n}")
    seqs = tp.tokenize_frames(tp.FrameFeatures(data), cfg)
    prefix = Path(args.out)
    slow_path = prefix.with_name(prefix.name + ".slow.sftf")
    fast_path = prefix.with_name(prefix.name + ".fast.sftf")
    fixtures.write_tensor(slow_path, seqs.slow)
    fixtures.write_tensor(fast_path, seqs.fast)
    _write_meta(
        prefix.with_name(prefix.name + ".meta.json"),
        {
            "artifact": "compress",
            "format_version": 1,
            "seed": None,
            "config": args.config,
            "resolved": {
                "input_frames": n,
                "sample_stride": cfg.sample_stride,
                "pool_stride": cfg.pool_stride,
                "min_fast_frames": cfg.min_fast_frames,
            },
            "tokens_per_frame": seqs.tokens_per_frame,
            "fast_frames": seqs.fast_frames,
            "slow_tokens": int(seqs.slow.shape[0]),
            "fast_tokens": int(seqs.fast.shape[0]),
        },
    )
    print(
        f"slow_frames={n} slow_tokens={seqs.slow.shape[0]} "
        f"fast_frames={seqs.fast_frames} fast_tokens={seqs.fast.shape[0]} "
        f"tokens_per_frame={seqs.tokens_per_frame}"
    )
    return 0


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _parse_overrides(pairs: list[str]) -> dict[str, float]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or key != "warmup":
            raise ConfigError(f"unsupported override {pair!r}; supported: warmup=<float>")
        out[key] = float(value)
    return out


def cmd_forward(args) -> int:
    run = load_run_config(args.model) if args.model else toy_run_config(seed=args.seed or 0)
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    overrides = _parse_overrides(args.override or [])
    dtype = np.float64 if run.precision == 64 else np.float32
    cfg = run.model
    params = hd.init_model_params(cfg, run.seed, dtype=dtype)
    if "warmup" in overrides:
        hd.set_all_warmups(params, overrides["warmup"])
    if args.no_hybrid:
        cfg = replace(cfg, hybrid_indices=())
        params = hd.ModelParams(params.layers, {}, {}, params.final_norm_w, params.unembed)

    def load_tokens(path, name):
        arr = fixtures.read_tensor(path)
        if arr.ndim != 2 or arr.shape[1] != cfg.hidden_dim:
            raise ShapeError(f"{name} fixture must be [tokens, {cfg.hidden_dim}], got {arr.shape}")
        return arr.astype(dtype)

    fast = load_tokens(args.fast, "fast") if args.fast else np.zeros((0, cfg.hidden_dim), dtype=dtype)
    if args.text:
        text = load_tokens(args.text, "text")
    else:
        text = synth.synth_text(args.synth_text, cfg.hidden_dim, run.seed + 1, dtype)
    slow = load_tokens(args.slow, "slow") if args.slow else None
    if cfg.hybrid_indices and slow is None:
        raise ConfigError("model has hybrid layers; --slow is required")

    h0 = hd.build_sequence(fast, text)
    result = hd.decoder_stack_forward(cfg, h0, slow, params, want_logits=args.logits is not None)
    out = Path(args.out)
    fixtures.write_tensor(out, result.hidden.x)
    resolved = run.to_dict()
    resolved["model"] = model_config_to_dict(cfg)
    _write_meta(
        out.with_suffix(out.suffix + ".meta.json"),
        {
            "artifact": "forward",
            "format_version": 1,
            "seed": run.seed,
            "config": resolved,
            "overrides": overrides,
            "no_hybrid": bool(args.no_hybrid),
            "tokens": {"fast": int(fast.shape[0]), "text": int(text.shape[0]),
                       "slow": 0 if slow is None else int(slow.shape[0])},
        },
    )
    if args.logits:
        fixtures.write_tensor(args.logits, result.logits)
    if args.dump_attn:
        dump_dir = Path(args.dump_attn)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for idx, (weights, gates) in sorted(hd.collect_cross_attention(result.cache).items()):
            fixtures.write_tensor(dump_dir / f"xattn_weights_layer{idx:02d}.sftf", weights)
            fixtures.write_tensor(dump_dir / f"gate_values_layer{idx:02d}.sftf", gates)
    print(
        f"tokens={h0.x.shape[0]} (fast={fast.shape[0]} text={text.shape[0]}) "
        f"slow={0 if slow is None else slow.shape[0]} layers={cfg.num_layers} "
        f"hybrid={list(cfg.hybrid_indices)} precision={run.precision}"
    )
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    run = load_run_config(args.model) if args.model else toy_run_config(seed=args.seed or 0)
    seed = args.seed if args.seed is not None else run.seed
    if run.precision != 64:
        print("note: gradient checks force 64-bit precision", file=sys.stderr)
    if args.modes == "all":
        combos = None
    else:
        combos = [gradcheck.parse_combo(m.strip()) for m in args.modes.split(",") if m.strip()]
        if not combos:
            raise ConfigError("--modes list is empty")
    report = gradcheck.run_gradcheck(
        run.model, seed=seed, combos=combos,
        samples=args.samples, eps=args.eps, full=args.full, corrupt=args.corrupt,
    )
    combo_seen = None
    for r in report.results:
        if r.combo != combo_seen:
            print(f"[{r.combo}]")
            combo_seen = r.combo
        if r.rel_err is None:
            print(f"  {r.group:<12} absent")
        else:
            print(f"  {r.group:<12} {r.status:<6} {r.rel_err:.3e} ({r.entries_checked} entries)")
    print(f"worst relative error: {report.worst:.3e} (tolerance {gradcheck.TOLERANCE:.0e})")
    print(f"elapsed: {report.seconds:.1f}s", file=sys.stderr)
    if args.json:
        payload = {
            "artifact": "gradcheck",
            "format_version": 1,
            "seed": seed,
            "config": model_config_to_dict(run.model),
            "samples": args.samples,
            "eps": args.eps,
            "full": args.full,
            "results": [
                {"combo": r.combo, "group": r.group, "status": r.status,
                 "rel_err": r.rel_err, "entries": r.entries_checked}
                for r in report.results
            ],
            "worst": report.worst,
            "ok": report.ok,
        }
        Path(args.json).write_text(dump_json(payload))
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# flops
# ---------------------------------------------------------------------------


def cmd_flops(args) -> int:
    if args.reference:
        setup = flops_model.load_reference()
        rows = flops_model.efficiency_table(setup, n_text=args.text_tokens)
        print(flops_model.format_efficiency_table(rows))
        report = flops_model.table7_report(setup, n_text=args.text_tokens)
        if args.json:
            Path(args.json).write_text(dump_json({"artifact": "flops_reference", "format_version": 1, **report}))
        ok = report["all_within_tolerance"]
        print(f"reference check: {'OK' if ok else 'FAILED'} "
              f"(LLM tolerance {flops_model.LLM_TOLERANCE:.0%}, CA tolerance {flops_model.CA_TOLERANCE:.0%})")
        return 0 if ok else 1

    cfg = load_run_config(args.model).model if args.model else flops_model.load_reference().model
    frames = [int(f) for f in args.frames.split(",") if f.strip()]
    if not frames or any(f < 1 for f in frames):
        raise ConfigError(f"--frames must be positive integers, got {args.frames!r}")
    tpf = args.tokens_per_frame
    base_cfg = replace(cfg, hybrid_indices=())
    rows = []
    base_tokens = frames[0] * tpf + args.text_tokens
    base_flops = flops_model.llm_forward_flops(base_cfg, base_tokens)
    fast_tokens = min(frames) * tpf if not args.fast_frames else args.fast_frames * tpf
    header = (f"{'frames':>7} {'tokens':>8} {'self-attn TF':>13} {'ratio':>7} "
              f"{'slow-fast TF':>13} {'ratio':>7}")
    print(header)
    print("-" * len(header))
    for f in frames:
        tokens = f * tpf + args.text_tokens
        self_attn = flops_model.llm_forward_flops(base_cfg, tokens)
        sf = None
        if cfg.hybrid_indices:
            sf = flops_model.llm_forward_flops(cfg, fast_tokens + args.text_tokens)
            sf += flops_model.cross_attn_flops(cfg, f * tpf, args.text_tokens)
        row = {
            "frames": f, "tokens": tokens,
            "self_attn_tflops": self_attn / flops_model.TFLOP,
            "self_attn_ratio": self_attn / base_flops,
            "slow_fast_tflops": None if sf is None else sf / flops_model.TFLOP,
        }
        rows.append(row)
        sf_s = f"{row['slow_fast_tflops']:13.4f}" if sf is not None else f"{'-':>13}"
        sf_r = (
            f"{row['slow_fast_tflops'] / rows[0]['slow_fast_tflops']:7.3f}"
            if sf is not None else f"{'-':>7}"
        )
        print(f"{f:>7} {tokens:>8} {row['self_attn_tflops']:13.4f} {row['self_attn_ratio']:7.3f} {sf_s} {sf_r}")
    if args.json:
        payload = {
            "artifact": "flops_sweep", "format_version": 1,
            "config": model_config_to_dict(cfg),
            "tokens_per_frame": tpf, "text_tokens": args.text_tokens, "rows": rows,
        }
        Path(args.json).write_text(dump_json(payload))
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def _load_matrix(spec: str) -> list[dict]:
    if spec == "full":
        return [
            {"gate_mode": g.value, "query_mode": q.value, "integration": i.value}
            for g, q, i in gradcheck.all_combos()
        ]
    import json

    try:
        raw = json.loads(Path(spec).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read matrix file {spec!r}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"matrix file {spec!r} is not valid JSON: {e}") from None
    if not isinstance(raw, dict) or raw.get("version") != 1 or "variants" not in raw:
        raise ConfigError("matrix file must be {\"version\": 1, \"variants\": [...]}")
    allowed = {"gate_mode", "query_mode", "integration"}
    for v in raw["variants"]:
        unknown = set(v) - allowed
        if unknown:
            raise ConfigError(f"unknown variant keys {sorted(unknown)}; valid: {sorted(allowed)}")
    return raw["variants"]


def _variant_checks(cfg: hd.ModelConfig, seed: int, samples: int) -> list[dict]:
    checks = []
    params = hd.init_model_params(cfg, seed=seed)
    gradcheck.randomize_for_gradcheck(params, cfg, seed + 1)
    rng = np.random.default_rng(seed + 2)
    d = cfg.hidden_dim
    h0 = hd.build_sequence(rng.normal(size=(3, d)), rng.normal(size=(5, d)))
    slow = rng.normal(size=(6, d))
    try:
        out = hd.decoder_stack_forward(cfg, h0, slow, params).hidden.x
        ok = bool(np.all(np.isfinite(out))) and out.shape == h0.x.shape
        checks.append({"name": "forward_finite", "ok": ok, "detail": f"output {out.shape}"})
    except Exception as e:
        checks.append({"name": "forward_finite", "ok": False, "detail": f"{type(e).__name__}: {e}"})
    ok = selftest_mod.warmup_identity(cfg, seed)
    checks.append({"name": "warmup_identity", "ok": bool(ok), "detail": "bit-identical at zero warm-up"})
    results = gradcheck.check_combo(cfg, seed, samples=samples)
    worst = max((r.rel_err for r in results if r.rel_err is not None), default=0.0)
    checks.append({
        "name": "gradcheck",
        "ok": all(r.rel_err is None or r.rel_err < gradcheck.TOLERANCE for r in results),
        "detail": f"worst {worst:.3e}",
    })
    return checks


def cmd_ablate(args) -> int:
    variants = _load_matrix(args.matrix)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for v in variants:
        cfg = toy_run_config().model
        cfg = replace(
            cfg,
            gate_mode=_enum_or_die(hd.GateMode, v.get("gate_mode", cfg.gate_mode.value), "gate_mode"),
            query_mode=_enum_or_die(hd.QueryMode, v.get("query_mode", cfg.query_mode.value), "query_mode"),
            integration=_enum_or_die(hd.Integration, v.get("integration", cfg.integration.value), "integration"),
        )
        name = f"{cfg.gate_mode.value}__{cfg.query_mode.value}__{cfg.integration.value}"
        checks = _variant_checks(cfg, args.seed, args.samples)
        record = {
            "artifact": "ablate_variant",
            "format_version": 1,
            "seed": args.seed,
            "variant": {
                "gate_mode": cfg.gate_mode.value,
                "query_mode": cfg.query_mode.value,
                "integration": cfg.integration.value,
            },
            "checks": checks,
            "ok": all(c["ok"] for c in checks),
        }
        (out_dir / f"{name}.json").write_text(dump_json(record))
        records.append(record)
    all_ok = all(r["ok"] for r in records)
    (out_dir / "summary.json").write_text(dump_json({
        "artifact": "ablate_summary", "format_version": 1, "seed": args.seed,
        "variants": len(records), "all_ok": all_ok,
        "records": [{"variant": r["variant"], "ok": r["ok"]} for r in records],
    }))
    header = f"{'gate':<16} {'query':<12} {'integration':<17} {'status':<7} checks"
    print(header)
    print("-" * len(header))
    for r in records:
        v = r["variant"]
        status = "ok" if r["ok"] else "FAIL"
        summary = " ".join(f"{c['name']}={'y' if c['ok'] else 'N'}" for c in r["checks"])
        print(f"{v['gate_mode']:<16} {v['query_mode']:<12} {v['integration']:<17} {status:<7} {summary}")
    print(f"{len(records)} variants, all_ok={all_ok}")
    return 0 if all_ok else 1


def _enum_or_die(enum_cls, value, key):
    from .configs import parse_enum

    return parse_enum(enum_cls, value, key)


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------


def cmd_selftest(args) -> int:
    results = selftest_mod.run_selftest(seed=args.seed, quick=args.quick)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.suite}/{r.name} {r.detail}")
        print(f"  ({r.seconds:.2f}s) {r.suite}/{r.name}", file=sys.stderr)
    ok = all(r.ok for r in results)
    print(f"{sum(r.ok for r in results)}/{len(results)} checks passed")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="slowfast-mllm",
        description="Slow/fast dual-token video-LLM harness: token compression, "
        "hybrid gated cross-attention decoder, cost model, and self checks.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a deterministic frame-feature fixture")
    s.add_argument("--n", type=int, required=True, help="frame count")
    s.add_argument("--d", type=int, required=True, help="channels")
    s.add_argument("--h", dest="height", type=int, required=True, help="grid height")
    s.add_argument("--w", dest="width", type=int, required=True, help="grid width")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pattern", choices=synth.PATTERNS, default="random")
    s.add_argument("--dtype", type=int, choices=(32, 64), default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("compress", help="slow/fast token pipeline on a frame fixture")
    s.add_argument("--config", required=True, help='frame config, e.g. "64-p4" or "128-s2p4"')
    s.add_argument("--in", dest="input", required=True, help="rank-4 [n,d,h,w] fixture")
    s.add_argument("--out", required=True, help="output prefix (writes .slow.sftf / .fast.sftf)")
    s.add_argument("--frames", type=int, default=None, help="assert the input frame count")
    s.add_argument("--min-fast-frames", type=int, default=tp.DEFAULT_MIN_FAST_FRAMES)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("forward", help="run the decoder stack on token fixtures")
    s.add_argument("--model", help="run config JSON (defaults to the toy config)")
    s.add_argument("--slow", help="slow tokens fixture [m,d]")
    s.add_argument("--fast", help="fast tokens fixture [k_f,d]")
    s.add_argument("--text", help="text embedding fixture [n,d]")
    s.add_argument("--synth-text", type=int, default=8, help="generate N text embeddings when --text is absent")
    s.add_argument("--seed", type=int, default=None, help="override the run config seed")
    s.add_argument("--out", required=True, help="final hidden-state fixture")
    s.add_argument("--logits", help="also write vocab logits to this fixture")
    s.add_argument("--dump-attn", help="directory for per-layer cross-attention weights and gates")
    s.add_argument("--override", action="append", help="parameter override, e.g. warmup=0")
    s.add_argument("--no-hybrid", action="store_true", help="disable all hybrid layers")
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    s.add_argument("--model", help="run config JSON (defaults to the toy config)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--modes", default="all", help='"all" or comma list of gate/query/integration triples')
    s.add_argument("--samples", type=int, default=gradcheck.DEFAULT_SAMPLES)
    s.add_argument("--eps", type=float, default=gradcheck.DEFAULT_EPS)
    s.add_argument("--full", action="store_true", help="check every entry of large tensors")
    s.add_argument("--corrupt", action="store_true", help="test hook: corrupt one gradient, expect failure")
    s.add_argument("--json", help="write a JSON report")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("flops", help="analytic cost model")
    s.add_argument("--reference", action="store_true", help="reproduce the published efficiency table")
    s.add_argument("--model", help="run config JSON for custom sweeps")
    s.add_argument("--frames", default="16,32,64,96", help="comma list of frame counts")
    s.add_argument("--tokens-per-frame", type=int, default=81)
    s.add_argument("--text-tokens", type=int, default=0)
    s.add_argument("--fast-frames", type=int, default=0, help="fast frames for the slow-fast column (default min of --frames)")
    s.add_argument("--json", help="write a JSON report")
    s.set_defaults(func=cmd_flops)

    s = sub.add_parser("ablate", help="run the variant matrix health suite")
    s.add_argument("--matrix", required=True, help='"full" or a JSON file listing variants')
    s.add_argument("--out", required=True, help="output directory for per-variant records")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--samples", type=int, default=8, help="FD samples per tensor in the per-variant gradcheck")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("selftest", help="run every module's invariant suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quick", action="store_true", help="smaller fuzz counts")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as e:
        return _fail(str(e))
    except NumericsError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
