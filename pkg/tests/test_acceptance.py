"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.
"""

import itertools
import json
import os
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from slowfast_mllm import flops_model as fm
from slowfast_mllm import gradcheck
from slowfast_mllm import hybrid_decoder as hd
from slowfast_mllm import selftest
from slowfast_mllm import token_pipeline as tp
from slowfast_mllm.configs import toy_model_config

SRC = Path(__file__).resolve().parent.parent / "src"


def report(criterion: str, detail: str):
    print(f"PASS {criterion}: {detail}")


def test_criterion_1_efficiency_table_reproduction():
    started = time.monotonic()
    setup = fm.load_reference()
    rows = fm.efficiency_table(setup)
    expected_llm = {("self_attn", "16"): 19.64, ("self_attn", "32"): 40.21,
                    ("self_attn", "64"): 85.57, ("self_attn", "96"): 136.16,
                    ("slow_fast", "64/16"): 19.80, ("slow_fast", "96/16"): 19.88}
    expected_ca = {("slow_fast", "64/16"): 0.16, ("slow_fast", "96/16"): 0.24}
    for r in rows:
        key = (r.arch, r.frames)
        assert r.paper_llm_tflops == expected_llm[key]
        assert abs(r.llm_tflops - r.paper_llm_tflops) / r.paper_llm_tflops <= 0.05, key
        if key in expected_ca:
            assert r.paper_ca_tflops == expected_ca[key]
            assert abs(r.ca_tflops - r.paper_ca_tflops) / r.paper_ca_tflops <= 0.10, key
    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    worst = max(abs(r.llm_rel_err) for r in rows)
    report("criterion-1 efficiency table", f"6 rows within 5%/10% (worst LLM {100 * worst:.2f}%), {elapsed:.3f}s")


def test_criterion_2_parameter_accounting():
    setup = fm.load_reference()
    base_total, base_added = fm.param_count(replace(setup.model, hybrid_indices=()), setup.vision_encoder_params)
    total, added = fm.param_count(setup.model, setup.vision_encoder_params)
    assert base_added == 0
    assert added == 4 * (3584 * 512 * 2 + 3584 + 1 + 1)  # exact arithmetic
    assert round(base_total / 1e9, 2) == 8.48
    assert round(total / 1e9, 2) == 8.50
    assert round(100 * added / total, 1) == 0.2
    report("criterion-2 parameter accounting",
           f"{base_total / 1e9:.4f}B -> {total / 1e9:.4f}B, added {100 * added / total:.3f}% ~ 0.2%")


def test_criterion_3_warmup_identity_every_combo():
    started = time.monotonic()
    base = toy_model_config()
    failures = []
    for gate, query, integ in itertools.product(hd.GateMode, hd.QueryMode, hd.Integration):
        cfg = replace(base, gate_mode=gate, query_mode=query, integration=integ)
        if not selftest.warmup_identity(cfg, seed=0):
            failures.append((gate.value, query.value, integ.value))
    elapsed = time.monotonic() - started
    assert not failures, failures
    assert elapsed < 10.0
    report("criterion-3 warm-up identity", f"27 combos bit-identical, {elapsed:.2f}s")


def test_criterion_4_fast_token_immutability():
    ok, detail = selftest._fast_token_immutability(toy_model_config(), seed=0)
    assert ok, detail
    report("criterion-4 fast-token immutability", detail)


def test_criterion_5_compression_oracle_equivalence():
    ok, detail = selftest.fuzz_compression(seed=0, cases=1000)
    assert ok, detail
    rng = np.random.default_rng(1)
    for text in ("64-s4", "64-p4", "96-p6", "128-s2p4", "48-s3"):
        n, cfg = tp.parse_frame_config(text)
        fast = tp.compress_fast(tp.FrameFeatures(rng.normal(size=(n, 2, 2, 2))), cfg)
        assert fast.shape[0] // 4 == 16, text
    report("criterion-5 compression oracle", f"{detail}; 5 named configs -> 16 fast frames")


def test_criterion_6_gradient_correctness_full_matrix():
    report_gc = gradcheck.run_gradcheck(toy_model_config(), seed=0)
    assert report_gc.ok
    assert report_gc.worst < 1e-4
    assert report_gc.seconds < 120.0
    by_group = report_gc.worst_by_group()
    for group in ("xattn_wk", "xattn_wv", "gate_linear", "warmup"):
        assert group in by_group
    report("criterion-6 gradient correctness",
           f"27 combos, worst group-relative error {report_gc.worst:.2e}, {report_gc.seconds:.1f}s")


def test_criterion_7_linear_complexity():
    setup = fm.load_reference()
    cfg = setup.model
    for n_slow in (81, 1296, 5184, 7776):
        assert fm.cross_attn_flops(cfg, 2 * n_slow, 0) == 2 * fm.cross_attn_flops(cfg, n_slow, 0)
    base16 = fm.llm_forward_flops(replace(cfg, hybrid_indices=()), 16 * 81)
    sf96 = fm.llm_forward_flops(cfg, 16 * 81) + fm.cross_attn_flops(cfg, 96 * 81, 0)
    ratio = sf96 / base16
    assert ratio <= 1.03
    report("criterion-7 linear complexity",
           f"CA FLOPs double exactly; 96-frame slow-fast = {ratio:.4f}x the 16-frame baseline")


def test_criterion_8_permutation_softmax_causality():
    started = time.monotonic()
    ok, detail = selftest._softmax_row_sums(seed=0)
    assert ok, detail
    ok, detail2 = selftest._mha_permutation(seed=0)
    assert ok, detail2
    ok, detail3 = selftest._slow_permutation(toy_model_config(), seed=0)
    assert ok, detail3
    ok, detail4 = selftest._causality(toy_model_config(), seed=0)
    assert ok, detail4
    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    report("criterion-8 invariant suite", f"{detail}; {detail2}; {detail4}; {elapsed:.2f}s")


@pytest.mark.parametrize("command", ["synth", "compress", "forward", "gradcheck", "flops", "ablate"])
def test_criterion_9_cli_determinism(tmp_path, command):
    env = dict(os.environ)
    env["PYTHONPATH"] = str(SRC) + os.pathsep + env.get("PYTHONPATH", "")

    def run_in(workdir: Path):
        workdir.mkdir(parents=True, exist_ok=True)
        cfg = {
            "version": 1, "seed": 5, "precision": 64, "compression": None, "output_path": None,
            "model": {"num_layers": 2, "hidden_dim": 8, "num_heads": 2, "num_kv_heads": 1,
                      "head_dim": 4, "ffn_dim": 16, "vocab_size": 11, "hybrid_indices": [0],
                      "gate_mode": "token_dynamic", "query_mode": "text_only",
                      "integration": "hybrid", "init_mode": "copy"},
        }
        (workdir / "toy.json").write_text(json.dumps(cfg))
        steps = {
            "synth": [["synth", "--n", "8", "--d", "8", "--h", "2", "--w", "2", "--seed", "7", "--out", "f.sftf"]],
            "compress": [
                ["synth", "--n", "8", "--d", "8", "--h", "2", "--w", "2", "--seed", "7", "--out", "f.sftf"],
                ["compress", "--config", "8-s2", "--in", "f.sftf", "--out", "tok"],
            ],
            "forward": [
                ["synth", "--n", "16", "--d", "8", "--h", "2", "--w", "2", "--seed", "7", "--out", "f.sftf"],
                ["compress", "--config", "16-s1", "--in", "f.sftf", "--out", "tok"],
                ["forward", "--model", "toy.json", "--slow", "tok.slow.sftf", "--fast", "tok.fast.sftf",
                 "--synth-text", "4", "--out", "h.sftf", "--dump-attn", "attn"],
            ],
            "gradcheck": [["gradcheck", "--model", "toy.json", "--modes",
                           "token_dynamic/text_only/hybrid", "--json", "gc.json"]],
            "flops": [["flops", "--reference", "--json", "flops.json"]],
            "ablate": [["ablate", "--matrix", "matrix.json", "--out", "abl", "--samples", "4"]],
        }
        if command == "ablate":
            (workdir / "matrix.json").write_text(json.dumps({
                "version": 1,
                "variants": [{"gate_mode": "static", "query_mode": "all", "integration": "standalone_ffn"}],
            }))
        outputs = []
        for step in steps[command]:
            proc = subprocess.run(
                [sys.executable, "-m", "slowfast_mllm", *step],
                cwd=workdir, env=env, capture_output=True, text=True, timeout=300,
            )
            assert proc.returncode == 0, proc.stderr
            outputs.append(proc.stdout)
        return outputs

    out_a = run_in(tmp_path / "a")
    out_b = run_in(tmp_path / "b")
    assert out_a == out_b  # stdout byte-identical
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    report("criterion-9 determinism", f"{command}: stdout and all artifacts byte-identical across runs")
