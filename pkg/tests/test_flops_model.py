"""Analytic cost model vs the published efficiency table and hand arithmetic."""

from dataclasses import replace

import numpy as np
import pytest

from slowfast_mllm import flops_model as fm
from slowfast_mllm.configs import toy_model_config
from slowfast_mllm.hybrid_decoder import (
    GateMode,
    Integration,
    ModelConfig,
    init_model_params,
    named_param_arrays,
)


@pytest.fixture(scope="module")
def setup():
    return fm.load_reference()


class TestEfficiencyTable:
    def test_self_attention_rows_within_five_percent(self, setup):
        rows = [r for r in fm.efficiency_table(setup) if r.arch == "self_attn"]
        expected = {16: 19.64, 32: 40.21, 64: 85.57, 96: 136.16}
        for r in rows:
            assert abs(r.llm_rel_err) <= 0.05, r.frames
            assert r.paper_llm_tflops == expected[int(r.frames)]

    def test_slow_fast_rows_within_tolerance(self, setup):
        rows = [r for r in fm.efficiency_table(setup) if r.arch == "slow_fast"]
        assert [r.paper_llm_tflops for r in rows] == [19.80, 19.88]
        assert [r.paper_ca_tflops for r in rows] == [0.16, 0.24]
        for r in rows:
            assert abs(r.llm_rel_err) <= 0.05
            assert abs(r.ca_rel_err) <= 0.10

    def test_doubling_tokens_doubles_projection_term_exactly(self, setup):
        cfg = replace(setup.model, hybrid_indices=())
        rep1 = fm.cost_report(cfg, 1296)
        rep2 = fm.cost_report(cfg, 2592)
        assert rep2.breakdown["llm_projections"] == 2 * rep1.breakdown["llm_projections"]

    def test_slow_fast_llm_column_is_baseline_plus_gate_and_ca(self, setup):
        # same token count into the stack: the LLM-side difference is the CA share
        cfg = setup.model
        base = fm.llm_forward_flops(replace(cfg, hybrid_indices=()), 1296)
        assert fm.llm_forward_flops(cfg, 1296) == base

    def test_report_flags_tolerance(self, setup):
        report = fm.table7_report(setup)
        assert report["all_within_tolerance"] is True
        assert len(report["rows"]) == 6


class TestCrossAttnFlops:
    def test_zero_slow_tokens_cost_zero(self, setup):
        assert fm.cross_attn_flops(setup.model, 0, 0) == 0
        assert fm.cross_attn_flops(setup.model, 0, 128) == 0 + fm.cross_attn_flops_breakdown(setup.model, 0, 128)["xattn_gate"]

    def test_exactly_linear_in_slow_tokens(self, setup):
        cfg = setup.model
        for n_text in (0, 64):
            b1 = fm.cross_attn_flops_breakdown(cfg, 5184, n_text)
            b2 = fm.cross_attn_flops_breakdown(cfg, 10368, n_text)
            assert b2["xattn_kv_proj"] == 2 * b1["xattn_kv_proj"]
            assert b2["xattn_attention"] == 2 * b1["xattn_attention"]
        assert fm.cross_attn_flops(cfg, 10368, 0) == 2 * fm.cross_attn_flops(cfg, 5184, 0)

    def test_published_ca_values(self, setup):
        cfg = setup.model
        assert abs(fm.cross_attn_flops(cfg, 64 * 81, 0) / fm.TFLOP - 0.16) / 0.16 <= 0.10
        assert abs(fm.cross_attn_flops(cfg, 96 * 81, 0) / fm.TFLOP - 0.24) / 0.24 <= 0.10


class TestParamCount:
    def test_added_matches_hand_arithmetic(self, setup):
        # 4 layers x (3584*512*2 kv projections + 3584 gate weights + 1 bias + 1 warm-up)
        want = 4 * (3584 * 512 * 2 + 3584 + 1 + 1)
        assert want == 14_694_408
        _, added = fm.param_count(setup.model, setup.vision_encoder_params)
        assert added == want

    def test_zero_hybrid_layers_add_nothing(self, setup):
        cfg = replace(setup.model, hybrid_indices=())
        total, added = fm.param_count(cfg, setup.vision_encoder_params)
        assert added == 0
        assert round(total / 1e9, 2) == 8.48

    def test_rounding_to_published_totals(self, setup):
        total, added = fm.param_count(setup.model, setup.vision_encoder_params)
        assert round(total / 1e9, 2) == 8.50
        assert round(100 * added / total, 1) == 0.2

    def test_added_counts_match_instantiated_toy_params(self):
        # the analytic accounting equals the actual array sizes on a toy model
        for integration in Integration:
            for gate in GateMode:
                cfg = toy_model_config(integration=integration, gate_mode=gate)
                params = init_model_params(cfg, seed=0)
                arrays = named_param_arrays(params)
                new_entries = sum(
                    a.size for name, a in arrays.items()
                    if name.startswith(("hybrid.", "standalone."))
                )
                scalars = len(params.hybrid) + len(params.standalone)  # warm-ups
                scalars += sum(sp.with_ffn for sp in params.standalone.values())
                if cfg.init_mode.value == "share":
                    continue
                assert fm.added_param_count(cfg) == new_entries + scalars, (integration, gate)

    def test_llm_param_count_matches_instantiated_arrays(self):
        cfg = toy_model_config()
        params = init_model_params(cfg, seed=0)
        arrays = named_param_arrays(params)
        host = sum(a.size for n, a in arrays.items() if not n.startswith(("hybrid.", "standalone.")))
        host += cfg.vocab_size * cfg.hidden_dim  # embedding table is not materialized
        assert fm.llm_param_count(cfg) == host


class TestScalingClaims:
    def test_llm_flops_monotone_and_superlinear(self, setup):
        cfg = replace(setup.model, hybrid_indices=())
        values = [fm.llm_forward_flops(cfg, n) for n in (100, 200, 400)]
        assert values[0] < values[1] < values[2]
        assert values[1] > 2 * values[0]
        assert values[2] > 2 * values[1]

    def test_slow_fast_barely_grows_while_self_attn_explodes(self, setup):
        cfg = setup.model
        base_cfg = replace(cfg, hybrid_indices=())
        base16 = fm.llm_forward_flops(base_cfg, 16 * 81)
        sf96 = fm.llm_forward_flops(cfg, 16 * 81) + fm.cross_attn_flops(cfg, 96 * 81, 0)
        sa96 = fm.llm_forward_flops(base_cfg, 96 * 81)
        assert sf96 < 1.05 * base16
        assert sa96 > 6 * sf96

    def test_sixteen_to_sixty_four_ratio_is_about_fourfold(self, setup):
        cfg = replace(setup.model, hybrid_indices=())
        ratio = fm.llm_forward_flops(cfg, 64 * 81) / fm.llm_forward_flops(cfg, 16 * 81)
        assert 4.0 < ratio < 4.8

    def test_breakdown_reconciles_exactly(self, setup):
        rep = fm.cost_report(setup.model, 1296, n_slow=5184, n_text=32,
                             vision_encoder_params=setup.vision_encoder_params)
        assert sum(rep.breakdown.values()) == rep.llm_flops + rep.xattn_flops
        assert rep.total_flops == rep.llm_flops + rep.xattn_flops

    def test_rejects_zero_tokens(self, setup):
        with pytest.raises(ValueError):
            fm.llm_forward_flops(setup.model, 0)
        with pytest.raises(ValueError):
            fm.cross_attn_flops(setup.model, -1, 0)


class TestReferenceConfig:
    def test_reference_loads_and_validates(self, setup):
        assert isinstance(setup.model, ModelConfig)
        assert setup.model.hybrid_indices == (0, 8, 16, 24)
        assert setup.tokens_per_frame == 81
        assert setup.min_fast_frames == 16

    def test_token_count_matches_published_column(self, setup):
        assert setup.min_fast_frames * setup.tokens_per_frame == 1296

    def test_gate_param_count_by_mode(self):
        d = 10
        base = dict(num_layers=2, hidden_dim=d, num_heads=2, num_kv_heads=1,
                    head_dim=4, ffn_dim=8, vocab_size=7, hybrid_indices=(0,))
        assert fm.gate_param_count(ModelConfig(**base, gate_mode=GateMode.STATIC)) == 1
        assert fm.gate_param_count(ModelConfig(**base, gate_mode=GateMode.TOKEN_DYNAMIC)) == d + 1 + 1
        assert fm.gate_param_count(ModelConfig(**base, gate_mode=GateMode.CHANNEL_DYNAMIC)) == d * d + d + 1
