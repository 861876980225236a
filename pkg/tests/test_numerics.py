"""Numerics kernels vs independent oracles and spec'd edge cases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast_mllm import numerics as nm
from slowfast_mllm import reference

# softmax([1, 2, 3]) from a 50-digit mpmath evaluation, frozen
SOFTMAX_123 = (0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953)


def rel_err(analytic, fd):
    scale = max(float(np.abs(analytic).max()), float(np.abs(fd).max()), 1e-12)
    return float(np.abs(analytic - fd).max()) / scale


@st.composite
def small_matrix(draw, max_dim=8, scale=5.0):
    m = draw(st.integers(1, max_dim))
    n = draw(st.integers(1, max_dim))
    seed = draw(st.integers(0, 2**31))
    return np.random.default_rng(seed).normal(scale=scale, size=(m, n))


class TestMatmul:
    def test_scalar_product(self):
        assert nm.matmul(np.array([[2.0]]), np.array([[3.0]])).tolist() == [[6.0]]

    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 5))
        assert np.array_equal(nm.matmul(np.eye(3), x), x)

    def test_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
        assert np.allclose(nm.matmul(a, b), reference.matmul_loops(a, b), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(nm.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            nm.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


class TestSoftmax:
    def test_uniform(self):
        out = nm.softmax_rows(np.zeros((1, 3)))
        assert np.allclose(out, 1.0 / 3.0, atol=1e-15)

    def test_stability_no_overflow(self):
        out = nm.softmax_rows(np.array([[1000.0, 0.0]]))
        assert abs(out[0, 0] - 1.0) <= 1e-12
        assert abs(out[0, 1]) <= 1e-12

    def test_high_precision_reference(self):
        out = nm.softmax_rows(np.array([[1.0, 2.0, 3.0]]))
        assert np.allclose(out[0], SOFTMAX_123, atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(small_matrix(scale=50.0))
    def test_rows_sum_to_one(self, x):
        out = nm.softmax_rows(x)
        assert np.all(out >= 0)
        assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-6


class TestRmsNorm:
    def test_zero_row_fixed_point(self):
        out = nm.rms_norm(np.zeros((1, 4)), np.ones(4), eps=1e-6)
        assert np.array_equal(out, np.zeros((1, 4)))

    def test_forced_by_formula(self):
        out = nm.rms_norm(np.array([[3.0, 4.0]]), np.ones(2), eps=1e-6)
        assert np.allclose(out[0], np.array([3.0, 4.0]) / np.sqrt(12.5 + 1e-6), atol=1e-15)

    def test_against_scalar_loop(self):
        rng = np.random.default_rng(2)
        x, w = rng.normal(size=(2, 8)), rng.normal(size=8)
        assert np.allclose(nm.rms_norm(x, w, 1e-6), reference.rms_norm_loops(x, w, 1e-6), atol=1e-12)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            nm.rms_norm(np.ones((1, 2)), np.ones(2), eps=0.0)


def make_params(rng, d=8, heads=2, kv=1, dh=4):
    return nm.AttentionParams(
        rng.normal(size=(d, heads * dh)),
        rng.normal(size=(d, kv * dh)),
        rng.normal(size=(d, kv * dh)),
        rng.normal(size=(heads * dh, d)),
        heads, kv, dh,
    )


class TestMhaForward:
    def test_single_key_broadcasts_value(self):
        rng = np.random.default_rng(3)
        p = make_params(rng)
        q_in = rng.normal(size=(4, 8))
        kv_in = rng.normal(size=(1, 8))
        out, weights = nm.mha_forward(q_in, kv_in, p)
        assert np.allclose(weights, 1.0, atol=1e-15)
        # the lone value vector serves every query head in its group
        expected_row = np.tile(kv_in @ p.w_v, (1, p.groups)) @ p.w_o
        assert np.allclose(out, np.repeat(expected_row, 4, axis=0), atol=1e-12)

    def test_causal_mask_zeroes_future(self):
        rng = np.random.default_rng(4)
        p = make_params(rng)
        x = rng.normal(size=(5, 8))
        _, weights = nm.mha_forward(x, x, p, causal=True)
        for i in range(5):
            assert np.all(weights[:, i, i + 1 :] == 0.0)

    def test_against_per_head_oracle(self):
        rng = np.random.default_rng(5)
        p = make_params(rng)
        q_in = rng.normal(size=(3, 8))
        kv_in = rng.normal(size=(4, 8))
        out, weights = nm.mha_forward(q_in, kv_in, p)
        ref_out, ref_w = reference.mha_per_head_loops(q_in, kv_in, p, causal=False)
        assert np.allclose(out, ref_out, atol=1e-12)
        assert np.allclose(weights, ref_w, atol=1e-12)

    def test_grouped_heads_against_oracle(self):
        rng = np.random.default_rng(6)
        p = make_params(rng, d=12, heads=4, kv=2, dh=4)
        q_in = rng.normal(size=(3, 12))
        kv_in = rng.normal(size=(5, 12))
        out, _ = nm.mha_forward(q_in, kv_in, p)
        ref_out, _ = reference.mha_per_head_loops(q_in, kv_in, p, causal=False)
        assert np.allclose(out, ref_out, atol=1e-12)

    def test_single_token_causal_equals_unmasked(self):
        rng = np.random.default_rng(7)
        p = make_params(rng)
        x = rng.normal(size=(1, 8))
        a, wa = nm.mha_forward(x, x, p, causal=True)
        b, wb = nm.mha_forward(x, x, p, causal=False)
        assert np.array_equal(a, b) and np.array_equal(wa, wb)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_kv_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        p = make_params(rng)
        q_in = rng.normal(size=(3, 8))
        kv_in = rng.normal(size=(6, 8))
        perm = rng.permutation(6)
        out, w = nm.mha_forward(q_in, kv_in, p)
        out_p, w_p = nm.mha_forward(q_in, kv_in[perm], p)
        assert np.abs(out - out_p).max() <= 1e-6
        assert np.abs(w[:, :, perm] - w_p).max() <= 1e-6

    def test_dimension_error(self):
        rng = np.random.default_rng(8)
        p = make_params(rng)
        with pytest.raises(nm.ShapeError):
            nm.mha_forward(rng.normal(size=(3, 7)), rng.normal(size=(4, 8)), p)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        p = make_params(rng)
        x = rng.normal(size=(4, 8))
        a, _ = nm.mha_forward(x, x, p, causal=True)
        b, _ = nm.mha_forward(x.copy(), x.copy(), p, causal=True)
        assert np.array_equal(a, b)


class TestMhaBackward:
    def setup_method(self):
        self.rng = np.random.default_rng(10)
        self.p = make_params(self.rng)
        self.q_in = self.rng.normal(size=(3, 8))
        self.kv_in = self.rng.normal(size=(4, 8))

    def test_zero_grad_gives_zero(self):
        _, _, cache = nm.mha_forward_with_cache(self.q_in, self.kv_in, self.p)
        grads = nm.mha_backward(np.zeros((3, 8)), cache)
        for g in (grads.q_input, grads.kv_input, grads.w_q, grads.w_k, grads.w_v, grads.w_o):
            assert np.all(g == 0.0)

    def test_matches_finite_differences(self):
        direction = self.rng.normal(size=(3, 8))
        _, _, cache = nm.mha_forward_with_cache(self.q_in, self.kv_in, self.p)
        grads = nm.mha_backward(direction, cache)

        def loss_of(replace_attr):
            def f(x):
                vals = {"w_q": self.p.w_q, "w_k": self.p.w_k, "w_v": self.p.w_v, "w_o": self.p.w_o}
                q_in, kv_in = self.q_in, self.kv_in
                if replace_attr in vals:
                    vals[replace_attr] = x
                elif replace_attr == "q_input":
                    q_in = x
                else:
                    kv_in = x
                p = nm.AttentionParams(vals["w_q"], vals["w_k"], vals["w_v"], vals["w_o"], 2, 1, 4)
                out, _ = nm.mha_forward(q_in, kv_in, p)
                return float((out * direction).sum())
            return f

        for attr, analytic, tensor in [
            ("w_q", grads.w_q, self.p.w_q),
            ("w_k", grads.w_k, self.p.w_k),
            ("w_v", grads.w_v, self.p.w_v),
            ("w_o", grads.w_o, self.p.w_o),
            ("q_input", grads.q_input, self.q_in),
            ("kv_input", grads.kv_input, self.kv_in),
        ]:
            fd = nm.finite_diff_grad(loss_of(attr), tensor, 1e-5)
            assert rel_err(analytic, fd) < 1e-4, attr

    def test_single_key_queries_get_no_gradient(self):
        # softmax over one key is constant, so the output cannot depend on q
        kv_in = self.rng.normal(size=(1, 8))
        _, _, cache = nm.mha_forward_with_cache(self.q_in, kv_in, self.p)
        grads = nm.mha_backward(self.rng.normal(size=(3, 8)), cache)
        assert np.allclose(grads.q_input, 0.0, atol=1e-15)
        assert np.allclose(grads.w_q, 0.0, atol=1e-15)

    def test_missing_cache_rejected(self):
        with pytest.raises(nm.UsageError):
            nm.mha_backward(np.zeros((3, 8)), None)

    def test_stale_cache_shape_rejected(self):
        _, _, cache = nm.mha_forward_with_cache(self.q_in, self.kv_in, self.p)
        with pytest.raises(nm.UsageError):
            nm.mha_backward(np.zeros((5, 8)), cache)


class TestFiniteDiff:
    def test_sum_gradient_is_ones(self):
        p = np.random.default_rng(11).normal(size=(2, 3))
        g = nm.finite_diff_grad(lambda x: float(x.sum()), p, 1e-5)
        assert np.allclose(g, 1.0, atol=1e-9)

    def test_quadratic(self):
        g = nm.finite_diff_grad(lambda x: float((x**2).sum()), np.array([1.0, 2.0]), 1e-5)
        assert np.allclose(g, [2.0, 4.0], atol=1e-6)

    def test_eps_window_enforced(self):
        with pytest.raises(ValueError):
            nm.finite_diff_grad(lambda x: 0.0, np.ones(2), eps=1e-2)

    def test_nonfinite_evaluation_rejected(self):
        with pytest.raises(nm.NumericsError):
            nm.finite_diff_grad(lambda x: float("nan"), np.ones(2), 1e-5)


class TestRopeAndSwiglu:
    def test_rope_is_orthogonal(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(5, 2, 8))
        rotated, _ = nm.rope_fwd(x, np.arange(5))
        assert np.allclose((rotated**2).sum(-1), (x**2).sum(-1), atol=1e-12)

    def test_rope_position_zero_is_identity(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(1, 2, 8))
        rotated, _ = nm.rope_fwd(x, np.zeros(1, dtype=int))
        assert np.allclose(rotated, x, atol=1e-15)

    def test_rope_backward_matches_fd(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(3, 2, 4))
        direction = rng.normal(size=x.shape)

        def f(v):
            r, _ = nm.rope_fwd(v, np.arange(3))
            return float((r * direction).sum())

        _, cache = nm.rope_fwd(x, np.arange(3))
        assert rel_err(nm.rope_bwd(direction, cache), nm.finite_diff_grad(f, x, 1e-5)) < 1e-6

    def test_swiglu_backward_matches_fd(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(3, 4))
        wg, wu, wd = rng.normal(size=(4, 6)), rng.normal(size=(4, 6)), rng.normal(size=(6, 4))
        direction = rng.normal(size=(3, 4))
        out, cache = nm.swiglu_fwd(x, wg, wu, wd)
        g_x, g_wg, g_wu, g_wd = nm.swiglu_bwd(direction, cache)
        for analytic, tensor, name in ((g_wg, wg, "wg"), (g_wu, wu, "wu"), (g_wd, wd, "wd"), (g_x, x, "x")):
            def f(v, name=name):
                mats = {"wg": wg, "wu": wu, "wd": wd, "x": x}
                mats[name] = v
                o, _ = nm.swiglu_fwd(mats["x"], mats["wg"], mats["wu"], mats["wd"])
                return float((o * direction).sum())
            assert rel_err(analytic, nm.finite_diff_grad(f, tensor, 1e-5)) < 1e-6, name
