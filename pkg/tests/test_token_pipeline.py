"""Slow/fast token pipeline vs the straight-line compression oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast_mllm import reference
from slowfast_mllm import token_pipeline as tp
from slowfast_mllm.synth import synth_frames


class TestSpatialPool:
    def test_18x18_grid_gives_81_tokens_per_frame(self):
        frames = tp.FrameFeatures(np.random.default_rng(0).normal(size=(2, 3, 18, 18)))
        pooled = tp.spatial_pool_2x2(frames)
        assert pooled.data.shape == (2, 3, 9, 9)
        assert pooled.height * pooled.width == 81

    def test_constant_frame_stays_constant(self):
        frames = tp.FrameFeatures(np.full((1, 2, 4, 4), 7.5))
        pooled = tp.spatial_pool_2x2(frames)
        assert np.array_equal(pooled.data, np.full((1, 2, 2, 2), 7.5))

    def test_against_block_loop_oracle(self):
        data = np.random.default_rng(1).normal(size=(1, 1, 4, 4))
        pooled = tp.spatial_pool_2x2(tp.FrameFeatures(data))
        assert np.array_equal(pooled.data, reference.spatial_pool_loops(data))

    def test_odd_dims_rejected(self):
        with pytest.raises(tp.ShapeError):
            tp.spatial_pool_2x2(tp.FrameFeatures(np.zeros((1, 1, 3, 4))))

    def test_preserves_per_frame_mean(self):
        data = np.random.default_rng(2).normal(size=(4, 3, 6, 8))
        pooled = tp.spatial_pool_2x2(tp.FrameFeatures(data))
        drift = np.abs(pooled.data.mean(axis=(1, 2, 3)) - data.mean(axis=(1, 2, 3)))
        assert drift.max() <= 1e-12


class TestPadAndSample:
    def test_stride_four_sixty_four_frames(self):
        idx = tp.pad_and_sample(64, tp.CompressionConfig(4, 1, 16))
        assert idx == [4 * i for i in range(16)]

    def test_step_formula_small_case(self):
        # n=10, stride 4, pool 1, min 2: padded to 12, max(12//4, 2)=3 indices
        assert tp.pad_and_sample(10, tp.CompressionConfig(4, 1, 2)) == [0, 4, 8]

    def test_oversample_repeats_indices(self):
        idx = tp.pad_and_sample(8, tp.CompressionConfig(1, 1, 16))
        assert idx == [(i * 8) // 16 for i in range(16)]
        assert len(idx) == 16

    def test_rejects_empty_video(self):
        with pytest.raises(ValueError):
            tp.pad_and_sample(0, tp.CompressionConfig())


class TestTemporalAdaptivePool:
    def test_sixty_four_to_sixteen_consecutive_buckets(self):
        frames = np.random.default_rng(3).normal(size=(64, 2, 2, 2))
        out = tp.temporal_adaptive_pool(frames, tp.CompressionConfig(1, 4, 16))
        assert out.shape[0] == 16
        for i in range(16):
            want = frames[4 * i] + frames[4 * i + 1] + frames[4 * i + 2] + frames[4 * i + 3]
            assert np.array_equal(out[i], want / 4)

    def test_stride_one_is_identity(self):
        frames = np.random.default_rng(4).normal(size=(20, 1, 2, 2))
        out = tp.temporal_adaptive_pool(frames, tp.CompressionConfig(1, 1, 16))
        assert np.array_equal(out, frames)

    def test_bucket_boundaries_against_loop_oracle(self):
        frames = np.random.default_rng(5).normal(size=(6, 1, 2, 2))
        out = tp.temporal_adaptive_pool(frames, tp.CompressionConfig(1, 4, 2))
        assert out.shape[0] == 2
        assert np.array_equal(out, reference.adaptive_pool_loops(frames, 2))

    def test_never_upsamples(self):
        frames = np.random.default_rng(6).normal(size=(5, 1, 1, 1))
        out = tp.temporal_adaptive_pool(frames, tp.CompressionConfig(1, 4, 16))
        assert out.shape[0] == 5  # capped at the input count


class TestCompressFast:
    def test_named_configs_give_sixteen_fast_frames(self):
        rng = np.random.default_rng(7)
        for text in ("64-s4", "64-p4", "96-p6", "128-s2p4", "48-s3"):
            n, cfg = tp.parse_frame_config(text)
            fast = tp.compress_fast(tp.FrameFeatures(rng.normal(size=(n, 2, 2, 2))), cfg)
            assert fast.shape == (16 * 4, 2), text

    def test_identity_when_unstrided(self):
        frames = tp.FrameFeatures(np.random.default_rng(8).normal(size=(16, 3, 2, 2)))
        fast = tp.compress_fast(frames, tp.CompressionConfig(1, 1, 16))
        assert np.array_equal(fast, tp.flatten_frames(frames))

    def test_flatten_order_frame_major_then_rows(self):
        data = np.arange(2 * 3 * 2 * 2, dtype=np.float64).reshape(2, 3, 2, 2)
        tokens = tp.flatten_frames(tp.FrameFeatures(data))
        # token 0 is frame 0, spatial (0,0), all channels
        assert np.array_equal(tokens[0], data[0, :, 0, 0])
        assert np.array_equal(tokens[1], data[0, :, 0, 1])
        assert np.array_equal(tokens[2], data[0, :, 1, 0])
        assert np.array_equal(tokens[4], data[1, :, 0, 0])

    def test_tokenize_frames_counts(self):
        frames = tp.FrameFeatures(np.random.default_rng(9).normal(size=(64, 3, 18, 18)))
        _, cfg = tp.parse_frame_config("64-p4")
        seqs = tp.tokenize_frames(frames, cfg)
        assert seqs.tokens_per_frame == 81
        assert seqs.fast_frames == 16
        assert seqs.fast.shape == (16 * 81, 3)
        assert seqs.slow.shape == (64 * 81, 3)

    @settings(max_examples=120, deadline=None)
    @given(
        n=st.integers(1, 512),
        k=st.integers(1, 8),
        t=st.integers(1, 8),
        m=st.integers(1, 32),
        seed=st.integers(0, 2**31),
    )
    def test_matches_straight_line_oracle(self, n, k, t, m, seed):
        data = np.random.default_rng(seed).normal(size=(n, 2, 2, 2))
        got = tp.compress_fast(tp.FrameFeatures(data), tp.CompressionConfig(k, t, m))
        want = reference.compress_fast_straightline(data, k, t, m)
        assert got.shape == want.shape
        assert np.array_equal(got, want)

    def test_ramp_bucket_means(self):
        frames = synth_frames(64, 2, 4, 4, seed=0, pattern="ramp")
        _, cfg = tp.parse_frame_config("64-p4")
        seqs = tp.tokenize_frames(tp.FrameFeatures(frames), cfg)
        per_frame = seqs.fast.reshape(seqs.fast_frames, seqs.tokens_per_frame, -1)
        for i in range(seqs.fast_frames):
            assert float(per_frame[i].mean()) == np.mean(np.arange(4 * i, 4 * i + 4.0))


class TestParseFrameConfig:
    @pytest.mark.parametrize(
        "text,frames,stride,pool",
        [
            ("96-p6", 96, 1, 6),
            ("48-s3", 48, 3, 1),
            ("64-s4", 64, 4, 1),
            ("128-s2p4", 128, 2, 4),
            ("128-s2-p4", 128, 2, 4),
        ],
    )
    def test_valid_strings(self, text, frames, stride, pool):
        n, cfg = tp.parse_frame_config(text)
        assert (n, cfg.sample_stride, cfg.pool_stride) == (frames, stride, pool)
        assert cfg.min_fast_frames == 16

    @pytest.mark.parametrize("bad", ["64", "64-", "-s4", "64-q4", "64-s", "64-s0", "64-p0", "s4", ""])
    def test_invalid_strings(self, bad):
        with pytest.raises(tp.ConfigParseError) as info:
            tp.parse_frame_config(bad)
        assert "position" in str(info.value)
