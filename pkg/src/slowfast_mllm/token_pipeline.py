"""Slow/fast visual-token pipeline.

Per-frame feature maps are spatially pooled 2x2 into slow frames; fast frames
are produced by four compression steps: zero-pad the frame axis, uniformly
sample with a stride, adaptively average-pool along time, and flatten to a
token sequence. Frame-count configs are written "64-s4", "96-p6", "128-s2p4".
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError

__all__ = [
    "FrameFeatures",
    "CompressionConfig",
    "TokenSequences",
    "ConfigParseError",
    "spatial_pool_2x2",
    "pad_and_sample",
    "temporal_adaptive_pool",
    "compress_fast",
    "parse_frame_config",
    "flatten_frames",
    "tokenize_frames",
]

DEFAULT_MIN_FAST_FRAMES = 16


class ConfigParseError(ValueError):
    """Malformed frame-config string; carries the offending position."""

    def __init__(self, text: str, pos: int, message: str):
        self.text = text
        self.pos = pos
        super().__init__(f"bad frame config {text!r} at position {pos}: {message}")


@dataclass
class FrameFeatures:
    """Per-frame feature maps, data laid out [n_frames, channels, height, width]."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeError(f"FrameFeatures expects rank-4 data, got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ShapeError(f"FrameFeatures dims must all be >= 1, got {self.data.shape}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


@dataclass
class CompressionConfig:
    """Fast-token compression knobs: sampling stride, temporal pooling stride,
    and the minimum number of fast frames kept."""

    sample_stride: int = 1
    pool_stride: int = 1
    min_fast_frames: int = DEFAULT_MIN_FAST_FRAMES

    def __post_init__(self):
        for name in ("sample_stride", "pool_stride", "min_fast_frames"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"CompressionConfig.{name} must be an int >= 1, got {v!r}")


@dataclass
class TokenSequences:
    """Slow and fast token matrices [tokens, d] plus their frame bookkeeping."""

    slow: np.ndarray
    fast: np.ndarray
    tokens_per_frame: int
    fast_frames: int


def spatial_pool_2x2(frames: FrameFeatures) -> FrameFeatures:
    """2x2 spatial average pooling; halves height and width (both must be even)."""
    data = frames.data
    n, c, h, w = data.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ShapeError(f"spatial_pool_2x2 needs even height/width, got {h}x{w}")
    pooled = (
        data[:, :, 0::2, 0::2]
        + data[:, :, 0::2, 1::2]
        + data[:, :, 1::2, 0::2]
        + data[:, :, 1::2, 1::2]
    ) * 0.25
    return FrameFeatures(pooled)


def _padded_length(n_frames: int, cfg: CompressionConfig) -> int:
    block = cfg.sample_stride * cfg.pool_stride
    return ((n_frames + block - 1) // block) * block


def pad_and_sample(n_frames: int, cfg: CompressionConfig) -> list[int]:
    """Frame indices after zero-padding and uniform strided sampling.

    The frame axis is padded to n', the smallest multiple of
    sample_stride*pool_stride >= n_frames, then n'' = max(n'//stride, min)
    indices are drawn as floor(i*n'/n''). Indices >= n_frames address padded
    zero frames; when n'' > n' indices repeat.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    n_padded = _padded_length(n_frames, cfg)
    n_sampled = max(n_padded // cfg.sample_stride, cfg.min_fast_frames)
    return [(i * n_padded) // n_sampled for i in range(n_sampled)]


def temporal_adaptive_pool(frames: np.ndarray, cfg: CompressionConfig) -> np.ndarray:
    """Adaptive average pooling along the frame axis of frames [n,c,h,w].

    Output count is max(n//pool_stride, min_fast_frames), capped at n so the
    op never upsamples. Output frame i averages input frames in the bucket
    [floor(i*n/out), ceil((i+1)*n/out)).
    """
    n = frames.shape[0]
    if n < 1:
        raise ValueError("temporal_adaptive_pool needs at least one frame")
    out_count = min(max(n // cfg.pool_stride, cfg.min_fast_frames), n)
    if out_count == n:
        return frames.copy()
    out = np.empty((out_count,) + frames.shape[1:], dtype=frames.dtype)
    for i in range(out_count):
        start = (i * n) // out_count
        end = -((-(i + 1) * n) // out_count)  # ceil((i+1)*n/out)
        acc = frames[start].copy()
        for j in range(start + 1, end):
            acc += frames[j]
        out[i] = acc / (end - start)
    return out


def flatten_frames(frames: FrameFeatures) -> np.ndarray:
    """[n,c,h,w] -> token matrix [n*h*w, c], frame-major then row-major spatial."""
    n, c, h, w = frames.data.shape
    return frames.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def compress_fast(slow_frames: FrameFeatures, cfg: CompressionConfig) -> np.ndarray:
    """Fast visual tokens [k_f, d] from already spatially pooled slow frames.

    Composition of pad_and_sample -> gather (zero frames for padded indices)
    -> temporal_adaptive_pool -> flatten.
    """
    data = slow_frames.data
    n = data.shape[0]
    indices = pad_and_sample(n, cfg)
    gathered = np.zeros((len(indices),) + data.shape[1:], dtype=data.dtype)
    for row, idx in enumerate(indices):
        if idx < n:
            gathered[row] = data[idx]
    pooled = temporal_adaptive_pool(gathered, cfg)
    return flatten_frames(FrameFeatures(pooled))


def tokenize_frames(frames: FrameFeatures, cfg: CompressionConfig) -> TokenSequences:
    """Full pipeline: 2x2 spatial pool, then slow tokens and compressed fast tokens."""
    slow_frames = spatial_pool_2x2(frames)
    slow = flatten_frames(slow_frames)
    fast = compress_fast(slow_frames, cfg)
    tokens_per_frame = slow_frames.height * slow_frames.width
    return TokenSequences(
        slow=slow,
        fast=fast,
        tokens_per_frame=tokens_per_frame,
        fast_frames=fast.shape[0] // tokens_per_frame,
    )


_CONFIG_RE = re.compile(r"^(?P<frames>[0-9]+)-(?:s(?P<s>[0-9]+))?-?(?:p(?P<p>[0-9]+))?$")


def parse_frame_config(
    text: str, min_fast_frames: int = DEFAULT_MIN_FAST_FRAMES
) -> tuple[int, CompressionConfig]:
    """Parse "64-s4" / "96-p6" / "128-s2p4" (also "128-s2-p4") into
    (input_frames, CompressionConfig). At least one of s/p must appear."""
    m = _CONFIG_RE.match(text)
    if m is None:
        pos = 0
        digits = re.match(r"[0-9]+", text)
        if digits:
            pos = digits.end()
        raise ConfigParseError(text, pos, "expected <frames>-s<int>p<int> with at least one of s/p")
    if m.group("s") is None and m.group("p") is None:
        raise ConfigParseError(text, len(text), "at least one of s<int> / p<int> is required")
    frames = int(m.group("frames"))
    if frames < 1:
        raise ConfigParseError(text, 0, "frame count must be >= 1")
    stride = int(m.group("s")) if m.group("s") else 1
    pool = int(m.group("p")) if m.group("p") else 1
    if stride < 1:
        raise ConfigParseError(text, text.index("s") + 1, "sample stride must be >= 1")
    if pool < 1:
        raise ConfigParseError(text, text.index("p") + 1, "pool stride must be >= 1")
    return frames, CompressionConfig(stride, pool, min_fast_frames)
