"""Deterministic synthetic frame features and text embeddings for tests/CLI."""

from __future__ import annotations

import numpy as np

PATTERNS = ("random", "ramp", "impulse")


def synth_frames(n: int, d: int, h: int, w: int, seed: int, pattern: str = "random", dtype=np.float64) -> np.ndarray:
    """Frame-feature tensor [n, d, h, w].

    random:  seeded standard normals.
    ramp:    frame f has mean exactly f (an alternating +-0.25 offset cancels
             pairwise; with an odd cell count the last cell's offset is 0).
             Useful for verifying sampling/pooling arithmetic end to end.
    impulse: zeros with frame n//2 set to 1.
    """
    if min(n, d, h, w) < 1:
        raise ValueError(f"dims must be positive, got n={n} d={d} h={h} w={w}")
    if pattern == "random":
        return np.random.default_rng(seed).normal(size=(n, d, h, w)).astype(dtype)
    if pattern == "ramp":
        cells = d * h * w
        offsets = np.where(np.arange(cells) % 2 == 0, 0.25, -0.25)
        if cells % 2 == 1:
            offsets[-1] = 0.0
        frame = offsets.reshape(d, h, w)
        out = np.empty((n, d, h, w), dtype=dtype)
        for f in range(n):
            out[f] = f + frame
        return out
    if pattern == "impulse":
        out = np.zeros((n, d, h, w), dtype=dtype)
        out[n // 2] = 1.0
        return out
    raise ValueError(f"unknown pattern {pattern!r}; valid: {', '.join(PATTERNS)}")


def synth_text(n: int, d: int, seed: int, dtype=np.float64) -> np.ndarray:
    """Synthetic text embeddings [n, d] (no tokenizer at this scale)."""
    if n < 1 or d < 1:
        raise ValueError(f"dims must be positive, got n={n} d={d}")
    return np.random.default_rng(seed).normal(size=(n, d)).astype(dtype)
