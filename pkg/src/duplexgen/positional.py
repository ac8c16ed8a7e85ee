"""Shared temporal axis for video and audio latents, plus 1D rotary embedding.

Video latents sit at integer frame indices; audio latents at fractional
sub-frame indices, so both modalities live in the same unit (video
frames) and relative offsets across modalities are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class TemporalIndexMap:
    """Per-latent temporal index in video-frame units."""

    indices: np.ndarray  # float32, one entry per latent
    source: str  # "video" | "talk-audio" | "listen-audio"

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim % 2 != 0:
            raise ValueError(f"head_dim must be even, got {self.head_dim}")
        if self.base <= 1:
            raise ValueError(f"base must exceed 1, got {self.base}")


def video_temporal_index(flat_index: int, h: int, w: int) -> float:
    """Frame number of the flat video latent index (H*W latents per frame)."""
    if flat_index < 0:
        raise IndexError(f"negative latent index {flat_index}")
    return float(flat_index // (h * w))


def audio_temporal_index(k: int, s: int) -> float:
    """Sub-frame index of audio latent k: frame + (k mod S)/S."""
    if s < 1:
        raise ValueError(f"audio latents per frame must be >= 1, got {s}")
    if k < 0:
        raise IndexError(f"negative latent index {k}")
    return k // s + (k % s) / s


def video_index_map(num_frames: int, h: int, w: int) -> TemporalIndexMap:
    idx = np.repeat(np.arange(num_frames, dtype=np.float32), h * w)
    return TemporalIndexMap(indices=idx, source="video")


def audio_index_map(num_frames: int, s: int, source: str) -> TemporalIndexMap:
    k = np.arange(num_frames * s)
    idx = (k // s + (k % s) / s).astype(np.float32)
    return TemporalIndexMap(indices=idx, source=source)


def token_index_map(frames: np.ndarray, tokens_per_frame: int, source: str) -> TemporalIndexMap:
    """Index map for window tokens: each window's tokens carry its anchor frame."""
    idx = np.repeat(np.asarray(frames, dtype=np.float32), tokens_per_frame)
    return TemporalIndexMap(indices=idx, source=source)


def rope_tables(indices: TemporalIndexMap | np.ndarray, cfg: RopeConfig) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (n, head_dim/2) for the given temporal indices.

    Angles are formed in float64 before the trig so large indices do not
    lose phase accuracy, then cast to float32.
    """
    t = indices.indices if isinstance(indices, TemporalIndexMap) else np.asarray(indices)
    half = cfg.head_dim // 2
    freqs = cfg.base ** (-np.arange(half, dtype=np.float64) * 2.0 / cfg.head_dim)
    ang = t.astype(np.float64)[:, None] * freqs[None, :]
    return np.cos(ang).astype(np.float32), np.sin(ang).astype(np.float32)


def apply_rope(vectors, indices: TemporalIndexMap | np.ndarray, cfg: RopeConfig):
    """Rotate feature pairs of `vectors` (..., n, head_dim) by t * base^(-2m/head_dim).

    Index t = 0 is an exact identity; every rotation preserves the norm
    of each feature pair. Works on Tensors (differentiable) and arrays.
    """
    vt = T.as_tensor(vectors)
    if vt.shape[-1] != cfg.head_dim:
        raise T.ShapeMismatchError(f"last dim {vt.shape[-1]} != head_dim {cfg.head_dim}")
    n = vt.shape[-2]
    t = indices.indices if isinstance(indices, TemporalIndexMap) else np.asarray(indices)
    if len(t) != n:
        raise T.ShapeMismatchError(f"{n} vectors but {len(t)} temporal indices")
    cos, sin = rope_tables(t, cfg)
    if vt.dtype == np.float64:
        half = cfg.head_dim // 2
        freqs = cfg.base ** (-np.arange(half, dtype=np.float64) * 2.0 / cfg.head_dim)
        ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
        cos, sin = np.cos(ang), np.sin(ang)
    out = T.rope_rotate(vt, cos, sin)
    return out if isinstance(vectors, T.Tensor) else out.data
