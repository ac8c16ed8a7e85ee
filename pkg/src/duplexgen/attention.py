"""Cross-modal attention with per-head Gaussian temporal penalties.

Each head h subtracts a bias alpha_h * (1 - exp(-(i-j)^2 / (2 sigma_h^2)))
from its pre-softmax logits, where i and j are the temporal indices of
the video and audio latents. Narrow-sigma heads collapse to per-frame
local attention; a zero-alpha head is exactly unbiased global attention.
Three baseline variants (per-frame 2D attention, unbiased 3D attention,
and a linear-decay ALiBi bias) share the same functional interface.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .positional import TemporalIndexMap

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
FRAME_MASK_PENALTY = 1e9  # subtracted from off-frame logits; exp underflows to exactly 0

VARIANT_TAGS = ("spatial2d", "rope3d", "rope3d_alibi", "rope3d_mhgk")


@dataclass(frozen=True)
class HeadSchedule:
    """Per-head (sigma, alpha) pairs, sigma in video-frame units."""

    sigmas: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.float64))
        if self.sigmas.shape != self.alphas.shape or self.sigmas.ndim != 1:
            raise ValueError("sigmas and alphas must be 1-D and equally long")

    @property
    def num_heads(self) -> int:
        return len(self.sigmas)

    def validate(self) -> "HeadSchedule":
        if np.any(self.sigmas < SIGMA_FLOOR):
            raise ValueError(f"sigma below floor {SIGMA_FLOOR}: {self.sigmas}")
        if np.any(np.diff(self.sigmas) < 0):
            raise ValueError(f"sigma must be nondecreasing across heads: {self.sigmas}")
        if np.any(np.diff(self.alphas) > 0):
            raise ValueError(f"alpha must be nonincreasing across heads: {self.alphas}")
        if np.any(self.alphas < 0):
            raise ValueError(f"alpha must be nonnegative: {self.alphas}")
        if self.alphas[-1] != 0.0:
            raise ValueError("widest head must have alpha == 0 (global attention preserved)")
        return self


def build_head_schedule(num_heads: int, sigma_min: float, sigma_max: float,
                        alpha_max: float) -> HeadSchedule:
    """Geometric sigma ladder from sigma_min to sigma_max; alpha decays at the
    inverse geometric rate from alpha_max, with the widest head forced to
    alpha = 0 so pure global attention is always represented.
    """
    if num_heads < 2:
        raise ValueError(f"need at least 2 heads, got {num_heads}")
    if sigma_min <= 0:
        raise ValueError(f"sigma_min must be positive, got {sigma_min}")
    if sigma_max < sigma_min:
        raise ValueError(f"sigma_max {sigma_max} < sigma_min {sigma_min}")
    if alpha_max < 0:
        raise ValueError(f"alpha_max must be nonnegative, got {alpha_max}")
    h = np.arange(num_heads, dtype=np.float64)
    ratio = (sigma_max / sigma_min) ** (1.0 / (num_heads - 1))
    sigmas = sigma_min * ratio ** h
    alphas = alpha_max * ratio ** (-h)
    alphas[-1] = 0.0
    return HeadSchedule(sigmas=sigmas, alphas=alphas).validate()


def gaussian_bias(i: float, j: float, alpha: float, sigma: float) -> float:
    """Distance penalty alpha * (1 - exp(-(i-j)^2 / (2 sigma^2)))."""
    if sigma < SIGMA_FLOOR:
        logger.warning("sigma %.3g below floor %.3g, clamping", sigma, SIGMA_FLOOR)
        sigma = SIGMA_FLOOR
    d = float(i) - float(j)
    return alpha * (1.0 - math.exp(-(d * d) / (2.0 * sigma * sigma)))


def _index_array(idx) -> np.ndarray:
    if isinstance(idx, TemporalIndexMap):
        return idx.indices
    return np.asarray(idx)


def gaussian_bias_matrix(v_idx, a_idx, alpha: float, sigma: float) -> np.ndarray:
    """Bias matrix over (video latent, audio latent) pairs, float32."""
    if sigma < SIGMA_FLOOR:
        logger.warning("sigma %.3g below floor %.3g, clamping", sigma, SIGMA_FLOOR)
        sigma = SIGMA_FLOOR
    vi = _index_array(v_idx).astype(np.float64)[:, None]
    aj = _index_array(a_idx).astype(np.float64)[None, :]
    d2 = (vi - aj) ** 2
    return (alpha * (1.0 - np.exp(-d2 / (2.0 * sigma * sigma)))).astype(np.float32)


def schedule_bias_stack(v_idx, a_idx, schedule: HeadSchedule) -> np.ndarray:
    """Per-head bias matrices stacked to (H, Lv, La)."""
    return np.stack([gaussian_bias_matrix(v_idx, a_idx, a, s)
                     for s, a in zip(schedule.sigmas, schedule.alphas)])


def alibi_slopes(num_heads: int) -> np.ndarray:
    """Classic geometric slope ladder 2^(-8(h+1)/H)."""
    h = np.arange(1, num_heads + 1, dtype=np.float64)
    return 2.0 ** (-8.0 * h / num_heads)


def alibi_bias(i: float, j: float, slope: float) -> float:
    """Symmetric linear distance penalty slope * |i - j|."""
    if slope < 0:
        raise ValueError(f"slope must be nonnegative, got {slope}")
    return slope * abs(float(i) - float(j))


def alibi_bias_stack(v_idx, a_idx, slopes: np.ndarray) -> np.ndarray:
    vi = _index_array(v_idx).astype(np.float64)[:, None]
    aj = _index_array(a_idx).astype(np.float64)[None, :]
    dist = np.abs(vi - aj)
    return (np.asarray(slopes)[:, None, None] * dist[None]).astype(np.float32)


def frame_mask_stack(v_idx, a_idx, num_heads: int) -> np.ndarray:
    """Hard penalty outside the aligned frame (|i-j| < 1 after flooring)."""
    vi = np.floor(_index_array(v_idx).astype(np.float64))[:, None]
    aj = np.floor(_index_array(a_idx).astype(np.float64))[None, :]
    mask = np.where(vi == aj, 0.0, FRAME_MASK_PENALTY).astype(np.float32)
    return np.broadcast_to(mask[None], (num_heads,) + mask.shape)


# ---------------------------------------------------------------------------
# attention cores


def split_heads(x: T.Tensor, num_heads: int) -> T.Tensor:
    n, d = x.shape
    if d % num_heads != 0:
        raise T.ShapeMismatchError(f"feature dim {d} not divisible by {num_heads} heads")
    return T.transpose(T.reshape(x, (n, num_heads, d // num_heads)), (1, 0, 2))


def merge_heads(x: T.Tensor) -> T.Tensor:
    h, n, d = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (n, h * d))


def biased_attention_heads(q: T.Tensor, k: T.Tensor, v: T.Tensor,
                           bias: np.ndarray | None) -> T.Tensor:
    """softmax(q k^T / sqrt(d) - bias) v over stacked heads (H, L, d)."""
    d = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d))
    if bias is not None:
        scores = T.sub(scores, T.constant(bias.astype(scores.dtype, copy=False)))
    return T.matmul(T.softmax_last(scores), v)


def _check_lengths(q, k, v, v_idx, a_idx):
    if len(_index_array(v_idx)) != q.shape[0]:
        raise T.ShapeMismatchError(
            f"video index map has {len(_index_array(v_idx))} entries for {q.shape[0]} latents")
    if len(_index_array(a_idx)) != k.shape[0] or k.shape[0] != v.shape[0]:
        raise T.ShapeMismatchError(
            f"audio index map has {len(_index_array(a_idx))} entries for K {k.shape} / V {v.shape}")


def _attend(q, k, v, bias, num_heads, out_w=None, out_b=None) -> T.Tensor:
    qh = split_heads(T.as_tensor(q), num_heads)
    kh = split_heads(T.as_tensor(k), num_heads)
    vh = split_heads(T.as_tensor(v), num_heads)
    out = merge_heads(biased_attention_heads(qh, kh, vh, bias))
    if out_w is not None:
        out = T.linear(out, out_w, out_b)
    return out


def mhgk_cross_attention(video_q, audio_k, audio_v, v_idx, a_idx,
                         schedule: HeadSchedule, out_w=None, out_b=None) -> T.Tensor:
    """Multi-head Gaussian-kernel cross-attention.

    Q comes from video latents and K/V from the audio stream, all with
    rotary embedding already applied on consistent indices. One head per
    schedule entry; output is the head concat, optionally projected.
    """
    q, k, v = T.as_tensor(video_q), T.as_tensor(audio_k), T.as_tensor(audio_v)
    _check_lengths(q, k, v, v_idx, a_idx)
    bias = schedule_bias_stack(v_idx, a_idx, schedule)
    return _attend(q, k, v, bias, schedule.num_heads, out_w, out_b)


def plain_cross_attention(video_q, audio_k, audio_v, v_idx, a_idx, num_heads: int,
                          out_w=None, out_b=None) -> T.Tensor:
    """Unbiased 3D cross-attention (the all-alpha-zero limit)."""
    q, k, v = T.as_tensor(video_q), T.as_tensor(audio_k), T.as_tensor(audio_v)
    _check_lengths(q, k, v, v_idx, a_idx)
    return _attend(q, k, v, None, num_heads, out_w, out_b)


def alibi_cross_attention(video_q, audio_k, audio_v, v_idx, a_idx, num_heads: int,
                          out_w=None, out_b=None) -> T.Tensor:
    """3D cross-attention with the symmetric linear-decay head biases."""
    q, k, v = T.as_tensor(video_q), T.as_tensor(audio_k), T.as_tensor(audio_v)
    _check_lengths(q, k, v, v_idx, a_idx)
    bias = alibi_bias_stack(v_idx, a_idx, alibi_slopes(num_heads))
    return _attend(q, k, v, bias, num_heads, out_w, out_b)


def spatial2d_cross_attention(video_q, audio_k, audio_v, v_idx, a_idx, num_heads: int = 1,
                              out_w=None, out_b=None) -> T.Tensor:
    """Per-frame cross-attention: frame l's video latents see only frame l's audio."""
    q, k, v = T.as_tensor(video_q), T.as_tensor(audio_k), T.as_tensor(audio_v)
    _check_lengths(q, k, v, v_idx, a_idx)
    vframes = int(np.floor(_index_array(v_idx).max())) + 1
    aframes = int(np.floor(_index_array(a_idx).max())) + 1
    if vframes != aframes:
        raise T.ShapeMismatchError(f"frame counts differ: video {vframes} vs audio {aframes}")
    bias = frame_mask_stack(v_idx, a_idx, num_heads)
    return _attend(q, k, v, bias, num_heads, out_w, out_b)


# ---------------------------------------------------------------------------
# variant plumbing used by the model


@dataclass(frozen=True)
class AttentionVariant:
    """One of the four cross-attention designs under comparison."""

    tag: str
    schedule: HeadSchedule | None = None  # rope3d_mhgk only

    def __post_init__(self):
        if self.tag not in VARIANT_TAGS:
            raise ValueError(f"unknown variant {self.tag!r}; valid: {', '.join(VARIANT_TAGS)}")
        if self.tag == "rope3d_mhgk" and self.schedule is None:
            raise ValueError("rope3d_mhgk requires a head schedule")

    @property
    def uses_rope(self) -> bool:
        return self.tag != "spatial2d"

    def bias_stack(self, v_idx, a_idx, num_heads: int) -> np.ndarray | None:
        if self.tag == "rope3d":
            return None
        if self.tag == "rope3d_alibi":
            return alibi_bias_stack(v_idx, a_idx, alibi_slopes(num_heads))
        if self.tag == "rope3d_mhgk":
            if self.schedule.num_heads != num_heads:
                raise ValueError(f"schedule has {self.schedule.num_heads} heads, model has {num_heads}")
            return schedule_bias_stack(v_idx, a_idx, self.schedule)
        return frame_mask_stack(v_idx, a_idx, num_heads)
