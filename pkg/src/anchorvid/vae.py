"""Analytic causal video autoencoder.

Encoding is a fixed linear map, not a learned network: pixel frames are
grouped into causal temporal chunks (frame 0 alone, then stride-r groups),
averaged over each chunk, and reduced spatially to per-channel p x p patch
means. The posterior is Gaussian with a single shared std, so "re-encode"
and "re-sample" have exact, checkable semantics. Decoding inverts by
nearest replication, which makes the round trip exact on videos that are
constant within each chunk and patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import TemporalCompression

DEFAULT_STRIDE = 4
DEFAULT_PATCH = 4
DEFAULT_POSTERIOR_STD = 0.05
LATENT_CHANNELS = 3


@dataclass
class PixelVideo:
    """Frames [T, H, W, 3] with values in [0, 1]; fps is metadata only."""

    frames: np.ndarray
    fps: float = 8.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be [T, H, W, 3], got {self.frames.shape}")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise ValueError(f"pixel values outside [0, 1]: range [{lo}, {hi}]")

    @property
    def pixel_len(self) -> int:
        return self.frames.shape[0]


@dataclass
class LatentVideo:
    """Latent tensor [T_lat, H/p, W/p, 3] plus its chunking metadata."""

    data: np.ndarray
    tc: TemporalCompression
    patch: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4 or self.data.shape[-1] != LATENT_CHANNELS:
            raise ValueError(f"latent must be [T_lat, h, w, {LATENT_CHANNELS}], got {self.data.shape}")
        if self.data.shape[0] != self.tc.latent_len:
            raise ValueError(
                f"latent length {self.data.shape[0]} inconsistent with "
                f"T={self.tc.pixel_len}, r={self.tc.stride} (expect {self.tc.latent_len})"
            )

    @property
    def latent_len(self) -> int:
        return self.data.shape[0]


@dataclass
class LatentPosterior:
    """Gaussian posterior: mean latent plus one shared positive std."""

    mean: LatentVideo
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigError(f"posterior std must be positive, got {self.std}")


def _patch_means(frames: np.ndarray, patch: int) -> np.ndarray:
    """Per-channel p x p patch means, [..., H, W, 3] -> [..., H/p, W/p, 3]."""
    *lead, h, w, c = frames.shape
    if h % patch or w % patch:
        raise ConfigError(f"H={h}, W={w} not divisible by patch {patch}")
    x = frames.reshape(*lead, h // patch, patch, w // patch, patch, c)
    return x.mean(axis=(-2, -4))


def encode(video: PixelVideo, stride: int = DEFAULT_STRIDE, patch: int = DEFAULT_PATCH,
           std: float = DEFAULT_POSTERIOR_STD) -> LatentPosterior:
    """Encode a pixel video into the causal chunked latent posterior.

    The posterior mean at latent frame k is the average of per-patch pixel
    means over chunk k's frame span; the std is the shared scalar.
    """
    tc = TemporalCompression(stride=stride, pixel_len=video.pixel_len)
    per_frame = _patch_means(np.asarray(video.frames, dtype=np.float64), patch)
    starts = np.array([tc.latent_to_frame_span(k)[0] for k in range(tc.latent_len)])
    lengths = np.array([b - a + 1 for a, b in (tc.latent_to_frame_span(k) for k in range(tc.latent_len))])
    mean = np.add.reduceat(per_frame, starts, axis=0) / lengths[:, None, None, None]
    z = LatentVideo(data=mean.astype(np.float32), tc=tc, patch=patch)
    return LatentPosterior(mean=z, std=std)


def encode_single(image: np.ndarray, patch: int = DEFAULT_PATCH) -> np.ndarray:
    """Single-image mode: one latent frame [H/p, W/p, 3] of patch means."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError(f"image must be [H, W, 3], got {image.shape}")
    return _patch_means(image, patch).astype(np.float32)


def sample(post: LatentPosterior, noise: np.ndarray) -> LatentVideo:
    """Reparameterized draw: mean + std * noise, shapes matching exactly."""
    noise = np.asarray(noise)
    if noise.shape != post.mean.data.shape:
        raise ValueError(f"noise shape {noise.shape} != mean shape {post.mean.data.shape}")
    data = post.mean.data + np.float32(post.std) * noise.astype(np.float32)
    return LatentVideo(data=data, tc=post.mean.tc, patch=post.mean.patch)


def decode(z: LatentVideo, pixel_len: int | None = None) -> PixelVideo:
    """Nearest-replication inverse: chunk value repeated over its span and
    over each p x p patch, clamped to [0, 1]."""
    t = z.tc.pixel_len if pixel_len is None else pixel_len
    if t != z.tc.pixel_len:
        raise ValueError(f"target length {t} inconsistent with latent metadata T={z.tc.pixel_len}")
    r = z.tc.stride
    frame_idx = np.concatenate([[0], (np.arange(1, t) + r - 1) // r]) if t > 1 else np.array([0])
    sel = z.data[frame_idx]
    up = np.repeat(np.repeat(sel, z.patch, axis=1), z.patch, axis=2)
    return PixelVideo(frames=np.clip(up, 0.0, 1.0).astype(np.float32))
