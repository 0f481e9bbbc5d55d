"""Analytic codec: exact round-trip, linearity, oracle against naive loops."""

import numpy as np
import pytest

from anchorvid.errors import ConfigError
from anchorvid.geometry import TemporalCompression
from anchorvid.vae import (
    LatentPosterior,
    LatentVideo,
    PixelVideo,
    decode,
    encode,
    encode_single,
    sample,
)


def random_video(rng, t=9, h=8, w=8):
    return PixelVideo(frames=rng.random((t, h, w, 3)).astype(np.float32))


def naive_encode(video, stride, patch):
    """Slow reference: explicit loops over chunks and patches."""
    frames = np.asarray(video.frames, dtype=np.float64)
    tc = TemporalCompression(stride=stride, pixel_len=frames.shape[0])
    t, h, w, _ = frames.shape
    out = np.zeros((tc.latent_len, h // patch, w // patch, 3))
    for k in range(tc.latent_len):
        a, b = tc.latent_to_frame_span(k)
        for i in range(h // patch):
            for j in range(w // patch):
                block = frames[a:b + 1, i * patch:(i + 1) * patch, j * patch:(j + 1) * patch]
                out[k, i, j] = block.mean(axis=(0, 1, 2))
    return out


def test_encode_matches_naive_loops(rng):
    for t in (1, 2, 5, 9, 17):
        video = random_video(rng, t=t)
        got = encode(video, stride=4, patch=4).mean.data
        want = naive_encode(video, 4, 4)
        assert np.abs(got - want.astype(np.float32)).max() < 1e-6


def test_roundtrip_exact_on_constant_chunks(rng):
    # videos that are piecewise constant per chunk and per patch survive
    # encode -> decode exactly (up to f32 storage)
    tc = TemporalCompression(stride=4, pixel_len=13)
    cells = rng.random((tc.latent_len, 2, 2, 3)).astype(np.float32)
    z = LatentVideo(data=cells, tc=tc, patch=4)
    frames = decode(z).frames
    back = encode(PixelVideo(frames=frames), stride=4, patch=4).mean.data
    assert np.abs(back - cells).max() < 1e-7


def test_encode_linearity(rng):
    a = random_video(rng).frames
    b = random_video(rng).frames
    za = encode(PixelVideo(frames=a)).mean.data.astype(np.float64)
    zb = encode(PixelVideo(frames=b)).mean.data.astype(np.float64)
    mix = encode(PixelVideo(frames=(0.5 * a + 0.5 * b))).mean.data.astype(np.float64)
    assert np.abs(mix - (0.5 * za + 0.5 * zb)).max() < 1e-6


def test_encode_single_equals_frame0_of_t1():
    rng = np.random.default_rng(5)
    img = rng.random((8, 8, 3)).astype(np.float32)
    single = encode_single(img)
    full = encode(PixelVideo(frames=img[None])).mean.data[0]
    assert np.array_equal(single, full)


def test_decode_is_nearest_replication(rng):
    tc = TemporalCompression(stride=4, pixel_len=9)
    z = LatentVideo(data=rng.random((tc.latent_len, 2, 2, 3)).astype(np.float32), tc=tc, patch=4)
    frames = decode(z).frames
    assert frames.shape == (9, 8, 8, 3)
    # frame 0 comes from latent 0, frames 1..4 from latent 1, etc.
    for f in range(9):
        k = tc.frame_to_latent(f)
        want = np.repeat(np.repeat(z.data[k], 4, axis=0), 4, axis=1)
        assert np.array_equal(frames[f], np.clip(want, 0.0, 1.0))


def test_sample_reparameterization(rng):
    video = random_video(rng)
    post = encode(video, std=0.05)
    noise = rng.standard_normal(post.mean.data.shape)
    z = sample(post, noise)
    want = post.mean.data + np.float32(0.05) * noise.astype(np.float32)
    assert np.allclose(z.data, want, atol=1e-7)


def test_validation_errors(rng):
    with pytest.raises(ValueError):
        PixelVideo(frames=np.zeros((3, 4, 4)))         # missing channel dim
    with pytest.raises(ValueError):
        PixelVideo(frames=np.full((2, 4, 4, 3), 1.5))  # out of range
    with pytest.raises(ConfigError):
        encode(random_video(rng, h=6, w=8))            # 6 not divisible by 4
    with pytest.raises(ConfigError):
        LatentPosterior(mean=encode(random_video(rng)).mean, std=0.0)
