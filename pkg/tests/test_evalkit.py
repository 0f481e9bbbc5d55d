"""Metric kit: PSNR, join continuity conventions, drift, centroids, reports."""

import json

import numpy as np
import pytest

from anchorvid.evalkit import (
    PSNR_CAP,
    RATIO_SENTINEL,
    color_mean_drift,
    condition_psnr,
    config_hash,
    join_continuity,
    luminance_centroids,
    make_report,
    max_centroid_step,
    psnr,
    save_report,
)
from anchorvid.geometry import TemporalCompression
from anchorvid.sar import SegmentPlan
from anchorvid.vae import LatentVideo


def test_psnr_values():
    assert psnr(0.0) == PSNR_CAP
    assert abs(psnr(1.0) - 0.0) < 1e-12
    assert abs(psnr(0.01) - 20.0) < 1e-12


def latent(data):
    data = np.asarray(data, dtype=np.float32)
    tc = TemporalCompression(stride=4, pixel_len=1 + (data.shape[0] - 1) * 4)
    return LatentVideo(data=data, tc=tc, patch=4)


def plan_for(segments, k=1):
    return SegmentPlan(segments=segments, tail_k=k, l_max=8)


def test_join_continuity_flags_seam():
    rng = np.random.default_rng(0)
    base = rng.random((10, 2, 2, 3)).astype(np.float32)
    smooth = base.copy()
    smooth[1:] = smooth[0]  # perfectly flat interior
    smooth[5] += 0.5        # seam at the join
    smooth[6:] = smooth[5]
    z = latent(smooth)
    stats = join_continuity(z, plan_for([(0, 5), (4, 9)]))
    # joins are transitions (4,5) and (5,6); interior includes flat steps
    assert stats["n_join"] == 2
    assert stats["join_mean"] > 0.0
    assert stats["interior_mean"] == 0.0
    assert stats["ratio"] == RATIO_SENTINEL


def test_join_continuity_single_segment_is_neutral():
    rng = np.random.default_rng(1)
    z = latent(rng.random((6, 2, 2, 3)))
    stats = join_continuity(z, plan_for([(0, 5)]))
    assert stats["n_join"] == 0
    assert stats["ratio"] == 1.0


def test_join_continuity_all_zero_is_neutral():
    z = latent(np.zeros((8, 2, 2, 3)))
    stats = join_continuity(z, plan_for([(0, 4), (3, 7)]))
    assert stats["ratio"] == 1.0


def test_join_continuity_ratio_oracle():
    # steps exactly representable in f32: interior 0.25, joins 0.5
    data = np.zeros((8, 1, 1, 3), dtype=np.float32)
    a, b = 0.25, 0.5
    vals = [0.0]
    for i in range(1, 8):
        vals.append(vals[-1] + (b if i in (4, 5) else a))
    for i, v in enumerate(vals):
        data[i] = v
    z = latent(data)
    stats = join_continuity(z, plan_for([(0, 4), (3, 7)]))
    # join transitions are (b-1, b) for the internal end b=4
    assert stats["n_join"] == 2 and stats["n_interior"] == 5
    assert abs(stats["join_mean"] - b * b) < 1e-12
    assert abs(stats["interior_mean"] - a * a) < 1e-12
    assert abs(stats["ratio"] - 4.0) < 1e-12


def test_color_mean_drift_oracle():
    frames = np.zeros((3, 4, 4, 3), dtype=np.float32)
    frames[1] += 0.1
    frames[2] += 0.3
    # per-step mean abs change of channel means: 0.1 then 0.2 -> mean 0.15
    assert abs(color_mean_drift(frames) - 0.15) < 1e-6
    with pytest.raises(ValueError):
        color_mean_drift(frames[:1])


def test_luminance_centroid_tracks_bright_blob():
    frames = np.full((2, 16, 16, 3), 0.1, dtype=np.float32)
    frames[0, 3, 4] = 1.0
    frames[1, 10, 12] = 1.0
    cents = luminance_centroids(frames, thresh=0.45)
    assert np.allclose(cents[0], [3, 4], atol=1e-6)
    assert np.allclose(cents[1], [10, 12], atol=1e-6)
    step = max_centroid_step(frames, thresh=0.45)
    assert abs(step - np.hypot(7.0, 8.0)) < 1e-6


def test_luminance_centroid_fallback_center():
    frames = np.full((1, 8, 8, 3), 0.1, dtype=np.float32)
    cents = luminance_centroids(frames, thresh=0.45)
    assert np.allclose(cents[0], [3.5, 3.5])


def test_condition_psnr_exact_when_matching(rng):
    from anchorvid.conditioning import ConditionSpec, Timeline
    from anchorvid.vae import PixelVideo, decode, encode

    frames = rng.random((13, 8, 8, 3)).astype(np.float32)
    video = PixelVideo(frames=frames)
    z = encode(video).mean
    recon = decode(z)
    img = recon.frames[:1]
    tl = Timeline(total_frames=13, prompt_id=0,
                  conditions=[ConditionSpec(kind="image", anchor_frame=0, payload=img)])
    vals = condition_psnr(recon, tl)
    assert len(vals) == 1
    assert vals[0] == PSNR_CAP


def test_report_is_deterministic(tmp_path):
    metrics = {"m": [1.0, 2.0, 3.0]}
    r1 = make_report(metrics, config={"a": 1})
    r2 = make_report(metrics, config={"a": 1})
    assert r1 == r2
    assert "human" in r1["header"]
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_report(p1, r1)
    save_report(p2, r2)
    assert p1.read_bytes() == p2.read_bytes()
    doc = json.loads(p1.read_text())
    assert doc["metrics"]["m"]["n"] == 3
    assert abs(doc["metrics"]["m"]["mean"] - 2.0) < 1e-12


def test_config_hash_stable_and_sensitive():
    h1 = config_hash({"b": 2, "a": 1})
    h2 = config_hash({"a": 1, "b": 2})
    h3 = config_hash({"a": 1, "b": 3})
    assert h1 == h2
    assert h1 != h3
    assert len(h1) == 16
