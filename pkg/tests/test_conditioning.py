"""Condition layout construction: snapping, placement, collisions, sampling."""

import numpy as np
import pytest

from anchorvid.conditioning import (
    ConditionSpec,
    Timeline,
    build_layout,
    condition_latent_span,
    endpoints_timeline,
    sample_training_conditions,
    snap_timeline,
)
from anchorvid.errors import LayoutConflictError
from anchorvid.geometry import TemporalCompression
from anchorvid.seeds import rng_for
from anchorvid.vae import PixelVideo, encode, encode_single


def make_tc(t=17, r=4):
    return TemporalCompression(stride=r, pixel_len=t)


def image_at(rng, anchor, h=8, w=8):
    return ConditionSpec(kind="image", anchor_frame=anchor,
                         payload=rng.random((1, h, w, 3)).astype(np.float32))


def clip_at(rng, anchor, frames, h=8, w=8):
    return ConditionSpec(kind="clip", anchor_frame=anchor,
                         payload=rng.random((frames, h, w, 3)).astype(np.float32))


def test_snap_timeline_sorts_and_reports(rng):
    tl = Timeline(total_frames=17, prompt_id=0,
                  conditions=[image_at(rng, 12), image_at(rng, 0)])
    snapped, notices = snap_timeline(tl, make_tc())
    assert [c.anchor_frame for c in snapped.conditions] == [0, 13]
    assert len(notices) == 1 and "12" in notices[0] and "13" in notices[0]


def test_image_layout_places_exact_patch_means(rng):
    tc = make_tc()
    cond = image_at(rng, 5)
    tl = Timeline(total_frames=17, prompt_id=0, conditions=[cond])
    layout = build_layout(tl, tc, 4, rng_for(0, "t"))
    k = tc.frame_to_latent(5)
    assert layout.mask[k, 0] == 1.0
    assert np.array_equal(layout.cond[k], encode_single(cond.payload[0], 4))
    # all other rows untouched
    others = [i for i in range(tc.latent_len) if i != k]
    assert np.all(layout.cond[others] == 0.0)
    assert np.all(layout.mask[others] == 0.0)
    assert layout.rope_anchors == [(k, "image")]


def test_clip_layout_first_frame_exact_rest_resampled(rng):
    tc = make_tc()
    cond = clip_at(rng, 1, 8)  # spans latents 1..2
    tl = Timeline(total_frames=17, prompt_id=0, conditions=[cond])
    std = 0.05
    layout = build_layout(tl, tc, 4, rng_for(7, "layout"), std=std)
    lo, hi = condition_latent_span(cond, tc)
    assert (lo, hi) == (1, 2)
    assert np.array_equal(layout.cond[1], encode_single(cond.payload[0], 4))
    # remaining rows are chunk means plus sigma * noise: verify against a
    # fresh rng with the same derivation
    clip_video = PixelVideo(frames=cond.payload)
    post = encode(clip_video, stride=4, patch=4)
    rng2 = rng_for(7, "layout")
    layout2 = build_layout(tl, tc, 4, rng2, std=std)
    assert np.array_equal(layout.cond, layout2.cond)
    dev = layout.cond[2] - post.mean.data[1 + 1 - 1]  # latent row 2 covers clip frames 4..7
    assert 0 < np.abs(dev).max() < 6 * std


def test_mask_shape_and_span(rng):
    tc = make_tc()
    cond = clip_at(rng, 1, 8)
    tl = Timeline(total_frames=17, prompt_id=0, conditions=[cond])
    layout = build_layout(tl, tc, 4, rng_for(0, "t"))
    assert layout.mask.shape == (tc.latent_len, 1)
    assert layout.mask[:, 0].tolist() == [0, 1, 1, 0, 0]


def test_overlapping_conditions_collide(rng):
    tc = make_tc()
    tl = Timeline(total_frames=17, prompt_id=0,
                  conditions=[image_at(rng, 1), clip_at(rng, 1, 4)])
    with pytest.raises(LayoutConflictError) as err:
        build_layout(tl, tc, 4, rng_for(0, "t"))
    assert err.value.collisions == [(1, [0, 1])]


def test_invalid_anchor_rejected(rng):
    tc = make_tc()
    tl = Timeline(total_frames=17, prompt_id=0, conditions=[image_at(rng, 2)])
    with pytest.raises(ValueError):
        build_layout(tl, tc, 4, rng_for(0, "t"))


def test_endpoints_timeline(rng):
    frames = rng.random((17, 8, 8, 3)).astype(np.float32)
    video = PixelVideo(frames=frames)
    tl = endpoints_timeline(video, make_tc(), prompt_id=4)
    assert tl.prompt_id == 4
    assert [c.anchor_frame for c in tl.conditions] == [0, 13]
    assert np.array_equal(tl.conditions[0].payload[0], frames[0])
    assert np.array_equal(tl.conditions[1].payload[0], frames[13])


def test_endpoints_timeline_degenerate_single_frame(rng):
    video = PixelVideo(frames=rng.random((1, 8, 8, 3)).astype(np.float32))
    tl = endpoints_timeline(video, TemporalCompression(stride=4, pixel_len=1), 0)
    assert len(tl.conditions) == 1


def test_training_sampler_layouts_always_buildable(small_corpus):
    from anchorvid.corpus import prepare_dataset

    dataset = prepare_dataset(small_corpus[:6], 4, 4)
    for i in range(40):
        rng = rng_for(0, "sampler", i)
        entry = dataset[i % len(dataset)]
        tl = sample_training_conditions(entry["latent"], entry["annotations"], rng)
        tc = entry["latent"].tc
        layout = build_layout(tl, tc, 4, rng)
        assert layout.mask.sum() >= 1.0
        for c in tl.conditions:
            assert tc.is_valid_anchor(c.anchor_frame)


def test_training_sampler_payload_reencodes_exactly(small_corpus):
    from anchorvid.corpus import prepare_dataset

    dataset = prepare_dataset(small_corpus[:4], 4, 4)
    entry = dataset[0]
    hits = 0
    for i in range(30):
        rng = rng_for(3, "re", i)
        tl = sample_training_conditions(entry["latent"], entry["annotations"], rng)
        for c in tl.conditions:
            if c.kind != "image":
                continue
            k = entry["latent"].tc.frame_to_latent(c.anchor_frame)
            got = encode_single(c.payload[0], 4)
            assert np.abs(got - entry["latent"].data[k]).max() < 1e-6
            hits += 1
    assert hits > 0
