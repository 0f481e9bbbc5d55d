"""Synthetic corpus: planted variants, features, filter behavior."""

import numpy as np
import pytest

from anchorvid.corpus import (
    FilterThresholds,
    SceneSpec,
    cut_count,
    filter_corpus,
    first_last_similarity,
    frame_features,
    gen_corpus,
    make_scene,
    motion_strength,
    prepare_dataset,
    render,
    teleport_twin,
)
from anchorvid.errors import ConfigError
from anchorvid.seeds import rng_for


def test_render_deterministic():
    rng = rng_for(0, "scene", 0)
    spec = make_scene(rng, t=14)
    v1, a1 = render(spec, seed=3)
    v2, a2 = render(spec, seed=3)
    assert np.array_equal(v1.frames, v2.frames)
    assert a1 == a2
    v3, _ = render(spec, seed=4)
    assert not np.array_equal(v1.frames, v3.frames)


def test_gen_corpus_counts_and_variants(small_corpus):
    variants = [e["annotations"]["variant"] for e in small_corpus]
    assert "smooth" in variants
    # each teleport draw emits its smooth twin as well
    n_tel = variants.count("teleport")
    scene_ids = [e["annotations"]["scene_id"] for e in small_corpus]
    for e in small_corpus:
        if e["annotations"]["variant"] == "teleport":
            sid = e["annotations"]["scene_id"]
            twins = [x for x in small_corpus
                     if x["annotations"]["scene_id"] == sid
                     and x["annotations"]["variant"] == "smooth"]
            assert len(twins) == 1
    assert len(scene_ids) == len(small_corpus)


def test_teleport_twin_shares_endpoints(small_corpus):
    tels = [e for e in small_corpus if e["annotations"]["variant"] == "teleport"]
    assert tels
    for tel in tels:
        sid = tel["annotations"]["scene_id"]
        smooth = next(x for x in small_corpus
                      if x["annotations"]["scene_id"] == sid
                      and x["annotations"]["variant"] == "smooth")
        # first and last ground-truth centroids agree between the twins
        ct, cs = tel["annotations"]["centroids"], smooth["annotations"]["centroids"]
        assert np.allclose(ct[0], cs[0])
        assert np.allclose(ct[-1], cs[-1])
        # the planted jump is the dominant step and lands at the shot break
        steps = np.diff(np.asarray(ct), axis=0)
        mags = np.hypot(steps[:, 0], steps[:, 1])
        assert mags.max() >= 6.0
        jump_frame = tel["annotations"]["actions"][1][0]
        assert int(mags.argmax()) == jump_frame - 1


def test_static_variant_has_exactly_zero_motion():
    rng = rng_for(1, "scene", 0)
    spec = make_scene(rng, t=10)
    spec = SceneSpec(**{**spec.__dict__, "variant": "static"})
    video, ann = render(spec, seed=0)
    assert motion_strength(video) == 0.0
    assert ann["variant"] == "static"


def test_multishot_concatenates_two_scenes():
    rng = rng_for(2, "scene", 5)
    spec = make_scene(rng, t=14)
    second = make_scene(rng, t=14)
    spec = SceneSpec(**{**spec.__dict__, "variant": "multishot", "second": second})
    video, ann = render(spec, seed=0)
    assert video.pixel_len == 14
    assert ann["actions"] == [[0, 6], [7, 13]]
    # the shot change is a visible discontinuity
    assert cut_count(video, 0.03) >= 1


def test_filter_passes_smooth_rejects_planted(small_corpus):
    thresholds = FilterThresholds()
    videos = [e["video"] for e in small_corpus]
    reports = filter_corpus(videos, thresholds)
    for e, r in zip(small_corpus, reports):
        variant = e["annotations"]["variant"]
        if variant == "smooth":
            assert r.kept, r.failing_rule
        elif variant == "static":
            assert not r.kept and r.failing_rule == "motion"
        elif variant in ("teleport", "multishot"):
            assert not r.kept and r.failing_rule == "cuts"


def test_filter_rule_order_attributes_static_to_motion():
    # a static clip also trips the similarity rule; motion must win
    rng = rng_for(3, "scene", 1)
    spec = make_scene(rng, t=10)
    spec = SceneSpec(**{**spec.__dict__, "variant": "static"})
    video, _ = render(spec, seed=0)
    report = filter_corpus([video], FilterThresholds())[0]
    assert report.failing_rule == "motion"
    assert report.scores["first_last_similarity"] > 0.998


def test_frame_features_shape_and_locality(small_corpus):
    video = small_corpus[0]["video"]
    f = frame_features(video.frames[0])
    assert f.shape == (4 * 4 * 3 * 16,)
    assert abs(first_last_similarity(video) if video else 0.0) <= 1.0


def test_scene_spec_margin_validation():
    with pytest.raises(ConfigError):
        render(SceneSpec(shape="disk", color=(1, 1, 1), start=(-50.0, 0.0),
                         end=(0.0, 0.0), size=4.0, style_id=0, t=8, h=32, w=32))


def test_prepare_dataset_shapes(small_corpus):
    ds = prepare_dataset(small_corpus[:3], 4, 4)
    for entry in ds:
        assert entry["latent"].data.shape[1:] == (8, 8, 3)
        assert "actions" in entry["annotations"]


def test_styles_differ():
    rng = rng_for(0, "s")
    a = make_scene(rng, t=8)
    b = SceneSpec(**{**a.__dict__, "style_id": (a.style_id + 1) % 16})
    va, _ = render(a, seed=0)
    vb, _ = render(b, seed=0)
    assert not np.array_equal(va.frames, vb.frames)
