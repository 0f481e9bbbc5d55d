"""Procedural moving-shape corpus and the data filtering pipeline.

Scenes are soft-edged bright shapes (disk or square) moving over a dark
style-dependent background. Soft edges matter: the analytic autoencoder
decodes by patch replication, and anti-aliased boundaries keep the
round-trip error small enough that pixel-space fidelity metrics stay
meaningful. Variants plant known defects: static clips (no motion),
multishot clips (a hard mid-clip cut between unrelated scenes), and
teleport clips (same endpoints as their smooth twin but with a large
positional jump), which the filter rules and preference pipelines use as
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .seeds import rng_for
from .vae import PixelVideo, encode

VARIANTS = ("smooth", "teleport", "static", "multishot")
N_STYLES = 16
# Wide anti-aliased edge band: patch-replication decoding of hard edges
# would cap pixel fidelity near 14 dB, drowning every downstream metric.
EDGE_WIDTH = 4.0
DITHER = 0.005


@dataclass
class SceneSpec:
    shape: str
    color: tuple[float, float, float]
    start: tuple[float, float]
    end: tuple[float, float]
    size: float
    style_id: int
    t: int
    h: int
    w: int
    variant: str = "smooth"
    jump_frame: int = 0
    jump_pos: tuple[float, float] = (0.0, 0.0)
    second: "SceneSpec | None" = None
    scene_id: int = 0

    def __post_init__(self):
        if self.shape not in ("disk", "square"):
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.t < 2:
            raise ConfigError(f"scene needs t >= 2, got {self.t}")


def _style_background(style_id: int, h: int, w: int) -> np.ndarray:
    """Dark per-style background: base gray plus oriented gradients."""
    rng = rng_for(style_id, "style")
    base = 0.04 + 0.08 * rng.random(3)
    gy = 0.06 * (rng.random(3) - 0.5)
    gx = 0.06 * (rng.random(3) - 0.5)
    ys = np.linspace(0.0, 1.0, h)[:, None, None]
    xs = np.linspace(0.0, 1.0, w)[None, :, None]
    return np.clip(base[None, None, :] + gy * ys + gx * xs, 0.0, 0.25)


def _positions(spec: SceneSpec) -> np.ndarray:
    """Per-frame shape centers [T, 2] in (y, x) pixel coordinates."""
    t = spec.t
    u = np.linspace(0.0, 1.0, t)[:, None]
    start = np.asarray(spec.start, dtype=np.float64)
    end = np.asarray(spec.end, dtype=np.float64)
    if spec.variant == "static":
        return np.tile(start, (t, 1))
    pos = start[None, :] + u * (end - start)[None, :]
    if spec.variant == "teleport":
        j = spec.jump_frame
        if not 1 <= j <= t - 2:
            raise ConfigError(f"jump frame {j} outside (0, {t - 1})")
        jump = np.asarray(spec.jump_pos, dtype=np.float64)
        u2 = np.linspace(0.0, 1.0, t - j)[:, None]
        pos[j:] = jump[None, :] + u2 * (end - jump)[None, :]
    return pos


def _rasterize(spec: SceneSpec, positions: np.ndarray, bg: np.ndarray) -> np.ndarray:
    ys = np.arange(spec.h, dtype=np.float64)[:, None]
    xs = np.arange(spec.w, dtype=np.float64)[None, :]
    color = np.asarray(spec.color, dtype=np.float64)
    frames = np.empty((spec.t, spec.h, spec.w, 3), dtype=np.float64)
    for i, (cy, cx) in enumerate(positions):
        dy, dx = ys - cy, xs - cx
        if spec.shape == "disk":
            dist = np.sqrt(dy * dy + dx * dx)
        else:
            dist = np.maximum(np.abs(dy), np.abs(dx))
        alpha = np.clip((spec.size - dist) / EDGE_WIDTH + 0.5, 0.0, 1.0)[:, :, None]
        frames[i] = bg * (1.0 - alpha) + color[None, None, :] * alpha
    return frames


def render(spec: SceneSpec, seed: int = 0) -> tuple[PixelVideo, dict]:
    """Deterministic rasterization plus ground-truth annotations.

    The seed drives a fixed spatial dither shared by all frames, so a
    static scene still has exactly zero frame-to-frame motion.
    """
    margin = spec.size + EDGE_WIDTH
    if spec.variant != "multishot":
        pts = [spec.start, spec.end] + ([spec.jump_pos] if spec.variant == "teleport" else [])
        for y, x in pts:
            if not (margin <= y <= spec.h - 1 - margin and margin <= x <= spec.w - 1 - margin):
                raise ConfigError(f"trajectory point ({y}, {x}) leaves the frame")

    if spec.variant == "multishot":
        if spec.second is None:
            raise ConfigError("multishot scene needs a second sub-scene")
        first_t = spec.t // 2
        a = replace(spec, variant="smooth", t=first_t, second=None)
        b = replace(spec.second, t=spec.t - first_t, second=None)
        va, ann_a = render(a, seed)
        vb, ann_b = render(b, seed)
        frames = np.concatenate([va.frames, vb.frames], axis=0)
        centroids = np.concatenate([ann_a["centroids"], ann_b["centroids"]], axis=0)
        actions = [[0, first_t - 1], [first_t, spec.t - 1]]
    else:
        positions = _positions(spec)
        bg = _style_background(spec.style_id, spec.h, spec.w)
        dither = DITHER * (rng_for(seed, "dither").random((spec.h, spec.w, 1)) - 0.5)
        frames = np.clip(_rasterize(spec, positions, np.clip(bg + dither, 0.0, 1.0)), 0.0, 1.0)
        centroids = positions
        if spec.variant == "teleport":
            actions = [[0, spec.jump_frame - 1], [spec.jump_frame, spec.t - 1]]
        else:
            actions = [[0, spec.t - 1]]
    ann = {
        "prompt_id": spec.style_id,
        "actions": actions,
        "centroids": np.asarray(centroids, dtype=np.float64).tolist(),
        "variant": spec.variant,
        "scene_id": spec.scene_id,
    }
    return PixelVideo(frames=frames.astype(np.float32)), ann


def _random_point(rng, h, w, margin) -> tuple[float, float]:
    y = margin + (h - 1 - 2 * margin) * rng.random()
    x = margin + (w - 1 - 2 * margin) * rng.random()
    return float(y), float(x)


def make_scene(rng: np.random.Generator, t: int = 14, h: int = 32, w: int = 32,
               scene_id: int = 0, min_travel: float = 12.0) -> SceneSpec:
    """Random smooth scene: shape, bright color, straight trajectory."""
    size = 3.5 + 2.5 * rng.random()
    margin = size + EDGE_WIDTH + 0.5
    start = _random_point(rng, h, w, margin)
    for _ in range(64):
        end = _random_point(rng, h, w, margin)
        if np.hypot(end[0] - start[0], end[1] - start[1]) >= min_travel:
            break
    color = tuple(0.6 + 0.4 * rng.random(3))
    return SceneSpec(
        shape="disk" if rng.random() < 0.5 else "square",
        color=color, start=start, end=end, size=size,
        style_id=int(rng.integers(0, N_STYLES)), t=t, h=h, w=w,
        variant="smooth", scene_id=scene_id)


def teleport_twin(spec: SceneSpec, rng: np.random.Generator) -> SceneSpec:
    """Teleporting variant sharing the smooth scene's endpoints.

    The jump target is placed at least half the frame width away from
    the on-path position at the jump frame.
    """
    margin = spec.size + EDGE_WIDTH + 0.5
    j = int(rng.integers(spec.t // 3, 2 * spec.t // 3))
    u = j / (spec.t - 1)
    on_path = (spec.start[0] + u * (spec.end[0] - spec.start[0]),
               spec.start[1] + u * (spec.end[1] - spec.start[1]))
    best, best_d = None, -1.0
    for _ in range(128):
        cand = _random_point(rng, spec.h, spec.w, margin)
        d = np.hypot(cand[0] - on_path[0], cand[1] - on_path[1])
        if d > best_d:
            best, best_d = cand, d
        if d > spec.w / 2:
            break
    return replace(spec, variant="teleport", jump_frame=j, jump_pos=best)


def gen_corpus(count: int, seed: int, t: int = 14, h: int = 32, w: int = 32,
               mix: dict[str, float] | None = None) -> list[dict]:
    """Generate corpus entries {"spec", "video", "annotations"}.

    mix gives variant probabilities; a teleport draw emits both the
    smooth scene and its teleport twin (shared scene_id) so preference
    pairs can be planted later.
    """
    mix = dict(mix or {"smooth": 0.70, "teleport": 0.10, "static": 0.10, "multishot": 0.10})
    extra = set(mix) - set(VARIANTS)
    if extra:
        raise ConfigError(f"unknown variants in mix: {sorted(extra)}")
    names = sorted(mix)
    probs = np.array([mix[k] for k in names], dtype=np.float64)
    if probs.min() < 0 or probs.sum() <= 0:
        raise ConfigError(f"bad variant mix {mix}")
    probs = probs / probs.sum()

    entries = []
    for i in range(count):
        rng = rng_for(seed, "scene", i)
        variant = names[int(rng.choice(len(names), p=probs))]
        base = make_scene(rng, t=t, h=h, w=w, scene_id=i)
        if variant == "static":
            spec = replace(base, variant="static")
            specs = [spec]
        elif variant == "multishot":
            other = make_scene(rng, t=t, h=h, w=w, scene_id=i)
            specs = [replace(base, variant="multishot", second=other)]
        elif variant == "teleport":
            specs = [base, teleport_twin(base, rng)]
        else:
            specs = [base]
        for spec in specs:
            video, ann = render(spec, seed=i)
            entries.append({"spec": spec, "video": video, "annotations": ann})
    return entries


def frame_features(frame: np.ndarray, cells: int = 4, bins: int = 16) -> np.ndarray:
    """Concatenated per-cell per-channel intensity histograms."""
    h, w, c = frame.shape
    feats = []
    for ci in range(cells):
        for cj in range(cells):
            cell = frame[ci * h // cells:(ci + 1) * h // cells,
                         cj * w // cells:(cj + 1) * w // cells]
            for ch in range(c):
                hist, _ = np.histogram(cell[..., ch], bins=bins, range=(0.0, 1.0))
                feats.append(hist)
    return np.concatenate(feats).astype(np.float64)


def first_last_similarity(video: PixelVideo) -> float:
    """Cosine similarity between first- and last-frame features."""
    if video.pixel_len < 2:
        raise ConfigError("similarity needs at least 2 frames")
    a = frame_features(np.asarray(video.frames[0], dtype=np.float64))
    b = frame_features(np.asarray(video.frames[-1], dtype=np.float64))
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def motion_strength(video: PixelVideo) -> float:
    """Mean absolute adjacent-frame pixel difference."""
    if video.pixel_len < 2:
        raise ConfigError("motion strength needs at least 2 frames")
    f = np.asarray(video.frames, dtype=np.float64)
    return float(np.abs(f[1:] - f[:-1]).mean())


def cut_count(video: PixelVideo, jump_thresh: float) -> int:
    """Number of adjacent-frame transitions whose MSE exceeds the threshold."""
    if video.pixel_len < 2:
        raise ConfigError("cut count needs at least 2 frames")
    f = np.asarray(video.frames, dtype=np.float64)
    mse = ((f[1:] - f[:-1]) ** 2).mean(axis=(1, 2, 3))
    return int((mse > jump_thresh).sum())


def aesthetic_stub(video: PixelVideo) -> float:
    """Placeholder for an external aesthetic model; fixed neutral score."""
    return 1.0


@dataclass(frozen=True)
class FilterThresholds:
    motion_min: float = 0.002
    similarity_max: float = 0.998
    cut_max: int = 0
    jump_thresh: float = 0.03

    def to_dict(self) -> dict:
        return {"motion_min": self.motion_min, "similarity_max": self.similarity_max,
                "cut_max": self.cut_max, "jump_thresh": self.jump_thresh}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterThresholds":
        return cls(**d)


@dataclass
class FilterReport:
    scores: dict[str, float]
    kept: bool
    failing_rule: str | None = None


def filter_corpus(videos: list[PixelVideo], thresholds: FilterThresholds) -> list[FilterReport]:
    """Score each video and keep it iff all rules pass.

    Rules run motion -> similarity -> cuts so a static clip (which also
    has identical endpoints) is reported against the motion rule; the
    report names the first failing rule.
    """
    reports = []
    for v in videos:
        scores = {
            "motion_strength": motion_strength(v),
            "first_last_similarity": first_last_similarity(v),
            "cut_count": float(cut_count(v, thresholds.jump_thresh)),
            "aesthetic": aesthetic_stub(v),
        }
        failing = None
        if scores["motion_strength"] < thresholds.motion_min:
            failing = "motion"
        elif scores["first_last_similarity"] > thresholds.similarity_max:
            failing = "similarity"
        elif scores["cut_count"] > thresholds.cut_max:
            failing = "cuts"
        reports.append(FilterReport(scores=scores, kept=failing is None, failing_rule=failing))
    return reports


def prepare_dataset(entries: list[dict], stride: int, patch: int) -> list[dict]:
    """Encode corpus entries to training latents (posterior means)."""
    out = []
    for e in entries:
        post = encode(e["video"], stride=stride, patch=patch)
        out.append({"latent": post.mean, "annotations": e["annotations"]})
    return out
