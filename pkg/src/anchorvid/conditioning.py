"""Timeline conditions -> channel-wise condition tensor and occupancy mask.

A timeline anchors image and clip conditions at pixel-frame timestamps.
Building the layout follows the causal-latent alignment rules: an image
condition is re-encoded in single-image mode and placed at its chunk; a
clip condition contributes its first latent frame by single-image
re-encoding of the clip's first pixel frame, while subsequent latent
frames are re-sampled from the chunk posterior (mean plus std * noise).
Tail conditions injected by the long-form engine carry latent values
directly and are never re-sampled.

Also provides the training-time condition sampler that draws boundary
frames, random intermediate anchors, or latent clip segments from a
precomputed latent plus its action annotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, LayoutConflictError
from .geometry import TemporalCompression
from .vae import (
    DEFAULT_POSTERIOR_STD,
    LatentVideo,
    _patch_means,
    encode_single,
)

KIND_IMAGE = "image"
KIND_CLIP = "clip"
SOURCE_USER = "user"
SOURCE_TAIL = "tail"


@dataclass
class ConditionSpec:
    """One anchored condition.

    payload holds pixel frames [T, H, W, 3] for user conditions; for
    source "tail" it holds latent frames [K, h, w, 3] placed verbatim at
    anchor_latent (anchor_frame is ignored for tails).
    """

    kind: str
    anchor_frame: int
    payload: np.ndarray
    source: str = SOURCE_USER
    anchor_latent: int | None = None

    def __post_init__(self):
        if self.kind not in (KIND_IMAGE, KIND_CLIP):
            raise ConfigError(f"unknown condition kind {self.kind!r}")
        if self.source not in (SOURCE_USER, SOURCE_TAIL):
            raise ConfigError(f"unknown condition source {self.source!r}")
        self.payload = np.asarray(self.payload)
        if self.payload.ndim != 4:
            raise ValueError(f"payload must be 4-d, got shape {self.payload.shape}")
        if self.kind == KIND_IMAGE and self.payload.shape[0] != 1:
            raise ValueError(f"image payload must have T=1, got {self.payload.shape[0]}")
        if self.source == SOURCE_TAIL and self.anchor_latent is None:
            raise ConfigError("tail conditions must set anchor_latent")


@dataclass
class Timeline:
    """Total duration, a prompt token id, and anchored conditions."""

    total_frames: int
    prompt_id: int
    conditions: list[ConditionSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.total_frames < 1:
            raise ConfigError(f"total_frames must be >= 1, got {self.total_frames}")
        if self.prompt_id < 0:
            raise ConfigError(f"prompt_id must be >= 0, got {self.prompt_id}")


@dataclass
class ConditionLayout:
    """Condition tensor, per-latent-frame occupancy mask, and the latent
    anchor (first latent frame) of each condition for rope sharing."""

    cond: np.ndarray
    mask: np.ndarray
    rope_anchors: list[tuple[int, str]]


def snap_timeline(tl: Timeline, tc: TemporalCompression) -> tuple[Timeline, list[str]]:
    """Snap every user condition anchor to a valid chunk start.

    Returns the snapped timeline and one notice line per moved anchor.
    Tail conditions are latent-addressed and pass through untouched.
    """
    notices = []
    snapped = []
    for i, c in enumerate(tl.conditions):
        if c.source == SOURCE_TAIL:
            snapped.append(c)
            continue
        a, moved = tc.snap_anchor(c.anchor_frame)
        if moved:
            notices.append(f"condition {i}: anchor {c.anchor_frame} snapped to {a}")
            c = replace(c, anchor_frame=a)
        snapped.append(c)
    out = replace(tl, conditions=sorted(snapped, key=_anchor_key))
    return out, notices


def _anchor_key(c: ConditionSpec) -> int:
    return c.anchor_latent if c.source == SOURCE_TAIL else c.anchor_frame


def condition_latent_span(c: ConditionSpec, tc: TemporalCompression) -> tuple[int, int]:
    """Inclusive latent index range a condition occupies."""
    if c.source == SOURCE_TAIL:
        return c.anchor_latent, c.anchor_latent + c.payload.shape[0] - 1
    k0 = tc.frame_to_latent(c.anchor_frame)
    if c.kind == KIND_IMAGE:
        return k0, k0
    last = c.anchor_frame + c.payload.shape[0] - 1
    return k0, tc.frame_to_latent(last)


def build_layout(tl: Timeline, tc: TemporalCompression, patch: int,
                 rng: np.random.Generator,
                 std: float = DEFAULT_POSTERIOR_STD) -> ConditionLayout:
    """Build the condition tensor, mask, and rope anchors for a timeline.

    Overlapping occupancy raises a layout conflict listing, per colliding
    latent frame, the indices of the conditions that claim it.
    """
    if tl.total_frames != tc.pixel_len:
        raise ConfigError(f"timeline T={tl.total_frames} != compression T={tc.pixel_len}")
    spans = []
    for i, c in enumerate(tl.conditions):
        if c.source == SOURCE_USER:
            if not tc.is_valid_anchor(c.anchor_frame):
                raise ConfigError(f"condition {i}: anchor {c.anchor_frame} is not a chunk start (snap first)")
            if c.anchor_frame + c.payload.shape[0] > tl.total_frames:
                raise ConfigError(f"condition {i}: span exceeds timeline length")
        lo, hi = condition_latent_span(c, tc)
        if lo < 0 or hi >= tc.latent_len:
            raise ConfigError(f"condition {i}: latent span [{lo}, {hi}] outside [0, {tc.latent_len - 1}]")
        spans.append((lo, hi))

    owners = {}
    for i, (lo, hi) in enumerate(spans):
        for k in range(lo, hi + 1):
            owners.setdefault(k, []).append(i)
    collisions = sorted((k, idxs) for k, idxs in owners.items() if len(idxs) > 1)
    if collisions:
        raise LayoutConflictError(collisions)

    first = None
    for c in tl.conditions:
        if c.source == SOURCE_USER:
            first = np.asarray(c.payload, dtype=np.float64)
            break
    if first is not None:
        h_lat, w_lat = first.shape[1] // patch, first.shape[2] // patch
    else:
        h_lat = w_lat = None

    cond_frames = {}
    anchors = []
    for c, (lo, hi) in zip(tl.conditions, spans):
        if c.source == SOURCE_TAIL:
            for j in range(c.payload.shape[0]):
                cond_frames[lo + j] = np.asarray(c.payload[j], dtype=np.float32)
        elif c.kind == KIND_IMAGE:
            cond_frames[lo] = encode_single(c.payload[0], patch)
        else:
            cond_frames[lo] = encode_single(c.payload[0], patch)
            last_frame = c.anchor_frame + c.payload.shape[0] - 1
            for k in range(lo + 1, hi + 1):
                a, b = tc.latent_to_frame_span(k)
                a, b = max(a, c.anchor_frame), min(b, last_frame)
                chunk = np.asarray(c.payload[a - c.anchor_frame : b - c.anchor_frame + 1], dtype=np.float64)
                mean = _patch_means(chunk, patch).mean(axis=0)
                noise = rng.standard_normal(mean.shape)
                cond_frames[k] = (mean + std * noise).astype(np.float32)
        anchors.append((lo, KIND_CLIP if c.source == SOURCE_TAIL else c.kind))

    if cond_frames and h_lat is None:
        k0 = next(iter(cond_frames))
        h_lat, w_lat = cond_frames[k0].shape[0], cond_frames[k0].shape[1]

    n = tc.latent_len
    if h_lat is None:
        cond = np.zeros((n, 0, 0, 3), dtype=np.float32)
    else:
        cond = np.zeros((n, h_lat, w_lat, 3), dtype=np.float32)
    mask = np.zeros((n, 1), dtype=np.float32)
    for k, frame in cond_frames.items():
        cond[k] = frame
        mask[k] = 1.0
    return ConditionLayout(cond=cond, mask=mask, rope_anchors=anchors)


def empty_layout(tc: TemporalCompression, h_lat: int, w_lat: int) -> ConditionLayout:
    """Zero condition tensor and mask for an unconditional grid."""
    return ConditionLayout(
        cond=np.zeros((tc.latent_len, h_lat, w_lat, 3), dtype=np.float32),
        mask=np.zeros((tc.latent_len, 1), dtype=np.float32),
        rope_anchors=[],
    )


def _replicate_frames(z: LatentVideo, f0: int, f1: int) -> np.ndarray:
    """Decode pixel frames f0..f1 inclusive by nearest replication."""
    idx = np.array([z.tc.frame_to_latent(f) for f in range(f0, f1 + 1)])
    sel = z.data[idx]
    up = np.repeat(np.repeat(sel, z.patch, axis=1), z.patch, axis=2)
    return np.clip(up, 0.0, 1.0).astype(np.float32)


def endpoints_timeline(video, tc: TemporalCompression, prompt_id: int) -> Timeline:
    """First/last-frame conditioning: image conditions at frame 0 and at
    the last valid anchor (the simplest special case of the interface)."""
    frames = np.asarray(video.frames if hasattr(video, "frames") else video)
    if frames.shape[0] != tc.pixel_len:
        raise ConfigError(f"video length {frames.shape[0]} != compression T={tc.pixel_len}")
    last, _ = tc.snap_anchor(tc.pixel_len - 1)
    conds = [ConditionSpec(kind=KIND_IMAGE, anchor_frame=0, payload=frames[:1])]
    if last != 0:
        conds.append(ConditionSpec(kind=KIND_IMAGE, anchor_frame=last, payload=frames[last : last + 1]))
    return Timeline(total_frames=tc.pixel_len, prompt_id=int(prompt_id), conditions=conds)


def sample_training_conditions(latents: LatentVideo, annotations: dict,
                               rng: np.random.Generator,
                               weights: tuple[float, float, float] = (0.5, 0.3, 0.2),
                               max_clip_latents: int = 4) -> Timeline:
    """Draw a randomized training timeline from a precomputed latent.

    Modes, drawn with the given weights: action-boundary frames (both
    endpoints of one random action interval), random valid-anchor
    intermediate frames, or one random latent segment emitted as a clip
    condition. Payloads are replication-decoded from the latent, so
    re-encoding them in the layout reproduces the latent values exactly.
    """
    tc = latents.tc
    actions = annotations.get("actions") or []
    if not actions:
        raise ConfigError("annotations must provide at least one action interval")
    prompt_id = int(annotations.get("prompt_id", 0))
    w = np.asarray(weights, dtype=np.float64)
    if w.min() < 0 or w.sum() <= 0:
        raise ConfigError(f"bad sampler weights {weights}")
    mode = rng.choice(3, p=w / w.sum())

    conds = []
    if mode == 2 and tc.latent_len >= 2:
        n_seg = int(rng.integers(2, min(max_clip_latents, tc.latent_len) + 1))
        s = int(rng.integers(0, tc.latent_len - n_seg + 1))
        f0 = tc.latent_to_frame_span(s)[0]
        f1 = tc.latent_to_frame_span(s + n_seg - 1)[1]
        clip = _replicate_frames(latents, f0, f1)
        conds.append(ConditionSpec(kind=KIND_CLIP, anchor_frame=f0, payload=clip))
    elif mode == 1:
        anchors = tc.valid_anchors()
        count = int(rng.integers(1, min(2, len(anchors)) + 1))
        picks = rng.choice(len(anchors), size=count, replace=False)
        for a in sorted(anchors[i] for i in picks):
            conds.append(ConditionSpec(
                kind=KIND_IMAGE, anchor_frame=int(a),
                payload=_replicate_frames(latents, int(a), int(a))))
    else:
        lo, hi = actions[int(rng.integers(0, len(actions)))]
        frames = {tc.snap_anchor(int(lo))[0], tc.snap_anchor(int(hi))[0]}
        for a in sorted(frames):
            conds.append(ConditionSpec(
                kind=KIND_IMAGE, anchor_frame=a,
                payload=_replicate_frames(latents, a, a)))
    return Timeline(total_frames=tc.pixel_len, prompt_id=prompt_id, conditions=conds)
