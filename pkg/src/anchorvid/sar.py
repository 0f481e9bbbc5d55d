"""Segment-wise autoregressive generation over long latent timelines.

A timeline whose latent length exceeds the window budget is split into
overlapping segments. The scan is greedy: each window runs as far as the
budget allows, then ends on the latest condition boundary inside it that
lies beyond the previous segment's end (falling back to the hard cap
when none does). Each new segment starts K frames before the previous
end; those K positions receive the previous segment's final latents as a
hard condition, and after generation the overlap is fused by a linear
crossfade before decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditioning import (
    KIND_CLIP,
    SOURCE_TAIL,
    ConditionLayout,
    ConditionSpec,
    Timeline,
    build_layout,
    condition_latent_span,
)
from .dit import DiTConfig, generate
from .errors import ConfigError, LayoutConflictError
from .geometry import TemporalCompression
from .seeds import rng_for, segment_seed
from .vae import LatentVideo

FUSION_MODES = ("crossfade", "previous")


@dataclass
class SegmentPlan:
    """Ordered inclusive latent ranges plus per-segment condition routing."""

    segments: list[tuple[int, int]]
    tail_k: int
    l_max: int
    boundaries: list[int] = field(default_factory=list)
    routing: list[list[int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "segments": [list(s) for s in self.segments],
            "tail_k": self.tail_k, "l_max": self.l_max,
            "boundaries": list(self.boundaries),
            "routing": [list(r) for r in self.routing],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentPlan":
        return cls(segments=[tuple(s) for s in d["segments"]],
                   tail_k=d["tail_k"], l_max=d["l_max"],
                   boundaries=list(d.get("boundaries", [])),
                   routing=[list(r) for r in d.get("routing", [])])


def plan_segments(n: int, boundaries, l_max: int, k: int) -> SegmentPlan:
    """Greedy boundary-aware partition of latent indices [0, n).

    From start a the furthest end is e = a + l_max - 1. If e reaches the
    final index the segment ends there; otherwise it ends on the latest
    boundary past the previous segment's end and within e, or on e when
    no boundary qualifies. The next segment starts k before the end,
    clamped to one past the current start so a boundary-shortened
    segment (length <= k) cannot stall the scan or walk off index 0; the
    effective overlap at such a join shrinks to the previous length - 1.
    """
    if l_max < 2:
        raise ConfigError(f"l_max must be >= 2, got {l_max}")
    if not 1 <= k < l_max:
        raise ConfigError(f"tail length {k} must satisfy 1 <= k < l_max={l_max}")
    if n < 1:
        raise ConfigError(f"latent length must be >= 1, got {n}")
    bounds = sorted(set(int(b) for b in boundaries))
    if bounds and (bounds[0] < 0 or bounds[-1] >= n):
        raise ConfigError(f"boundaries {bounds} outside latent range [0, {n})")

    segments = []
    a, prev_end = 0, -1
    while True:
        e = a + l_max - 1
        if e >= n - 1:
            segments.append((a, n - 1))
            break
        floor = max(a, prev_end)
        cands = [b for b in bounds if floor < b <= e]
        end = cands[-1] if cands else e
        segments.append((a, end))
        prev_end = end
        a = max(end - k + 1, a + 1)
    return SegmentPlan(segments=segments, tail_k=k, l_max=l_max, boundaries=bounds)


def condition_boundaries(tl: Timeline, tc: TemporalCompression) -> list[int]:
    """Candidate cut points: each condition's first latent index, plus the
    last latent index of clip conditions."""
    bounds = set()
    for c in tl.conditions:
        lo, hi = condition_latent_span(c, tc)
        bounds.add(lo)
        if c.kind == KIND_CLIP:
            bounds.add(hi)
    return sorted(bounds)


def route_conditions(plan: SegmentPlan, spans: list[tuple[int, int]]) -> tuple[list[list[int]], list[int]]:
    """Assign each condition to every segment that contains its span.

    Returns (per-segment index lists, indices contained in no segment).
    """
    routing = [[] for _ in plan.segments]
    orphans = []
    for i, (lo, hi) in enumerate(spans):
        hit = False
        for s, (a, b) in enumerate(plan.segments):
            if a <= lo and hi <= b:
                routing[s].append(i)
                hit = True
        if not hit:
            orphans.append(i)
    return routing, orphans


def extract_tail(prev_latents: np.ndarray, k: int) -> ConditionSpec:
    """Last k latent frames of a generated segment, as a hard condition
    pinned to the next segment's first k positions (never re-sampled)."""
    prev_latents = np.asarray(prev_latents)
    if prev_latents.shape[0] < k:
        raise ConfigError(f"segment length {prev_latents.shape[0]} < tail length {k}")
    return ConditionSpec(kind=KIND_CLIP, anchor_frame=0, payload=prev_latents[-k:].copy(),
                         source=SOURCE_TAIL, anchor_latent=0)


def _fuse_weights(k: int) -> np.ndarray:
    # ramp 1 -> 0 for the previous segment over the k overlap positions
    if k == 1:
        return np.array([0.5])
    return 1.0 - np.arange(k) / (k - 1)


def generate_long(params, cfg: DiTConfig, tl: Timeline, l_max: int, k: int, seed: int,
                  fusion: str = "crossfade", steps: int | None = None
                  ) -> tuple[LatentVideo, SegmentPlan]:
    """Plan, generate segment by segment, and fuse overlaps.

    The condition layout is built once over the full timeline and sliced
    per segment, so a single-segment plan is bitwise identical to one
    direct sampling call. Tail latents overwrite the first k positions of
    every later segment; a user clip that straddles the tail span cannot
    be honored and raises a conflict naming the segment.
    """
    if fusion not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {fusion!r}")
    tc = TemporalCompression(stride=cfg.stride, pixel_len=tl.total_frames)
    n = tc.latent_len
    layout = build_layout(tl, tc, cfg.patch, rng_for(seed, "layout"))
    h, w = layout.cond.shape[1], layout.cond.shape[2]
    spans = [condition_latent_span(c, tc) for c in tl.conditions]

    plan = plan_segments(n, condition_boundaries(tl, tc), l_max, k)
    plan.routing, orphans = route_conditions(plan, spans)
    if orphans:
        raise LayoutConflictError(
            [(spans[i][0], [i]) for i in orphans],
            message="conditions span no single segment; shorten clips or raise l_max")

    canvas = np.zeros((n, h, w, cfg.channels), dtype=np.float32)
    prev = None
    for si, (a, b) in enumerate(plan.segments):
        seg_cond = layout.cond[a : b + 1].copy()
        seg_mask = layout.mask[a : b + 1].copy()
        routed = set(plan.routing[si])
        anchors = []
        for ci, (lo, hi) in enumerate(spans):
            if ci in routed:
                continue
            # scrub conditions not routed here from the slice
            o_lo, o_hi = max(lo, a), min(hi, b)
            if o_lo <= o_hi:
                seg_cond[o_lo - a : o_hi - a + 1] = 0.0
                seg_mask[o_lo - a : o_hi - a + 1] = 0.0
        if si > 0:
            # overlap actually shared with the previous segment; equals k
            # except after a boundary-shortened segment
            ov = plan.segments[si - 1][1] - a + 1
            tail_hi = a + ov - 1
            for ci in sorted(routed):
                lo, hi = spans[ci]
                if lo <= tail_hi and hi > tail_hi:
                    raise LayoutConflictError(
                        [(lo, [ci])], segment=si,
                        message="user clip straddles the tail overlap")
                if hi > tail_hi:
                    anchors.append((lo - a, tl.conditions[ci].kind))
            tail = extract_tail(prev, ov)
            seg_cond[:ov] = tail.payload
            seg_mask[:ov] = 1.0
            anchors.insert(0, (0, KIND_CLIP))
        else:
            anchors = [(spans[ci][0] - a, tl.conditions[ci].kind) for ci in sorted(routed)]
        seg_layout = ConditionLayout(cond=seg_cond, mask=seg_mask, rope_anchors=anchors)
        z = generate(params, cfg, seg_layout, tl.prompt_id, segment_seed(seed, si), steps=steps).data

        if si == 0:
            canvas[a : b + 1] = z
        else:
            if fusion == "crossfade":
                wts = _fuse_weights(ov)[:, None, None, None].astype(np.float32)
                canvas[a : a + ov] = wts * canvas[a : a + ov] + (1.0 - wts) * z[:ov]
            canvas[a + ov : b + 1] = z[ov:]
        prev = z
    return LatentVideo(data=canvas, tc=tc, patch=cfg.patch), plan
