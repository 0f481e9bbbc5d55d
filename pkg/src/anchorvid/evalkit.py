"""Deterministic evaluation metrics and JSON reports.

Human pairwise preference studies are out of reach here, so quality is
tracked with small, exactly reproducible measurements: pixel fidelity at
conditioned frames, jump statistics at segment joins versus segment
interiors, per-frame color-mean drift, and object-centroid motion.
Every metric is a pure function of its inputs; reports carry a config
hash so two runs are comparable at a glance.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .conditioning import SOURCE_USER, Timeline
from .sar import SegmentPlan
from .vae import LatentVideo, PixelVideo

PSNR_CAP = 99.0
RATIO_SENTINEL = 1e9


def psnr(mse: float) -> float:
    """10 log10(1 / MSE) on [0, 1] pixels, capped at the exactness sentinel."""
    if mse <= 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def condition_psnr(video: PixelVideo, tl: Timeline) -> list[float]:
    """Fidelity at each anchored span: one PSNR per user condition.

    Images compare a single frame; clips compare their whole span.
    """
    frames = np.asarray(video.frames, dtype=np.float64)
    if frames.shape[0] != tl.total_frames:
        raise ValueError(f"video length {frames.shape[0]} != timeline length {tl.total_frames}")
    out = []
    for c in tl.conditions:
        if c.source != SOURCE_USER:
            continue
        a = c.anchor_frame
        span = frames[a : a + c.payload.shape[0]]
        if span.shape != c.payload.shape:
            raise ValueError(f"condition span [{a}, {a + c.payload.shape[0]}) exceeds video")
        mse = float(((span - np.asarray(c.payload, dtype=np.float64)) ** 2).mean())
        out.append(psnr(mse))
    return out


def join_continuity(latent: LatentVideo, plan: SegmentPlan) -> dict:
    """Adjacent-frame jump statistics split by segment joins.

    Transitions touching an internal segment end (one step before and
    one after it) count as joins; the rest are interior. Conventions:
    no joins or 0/0 -> ratio 1.0; interior zero with nonzero joins ->
    a large sentinel.
    """
    data = np.asarray(latent.data, dtype=np.float64)
    n = data.shape[0]
    if plan.segments[0][0] != 0 or plan.segments[-1][1] != n - 1:
        raise ValueError(f"plan covers [0, {plan.segments[-1][1]}], latent has {n} frames")
    diffs = ((data[1:] - data[:-1]) ** 2).mean(axis=tuple(range(1, data.ndim)))
    join_idx = set()
    for a, b in plan.segments[:-1]:
        for i in (b - 1, b):
            if 0 <= i < n - 1:
                join_idx.add(i)
    interior_idx = [i for i in range(n - 1) if i not in join_idx]
    join = [diffs[i] for i in sorted(join_idx)]
    interior = [diffs[i] for i in interior_idx]
    join_mean = float(np.mean(join)) if join else 0.0
    interior_mean = float(np.mean(interior)) if interior else 0.0
    if not join or (join_mean == 0.0 and interior_mean == 0.0):
        ratio = 1.0
    elif interior_mean == 0.0:
        ratio = RATIO_SENTINEL
    else:
        ratio = float(min(join_mean / interior_mean, RATIO_SENTINEL))
    return {"join_mean": join_mean, "interior_mean": interior_mean, "ratio": ratio,
            "n_join": len(join), "n_interior": len(interior)}


def color_mean_drift(frames: np.ndarray) -> float:
    """Mean absolute step of the per-frame channel means, over time."""
    f = np.asarray(frames, dtype=np.float64)
    if f.shape[0] < 2:
        raise ValueError("drift needs at least 2 frames")
    means = f.mean(axis=tuple(range(1, f.ndim - 1)))
    return float(np.abs(means[1:] - means[:-1]).mean())


def luminance_centroids(frames: np.ndarray, thresh: float = 0.45) -> np.ndarray:
    """Bright-region centroid per frame, [T, 2] as (y, x).

    Pixels above the luminance threshold vote with their luminance; a
    frame with no bright pixels falls back to the frame center.
    """
    f = np.asarray(frames, dtype=np.float64)
    t, h, w, _ = f.shape
    lum = f.mean(axis=-1)
    wts = np.where(lum > thresh, lum, 0.0)
    ys = np.arange(h, dtype=np.float64)[None, :, None]
    xs = np.arange(w, dtype=np.float64)[None, None, :]
    tot = wts.sum(axis=(1, 2))
    cy = np.where(tot > 0, (wts * ys).sum(axis=(1, 2)) / np.maximum(tot, 1e-12), (h - 1) / 2.0)
    cx = np.where(tot > 0, (wts * xs).sum(axis=(1, 2)) / np.maximum(tot, 1e-12), (w - 1) / 2.0)
    return np.stack([cy, cx], axis=1)


def max_centroid_step(frames: np.ndarray, thresh: float = 0.45) -> float:
    """Largest single-step displacement of the bright-region centroid."""
    c = luminance_centroids(frames, thresh)
    if c.shape[0] < 2:
        raise ValueError("centroid step needs at least 2 frames")
    return float(np.linalg.norm(c[1:] - c[:-1], axis=1).max())


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def make_report(metrics: dict[str, list[float]], config=None, comparisons: dict | None = None) -> dict:
    """Aggregate per-sample metric lists into a summary report."""
    summary = {}
    for name in sorted(metrics):
        vals = np.asarray(metrics[name], dtype=np.float64)
        if vals.size == 0:
            raise ValueError(f"metric {name!r} has no samples")
        summary[name] = {"mean": float(vals.mean()), "std": float(vals.std()),
                         "n": int(vals.size)}
    report = {
        "header": "deterministic desk-scale metrics; no human preference protocol involved",
        "metrics": summary,
        "config_hash": config_hash(config or {}),
    }
    if comparisons:
        report["comparisons"] = comparisons
    return report


def save_report(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
