"""Conditional latent diffusion transformer with flow-matching training.

The denoiser consumes channel-concatenated (noisy latent, condition
latent, occupancy mask) grids, predicts the straight-line velocity from
noise to data, and samples by Euler integration of that velocity field.
Training draws randomized timelines from the corpus annotations each
step, so conditioning patterns (first frame, boundary frames, clips) are
seen in mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .conditioning import ConditionLayout, build_layout, sample_training_conditions
from .errors import ConfigError, NonFiniteError
from .geometry import TemporalCompression
from .model import CoreConfig, clone_params, forward_tokens, init_params
from .rope import grid_indices
from .seeds import rng_for
from .vae import LatentVideo


@dataclass(frozen=True)
class DiTConfig:
    dim: int = 64
    heads: int = 4
    blocks: int = 4
    grid: tuple[int, int, int] = (5, 8, 8)
    channels: int = 3
    rope_sub_dims: tuple[int, int, int] = (4, 6, 6)
    vocab: int = 16
    sample_steps: int = 16
    stride: int = 4
    patch: int = 4
    mlp_ratio: int = 4
    rope_base: float = 10000.0

    @property
    def in_channels(self) -> int:
        return 2 * self.channels + 1

    def core(self) -> CoreConfig:
        return CoreConfig(
            dim=self.dim, heads=self.heads, blocks=self.blocks,
            in_channels=self.in_channels, out_channels=self.channels,
            rope_sub_dims=tuple(self.rope_sub_dims), vocab=self.vocab,
            mlp_ratio=self.mlp_ratio, rope_base=self.rope_base)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim, "heads": self.heads, "blocks": self.blocks,
            "grid": list(self.grid), "channels": self.channels,
            "rope_sub_dims": list(self.rope_sub_dims), "vocab": self.vocab,
            "sample_steps": self.sample_steps, "stride": self.stride,
            "patch": self.patch, "mlp_ratio": self.mlp_ratio,
            "rope_base": self.rope_base,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiTConfig":
        d = dict(d)
        for key in ("grid", "rope_sub_dims"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    optimizer: str = "sgd"
    momentum: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    sampler_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps, "batch_size": self.batch_size, "lr": self.lr,
            "optimizer": self.optimizer, "momentum": self.momentum,
            "adam_beta2": self.adam_beta2, "adam_eps": self.adam_eps,
            "sampler_weights": list(self.sampler_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "sampler_weights" in d:
            d["sampler_weights"] = tuple(d["sampler_weights"])
        return cls(**d)


@dataclass
class FlowBatch:
    """One training minibatch in grid form, all torch tensors.

    x, eps: [B, T, H, W, C]; t: [B]; cond: [B, T, H, W, C];
    mask: [B, T, 1]; prompts: [B] int64.
    """

    x: torch.Tensor
    eps: torch.Tensor
    t: torch.Tensor
    cond: torch.Tensor
    mask: torch.Tensor
    prompts: torch.Tensor

    def to(self, dtype: torch.dtype) -> "FlowBatch":
        return FlowBatch(
            x=self.x.to(dtype), eps=self.eps.to(dtype), t=self.t.to(dtype),
            cond=self.cond.to(dtype), mask=self.mask.to(dtype), prompts=self.prompts)


def init_dit_params(cfg: DiTConfig, seed: int) -> dict[str, torch.Tensor]:
    return init_params(cfg.core(), seed)


def make_batch(samples: list[tuple[np.ndarray, np.ndarray, float, ConditionLayout, int]]) -> FlowBatch:
    """Stack (x, eps, t, layout, prompt) samples into a FlowBatch."""
    xs, es, ts, cs, ms, ps = [], [], [], [], [], []
    for x, eps, t, layout, prompt in samples:
        xs.append(np.asarray(x, dtype=np.float32))
        es.append(np.asarray(eps, dtype=np.float32))
        ts.append(float(t))
        cs.append(np.asarray(layout.cond, dtype=np.float32))
        ms.append(np.asarray(layout.mask, dtype=np.float32))
        ps.append(int(prompt))
    return FlowBatch(
        x=torch.from_numpy(np.stack(xs)), eps=torch.from_numpy(np.stack(es)),
        t=torch.tensor(ts, dtype=torch.float32),
        cond=torch.from_numpy(np.stack(cs)), mask=torch.from_numpy(np.stack(ms)),
        prompts=torch.tensor(ps, dtype=torch.int64))


def _to_tokens(cfg: DiTConfig, z: torch.Tensor, cond: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    b, t, h, w, c = z.shape
    m = mask[:, :, None, None, :].expand(b, t, h, w, 1)
    grid = torch.cat((z, cond.to(z.dtype), m.to(z.dtype)), dim=-1)
    return grid.reshape(b, t * h * w, cfg.in_channels)


def forward_velocity(params: dict[str, torch.Tensor], cfg: DiTConfig,
                     z: torch.Tensor, t: torch.Tensor, cond: torch.Tensor,
                     mask: torch.Tensor, prompts: torch.Tensor) -> torch.Tensor:
    """Batched velocity prediction on [B, T, H, W, C] grids."""
    b, t_lat, h, w, c = z.shape
    if c != cfg.channels:
        raise ConfigError(f"latent channels {c} != config {cfg.channels}")
    if cond.shape != z.shape:
        raise ConfigError(f"cond shape {tuple(cond.shape)} != latent shape {tuple(z.shape)}")
    if mask.shape != (b, t_lat, 1):
        raise ConfigError(f"mask shape {tuple(mask.shape)} != {(b, t_lat, 1)}")
    tokens = _to_tokens(cfg, z, cond, mask)
    rope_idx = grid_indices(t_lat, h, w)
    out = forward_tokens(params, cfg.core(), tokens, t, prompts, rope_idx)
    return out.reshape(b, t_lat, h, w, cfg.channels)


def forward(params: dict[str, torch.Tensor], cfg: DiTConfig, x_t: np.ndarray,
            t: float, layout: ConditionLayout, prompt: int) -> np.ndarray:
    """Single-sample velocity prediction on a [T, H, W, C] grid."""
    z = torch.from_numpy(np.asarray(x_t, dtype=np.float32))[None]
    cond = torch.from_numpy(np.asarray(layout.cond, dtype=np.float32))[None]
    mask = torch.from_numpy(np.asarray(layout.mask, dtype=np.float32))[None]
    tt = torch.tensor([float(t)], dtype=torch.float32)
    pp = torch.tensor([int(prompt)], dtype=torch.int64)
    with torch.no_grad():
        out = forward_velocity(params, cfg, z, tt, cond, mask, pp)
    return out[0].numpy()


def flow_loss_per_sample(params: dict[str, torch.Tensor], cfg: DiTConfig, batch: FlowBatch) -> torch.Tensor:
    """Per-sample velocity-matching MSE on linear interpolants, shape [B].

    x_t = (1 - t) eps + t x; target v = x - eps.
    """
    t = batch.t[:, None, None, None, None]
    x_t = (1.0 - t) * batch.eps + t * batch.x
    target = batch.x - batch.eps
    pred = forward_velocity(params, cfg, x_t, batch.t, batch.cond, batch.mask, batch.prompts)
    return ((pred - target) ** 2).mean(dim=(1, 2, 3, 4))


def flow_loss(params: dict[str, torch.Tensor], cfg: DiTConfig, batch: FlowBatch) -> torch.Tensor:
    """Velocity-matching MSE averaged over the batch."""
    return flow_loss_per_sample(params, cfg, batch).mean()


def grad(params: dict[str, torch.Tensor], cfg: DiTConfig, batch: FlowBatch) -> tuple[float, dict[str, torch.Tensor]]:
    """Exact reverse-mode gradient of flow_loss for every parameter."""
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = flow_loss(leaves, cfg, batch)
    loss.backward()
    grads = {k: (v.grad.detach().clone() if v.grad is not None else torch.zeros_like(v))
             for k, v in leaves.items()}
    return float(loss.detach()), grads


class Optimizer:
    """Plain SGD with momentum, or Adam, over the params dict."""

    def __init__(self, cfg: TrainConfig, params: dict[str, torch.Tensor]):
        self.cfg = cfg
        if cfg.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")
        self.step_count = 0
        self.m = {k: torch.zeros_like(v) for k, v in params.items()}
        self.v = {k: torch.zeros_like(v) for k, v in params.items()} if cfg.optimizer == "adam" else None

    def step(self, params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        self.step_count += 1
        out = {}
        c = self.cfg
        for k, p in params.items():
            g = grads[k]
            if c.optimizer == "sgd":
                self.m[k] = c.momentum * self.m[k] + g
                out[k] = p - c.lr * self.m[k]
            else:
                b1 = c.momentum
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = c.adam_beta2 * self.v[k] + (1 - c.adam_beta2) * g * g
                mh = self.m[k] / (1 - b1 ** self.step_count)
                vh = self.v[k] / (1 - c.adam_beta2 ** self.step_count)
                out[k] = p - c.lr * mh / (torch.sqrt(vh) + c.adam_eps)
        return out


def draw_training_sample(entry: dict, cfg: DiTConfig, rng: np.random.Generator,
                         sampler_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)):
    """One (x, eps, t, layout, prompt) draw from a corpus entry."""
    latent: LatentVideo = entry["latent"]
    ann = entry["annotations"]
    tl = sample_training_conditions(latent, ann, rng, weights=sampler_weights)
    layout = build_layout(tl, latent.tc, cfg.patch, rng)
    t = float(rng.random())
    eps = rng.standard_normal(latent.data.shape)
    return latent.data, eps, t, layout, tl.prompt_id


def train(params: dict[str, torch.Tensor], cfg: DiTConfig, dataset: list[dict],
          tcfg: TrainConfig, seed: int) -> tuple[dict[str, torch.Tensor], list[float]]:
    """Flow-matching training loop, deterministic given seed.

    dataset entries: {"latent": LatentVideo, "annotations": {...}}.
    Returns updated params and the per-step loss history.
    """
    if not dataset:
        raise ConfigError("empty training dataset")
    params = clone_params(params)
    opt = Optimizer(tcfg, params)
    history = []
    for step in range(tcfg.steps):
        idx_rng = rng_for(seed, "train", step, "batch")
        idx = idx_rng.integers(0, len(dataset), size=tcfg.batch_size)
        samples = []
        for i, di in enumerate(idx):
            rng = rng_for(seed, "train", step, i)
            samples.append(draw_training_sample(dataset[int(di)], cfg, rng, tcfg.sampler_weights))
        batch = make_batch(samples)
        loss, grads = grad(params, cfg, batch)
        if not np.isfinite(loss):
            raise NonFiniteError(f"training loss became non-finite: {loss}", step=step)
        params = opt.step(params, grads)
        history.append(loss)
    return params, history


def eval_loss(params: dict[str, torch.Tensor], cfg: DiTConfig, dataset: list[dict],
              seed: int, n_batches: int = 8, batch_size: int = 4,
              sampler_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)) -> float:
    """Mean flow loss over a fixed, seed-determined evaluation set."""
    total = 0.0
    with torch.no_grad():
        for j in range(n_batches):
            idx = rng_for(seed, "evalset", j, "batch").integers(0, len(dataset), size=batch_size)
            samples = []
            for i, di in enumerate(idx):
                rng = rng_for(seed, "evalset", j, i)
                samples.append(draw_training_sample(dataset[int(di)], cfg, rng, sampler_weights))
            total += float(flow_loss(params, cfg, make_batch(samples)))
    return total / n_batches


def generate(params: dict[str, torch.Tensor], cfg: DiTConfig, layout: ConditionLayout,
             prompt: int, seed: int, tc: TemporalCompression | None = None,
             steps: int | None = None, anchor_latents: bool = False) -> LatentVideo:
    """Euler sampling from t=0 (pure noise) to t=1 in S uniform steps.

    Condition channels are held fixed; the model output alone moves the
    state. With anchor_latents, occupied positions are pinned to the
    interpolant toward the condition values at every step (debug mode).
    """
    s = cfg.sample_steps if steps is None else int(steps)
    if s < 1:
        raise ConfigError(f"sample steps must be >= 1, got {s}")
    t_lat, h, w = layout.cond.shape[0], layout.cond.shape[1], layout.cond.shape[2]
    if tc is None:
        tc = TemporalCompression(stride=cfg.stride, pixel_len=1 + (t_lat - 1) * cfg.stride)
    if tc.latent_len != t_lat:
        raise ConfigError(f"layout length {t_lat} != compression latent length {tc.latent_len}")
    rng = rng_for(seed, "gen")
    eps = rng.standard_normal((t_lat, h, w, cfg.channels))
    z = torch.from_numpy(eps.astype(np.float32))[None]
    eps0 = z.clone()
    cond = torch.from_numpy(np.asarray(layout.cond, dtype=np.float32))[None]
    mask = torch.from_numpy(np.asarray(layout.mask, dtype=np.float32))[None]
    m_grid = mask[:, :, None, None, :].expand_as(z)
    pp = torch.tensor([int(prompt)], dtype=torch.int64)
    with torch.no_grad():
        for i in range(s):
            t_i = i / s
            if anchor_latents:
                pinned = (1.0 - t_i) * eps0 + t_i * cond
                z = torch.where(m_grid > 0, pinned, z)
            tt = torch.tensor([t_i], dtype=torch.float32)
            v = forward_velocity(params, cfg, z, tt, cond, mask, pp)
            z = z + v / s
        if anchor_latents:
            z = torch.where(m_grid > 0, cond.to(z.dtype), z)
    out = z[0].numpy()
    if not np.isfinite(out).all():
        raise NonFiniteError("generation produced non-finite latents")
    return LatentVideo(data=out.astype(np.float32), tc=tc, patch=cfg.patch)
