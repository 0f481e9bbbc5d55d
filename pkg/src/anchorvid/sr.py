"""Super-resolution denoiser with tied-rope tail conditioning.

The SR transformer refines a low-resolution latent to a finer spatial
grid. Conditions enter twice: channel-concatenated like the base model,
and additionally as tokens appended at the tail of the sequence whose
rotary indices are copied from the target cells they guide. A tail token
therefore sits at zero relative position to its target, which gives the
condition a direct, position-exact attention path. Video conditions
contribute only their first latent frame as tail tokens. Tail tokens are
clean (never noised), attend bidirectionally, and are excluded from the
output and the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .conditioning import ConditionLayout, build_layout, sample_training_conditions
from .errors import ConfigError, NonFiniteError
from .geometry import TemporalCompression
from .model import CoreConfig, clone_params, forward_tokens, init_params
from .rope import grid_indices
from .seeds import rng_for
from .vae import LatentVideo, encode

from .dit import Optimizer, TrainConfig


@dataclass(frozen=True)
class SrConfig:
    upscale: int = 2
    dim: int = 48
    heads: int = 4
    blocks: int = 2
    grid: tuple[int, int, int] = (5, 16, 16)
    channels: int = 3
    rope_sub_dims: tuple[int, int, int] = (4, 4, 4)
    vocab: int = 16
    sample_steps: int = 8
    stride: int = 4
    patch: int = 2
    mlp_ratio: int = 4
    rope_base: float = 10000.0
    lowres_noise: float = 0.1

    def __post_init__(self):
        if self.upscale < 2:
            raise ConfigError(f"upscale must be >= 2, got {self.upscale}")

    @property
    def in_channels(self) -> int:
        # noise + upsampled low-res + condition + mask
        return 3 * self.channels + 1

    @property
    def lowres_patch(self) -> int:
        return self.patch * self.upscale

    def core(self) -> CoreConfig:
        return CoreConfig(
            dim=self.dim, heads=self.heads, blocks=self.blocks,
            in_channels=self.in_channels, out_channels=self.channels,
            rope_sub_dims=tuple(self.rope_sub_dims), vocab=self.vocab,
            mlp_ratio=self.mlp_ratio, rope_base=self.rope_base)

    def to_dict(self) -> dict:
        return {
            "upscale": self.upscale, "dim": self.dim, "heads": self.heads,
            "blocks": self.blocks, "grid": list(self.grid), "channels": self.channels,
            "rope_sub_dims": list(self.rope_sub_dims), "vocab": self.vocab,
            "sample_steps": self.sample_steps, "stride": self.stride,
            "patch": self.patch, "mlp_ratio": self.mlp_ratio,
            "rope_base": self.rope_base, "lowres_noise": self.lowres_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SrConfig":
        d = dict(d)
        for key in ("grid", "rope_sub_dims"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def init_sr_params(cfg: SrConfig, seed: int) -> dict[str, torch.Tensor]:
    return init_params(cfg.core(), seed)


def upsample_lowres(data: np.ndarray, u: int) -> np.ndarray:
    """Nearest-neighbor spatial upsampling of a latent grid."""
    return np.repeat(np.repeat(data, u, axis=1), u, axis=2)


def build_sr_sequence(cfg: SrConfig, z: torch.Tensor, lowres_up: torch.Tensor,
                      layout: ConditionLayout, use_tail_tokens: bool = True
                      ) -> tuple[torch.Tensor, torch.Tensor, int]:
    """Token sequence: all target cells, then tail condition tokens.

    z, lowres_up: [T, H, W, C] at the SR grid. Tail tokens carry the
    condition cell in the condition channel slot, zeros in the noise and
    low-res slots, mask one, and the rotary index of the guided cell.
    One latent frame is appended per condition anchor (a clip condition
    contributes its first frame only). Returns (tokens, rope index
    table, target count).
    """
    t_lat, h, w, c = z.shape
    cond = torch.as_tensor(np.asarray(layout.cond, dtype=np.float32))
    mask = torch.as_tensor(np.asarray(layout.mask, dtype=np.float32))
    if cond.shape != (t_lat, h, w, c):
        raise ConfigError(f"layout grid {tuple(cond.shape)} != latent grid {(t_lat, h, w, c)}")
    m_grid = mask[:, None, None, :].expand(t_lat, h, w, 1)
    target = torch.cat((z, lowres_up.to(z.dtype), cond.to(z.dtype), m_grid.to(z.dtype)), dim=-1)
    tokens = target.reshape(t_lat * h * w, cfg.in_channels)
    rope_idx = grid_indices(t_lat, h, w)
    n_target = tokens.shape[0]
    if not use_tail_tokens or not layout.rope_anchors:
        return tokens, rope_idx, n_target

    tail_tokens, tail_idx = [], []
    zeros = torch.zeros((h * w, cfg.channels), dtype=z.dtype)
    for t0, _kind in layout.rope_anchors:
        if not 0 <= t0 < t_lat:
            raise ConfigError(f"rope anchor {t0} outside latent grid [0, {t_lat})")
        cells = cond[t0].reshape(h * w, cfg.channels).to(z.dtype)
        ones = torch.ones((h * w, 1), dtype=z.dtype)
        tail_tokens.append(torch.cat((zeros, zeros, cells, ones), dim=-1))
        idx = grid_indices(1, h, w).clone()
        idx[:, 0] = t0
        tail_idx.append(idx)
    tokens = torch.cat([tokens] + tail_tokens, dim=0)
    rope_idx = torch.cat([rope_idx] + tail_idx, dim=0)
    return tokens, rope_idx, n_target


def sr_forward(params: dict[str, torch.Tensor], cfg: SrConfig, tokens: torch.Tensor,
               t: torch.Tensor, prompt: torch.Tensor, rope_idx: torch.Tensor,
               n_target: int) -> torch.Tensor:
    """Full attention over targets plus tail; predictions for targets only."""
    out = forward_tokens(params, cfg.core(), tokens[None], t, prompt, rope_idx, out_len=n_target)
    return out[0]


def sr_sample_loss(params: dict[str, torch.Tensor], cfg: SrConfig, x: torch.Tensor,
                   lowres_up: torch.Tensor, layout: ConditionLayout, prompt: int,
                   t: float, eps: torch.Tensor, use_tail_tokens: bool = True) -> torch.Tensor:
    """Flow-matching loss for one SR sample."""
    x_t = (1.0 - t) * eps + t * x
    tokens, rope_idx, n_target = build_sr_sequence(cfg, x_t, lowres_up, layout, use_tail_tokens)
    tt = torch.tensor([float(t)], dtype=tokens.dtype)
    pp = torch.tensor([int(prompt)], dtype=torch.int64)
    pred = sr_forward(params, cfg, tokens, tt, pp, rope_idx, n_target)
    target = (x - eps).reshape(n_target, cfg.channels)
    return ((pred - target) ** 2).mean()


def sr_train(params: dict[str, torch.Tensor], cfg: SrConfig, dataset: list[dict],
             tcfg: TrainConfig, seed: int, use_tail_tokens: bool = True
             ) -> tuple[dict[str, torch.Tensor], list[float]]:
    """Train the SR denoiser on (low-res latent, high-res latent) pairs.

    dataset entries: {"latent_hi": LatentVideo, "latent_lo": LatentVideo,
    "annotations": {...}}. The low-res channel is perturbed with small
    training noise so the model cannot lean on it exclusively; the same
    augmentation applies with and without tail tokens, keeping the
    ablation comparison fair.
    """
    if not dataset:
        raise ConfigError("empty SR training dataset")
    params = clone_params(params)
    opt = Optimizer(tcfg, params)
    history = []
    for step in range(tcfg.steps):
        idx = rng_for(seed, "sr-train", step, "batch").integers(0, len(dataset), size=tcfg.batch_size)
        leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
        losses = []
        for i, di in enumerate(idx):
            rng = rng_for(seed, "sr-train", step, i)
            entry = dataset[int(di)]
            hi: LatentVideo = entry["latent_hi"]
            lo: LatentVideo = entry["latent_lo"]
            tl = sample_training_conditions(hi, entry["annotations"], rng, weights=tcfg.sampler_weights)
            layout = build_layout(tl, hi.tc, cfg.patch, rng)
            t = float(rng.random())
            eps = torch.from_numpy(rng.standard_normal(hi.data.shape).astype(np.float32))
            up = upsample_lowres(lo.data, cfg.upscale)
            up = up + cfg.lowres_noise * rng.standard_normal(up.shape)
            losses.append(sr_sample_loss(
                leaves, cfg, torch.from_numpy(hi.data), torch.from_numpy(up.astype(np.float32)),
                layout, tl.prompt_id, t, eps, use_tail_tokens))
        loss = torch.stack(losses).mean()
        fl = float(loss.detach())
        if not np.isfinite(fl):
            raise NonFiniteError("SR training loss became non-finite", step=step)
        loss.backward()
        grads = {k: (v.grad.detach().clone() if v.grad is not None else torch.zeros_like(v))
                 for k, v in leaves.items()}
        params = opt.step(params, grads)
        history.append(fl)
    return params, history


def sr_generate(params: dict[str, torch.Tensor], cfg: SrConfig, lowres: LatentVideo,
                layout: ConditionLayout, prompt: int, seed: int,
                steps: int | None = None, use_tail_tokens: bool = True) -> LatentVideo:
    """Euler sampling at the SR grid, rebuilding the sequence per step.

    Tail tokens keep their clean condition content throughout; only the
    target cells integrate the predicted velocity.
    """
    s = cfg.sample_steps if steps is None else int(steps)
    if s < 1:
        raise ConfigError(f"sample steps must be >= 1, got {s}")
    up = upsample_lowres(lowres.data, cfg.upscale).astype(np.float32)
    t_lat, h, w, c = up.shape
    rng = rng_for(seed, "sr-gen")
    z = torch.from_numpy(rng.standard_normal((t_lat, h, w, c)).astype(np.float32))
    up_t = torch.from_numpy(up)
    pp = torch.tensor([int(prompt)], dtype=torch.int64)
    with torch.no_grad():
        for i in range(s):
            tokens, rope_idx, n_target = build_sr_sequence(cfg, z, up_t, layout, use_tail_tokens)
            tt = torch.tensor([i / s], dtype=torch.float32)
            v = sr_forward(params, cfg, tokens, tt, pp, rope_idx, n_target)
            z = z + v.reshape(z.shape) / s
    out = z.numpy()
    if not np.isfinite(out).all():
        raise NonFiniteError("SR generation produced non-finite latents")
    return LatentVideo(data=out.astype(np.float32), tc=lowres.tc, patch=cfg.patch)


def prepare_sr_dataset(entries: list[dict], cfg: SrConfig) -> list[dict]:
    """Encode corpus entries at both spatial scales."""
    out = []
    for e in entries:
        hi = encode(e["video"], stride=cfg.stride, patch=cfg.patch).mean
        lo = encode(e["video"], stride=cfg.stride, patch=cfg.lowres_patch).mean
        out.append({"latent_hi": hi, "latent_lo": lo, "annotations": e["annotations"]})
    return out
