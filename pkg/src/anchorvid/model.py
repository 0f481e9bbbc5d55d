"""Functional transformer core shared by the base and super-resolution
denoisers.

Parameters live in a flat name -> tensor dict instead of nn.Module state
so that finite-difference gradient checks can walk every coordinate, the
preference trainer can evaluate policy and reference weights through one
code path, and checkpoints serialize to the plain tensor container.

Blocks are pre-norm: self-attention with factorized rotary indices, then
cross-attention to a single style embedding, then an MLP. The timestep
enters as an additive sinusoidal embedding passed through a small MLP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError
from .rope import apply_rope, check_sub_dims, rope_phases
from .seeds import rng_for


@dataclass(frozen=True)
class CoreConfig:
    dim: int
    heads: int
    blocks: int
    in_channels: int
    out_channels: int
    rope_sub_dims: tuple[int, int, int]
    vocab: int
    mlp_ratio: int = 4
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        check_sub_dims(tuple(self.rope_sub_dims), self.head_dim)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def param_shapes(cfg: CoreConfig) -> dict[str, tuple[int, ...]]:
    d, v, m = cfg.dim, cfg.vocab, cfg.mlp_ratio * cfg.dim
    shapes = {
        "proj_in.w": (cfg.in_channels, d), "proj_in.b": (d,),
        "time.w1": (d, d), "time.b1": (d,),
        "time.w2": (d, d), "time.b2": (d,),
        "text.embed": (v, d),
        "final.ln.g": (d,), "final.ln.b": (d,),
        "proj_out.w": (d, cfg.out_channels), "proj_out.b": (cfg.out_channels,),
    }
    for i in range(cfg.blocks):
        p = f"block{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.qkv.w": (d, 3 * d), p + "attn.qkv.b": (3 * d,),
            p + "attn.out.w": (d, d), p + "attn.out.b": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "cross.q.w": (d, d), p + "cross.q.b": (d,),
            p + "cross.kv.w": (d, 2 * d), p + "cross.kv.b": (2 * d,),
            p + "cross.out.w": (d, d), p + "cross.out.b": (d,),
            p + "ln3.g": (d,), p + "ln3.b": (d,),
            p + "mlp.w1": (d, m), p + "mlp.b1": (m,),
            p + "mlp.w2": (m, d), p + "mlp.b2": (d,),
        })
    return shapes


def init_params(cfg: CoreConfig, seed: int, scale: float = 0.02) -> dict[str, torch.Tensor]:
    """Deterministic init: N(0, scale^2) weights, zero biases, unit norms."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        rng = rng_for(seed, "init", name)
        if name.endswith(("ln.g", "ln1.g", "ln2.g", "ln3.g")):
            arr = np.ones(shape)
        elif name.endswith(".b") and "ln" not in name:
            arr = np.zeros(shape)
        elif name.endswith(("ln.b", "ln1.b", "ln2.b", "ln3.b")):
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape) * scale
        params[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(torch.float32)
    return params


def cast_params(params: dict[str, torch.Tensor], dtype: torch.dtype) -> dict[str, torch.Tensor]:
    return {k: v.detach().to(dtype).clone() for k, v in params.items()}


def clone_params(params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in params.items()}


def save_params(path, params: dict[str, torch.Tensor], meta: dict | None = None):
    """Checkpoint the params dict (as f32) plus a JSON meta blob."""
    from .tensorfile import write_tensors

    write_tensors(path, {k: v.detach().to(torch.float32).numpy() for k, v in params.items()}, meta)


def load_params(path) -> tuple[dict[str, torch.Tensor], dict]:
    from .tensorfile import read_tensors

    tensors, meta = read_tensors(path)
    return {k: torch.from_numpy(v) for k, v in tensors.items()}, meta


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * g + b


def timestep_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of scalar times t in [0, 1], shape [B, dim]."""
    half = dim // 2
    freqs = torch.exp(
        -np.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.dtype)
    args = t[:, None] * freqs[None, :] * 1000.0
    return torch.cat((torch.cos(args), torch.sin(args)), dim=1)


def _split_heads(x, heads):
    b, l, d = x.shape
    return x.reshape(b, l, heads, d // heads).transpose(1, 2)


def _merge_heads(x):
    b, h, l, hd = x.shape
    return x.transpose(1, 2).reshape(b, l, h * hd)


def forward_tokens(params: dict[str, torch.Tensor], cfg: CoreConfig,
                   tokens: torch.Tensor, t: torch.Tensor,
                   prompt_ids: torch.Tensor, rope_idx: torch.Tensor,
                   out_len: int | None = None) -> torch.Tensor:
    """Run the core on a token sequence.

    tokens: [B, L, in_channels]; t: [B] in [0, 1]; prompt_ids: [B] ints;
    rope_idx: [L, 3] per-token (t, h, w) indices. Returns [B, out_len,
    out_channels], reading only the first out_len positions (default L).
    """
    if tokens.ndim != 3 or tokens.shape[-1] != cfg.in_channels:
        raise ConfigError(f"tokens must be [B, L, {cfg.in_channels}], got {tuple(tokens.shape)}")
    if rope_idx.shape[0] != tokens.shape[1]:
        raise ConfigError(f"rope table length {rope_idx.shape[0]} != sequence length {tokens.shape[1]}")
    dtype = params["proj_in.w"].dtype
    x = tokens.to(dtype) @ params["proj_in.w"] + params["proj_in.b"]

    temb = timestep_features(t.to(dtype), cfg.dim)
    temb = torch.nn.functional.silu(temb @ params["time.w1"] + params["time.b1"])
    temb = temb @ params["time.w2"] + params["time.b2"]
    x = x + temb[:, None, :]

    ctx = params["text.embed"][prompt_ids][:, None, :]
    phases = rope_phases(rope_idx, tuple(cfg.rope_sub_dims), cfg.rope_base)
    scale = 1.0 / np.sqrt(cfg.head_dim)

    for i in range(cfg.blocks):
        p = f"block{i}."
        h = _layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        qkv = h @ params[p + "attn.qkv.w"] + params[p + "attn.qkv.b"]
        q, k, v = qkv.chunk(3, dim=-1)
        q, k, v = (_split_heads(z, cfg.heads) for z in (q, k, v))
        q = apply_rope(q, phases)
        k = apply_rope(k, phases)
        att = torch.softmax((q @ k.transpose(-1, -2)) * scale, dim=-1)
        h = _merge_heads(att @ v) @ params[p + "attn.out.w"] + params[p + "attn.out.b"]
        x = x + h

        h = _layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        q = _split_heads(h @ params[p + "cross.q.w"] + params[p + "cross.q.b"], cfg.heads)
        kv = ctx @ params[p + "cross.kv.w"] + params[p + "cross.kv.b"]
        ck, cv = kv.chunk(2, dim=-1)
        ck, cv = _split_heads(ck, cfg.heads), _split_heads(cv, cfg.heads)
        att = torch.softmax((q @ ck.transpose(-1, -2)) * scale, dim=-1)
        h = _merge_heads(att @ cv) @ params[p + "cross.out.w"] + params[p + "cross.out.b"]
        x = x + h

        h = _layer_norm(x, params[p + "ln3.g"], params[p + "ln3.b"])
        h = torch.nn.functional.gelu(h @ params[p + "mlp.w1"] + params[p + "mlp.b1"])
        h = h @ params[p + "mlp.w2"] + params[p + "mlp.b2"]
        x = x + h

    x = _layer_norm(x, params["final.ln.g"], params["final.ln.b"])
    if out_len is not None:
        x = x[:, :out_len]
    return x @ params["proj_out.w"] + params["proj_out.b"]
