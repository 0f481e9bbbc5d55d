"""Factorized rotary position embedding over (t, h, w) token indices.

The per-head channel dimension is split into one even-sized slice per
axis; each slice gets standard rotary phases driven by that axis's index.
Attention logits between rotated q and k then depend on the per-axis
index differences only, which is the property the sequence-tail
conditioning trick relies on: a tail token carrying the same indices as
its target has zero relative rotation against it.
"""

from __future__ import annotations

import torch

from .errors import ConfigError


def check_sub_dims(sub_dims: tuple[int, int, int], head_dim: int):
    if len(sub_dims) != 3 or any(m <= 0 or m % 2 for m in sub_dims):
        raise ConfigError(f"rope sub-dims must be three positive even ints, got {sub_dims}")
    if sum(sub_dims) != head_dim:
        raise ConfigError(f"rope sub-dims {sub_dims} must sum to head dim {head_dim}")


def rope_phases(indices: torch.Tensor, sub_dims: tuple[int, int, int],
                base: float = 10000.0) -> torch.Tensor:
    """Per-token rotation phases.

    indices: [L, 3] integer (t, h, w) per token. Returns [L, sum(m)/2]
    float64 angles, ordered axis by axis, one angle per rotated pair.
    """
    if indices.ndim != 2 or indices.shape[1] != 3:
        raise ConfigError(f"rope indices must be [L, 3], got {tuple(indices.shape)}")
    pos = indices.to(torch.float64)
    parts = []
    for axis, m in enumerate(sub_dims):
        half = m // 2
        inv = base ** (-torch.arange(half, dtype=torch.float64) * 2.0 / m)
        parts.append(pos[:, axis : axis + 1] * inv[None, :])
    return torch.cat(parts, dim=1)


def apply_rope(x: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
    """Rotate channel pairs of q or k by the per-token phases.

    x: [..., L, D] with D = 2 * phases.shape[1]; pairs are (2j, 2j+1).
    """
    cos = torch.cos(phases).to(x.dtype)
    sin = torch.sin(phases).to(x.dtype)
    x2 = x.reshape(*x.shape[:-1], -1, 2)
    even, odd = x2[..., 0], x2[..., 1]
    rot = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return rot.reshape(x.shape)


def grid_indices(t_len: int, h_len: int, w_len: int) -> torch.Tensor:
    """Row-major [..., 3] index table for a full (t, h, w) grid, flattened."""
    t, h, w = torch.meshgrid(
        torch.arange(t_len), torch.arange(h_len), torch.arange(w_len), indexing="ij")
    return torch.stack((t, h, w), dim=-1).reshape(-1, 3)
