"""Factorized rotary embedding: phase structure and rotation identities."""

import numpy as np
import pytest
import torch

from anchorvid.errors import ConfigError
from anchorvid.rope import apply_rope, check_sub_dims, grid_indices, rope_phases


def naive_complex_rotation(x, phases):
    """Reference: rotate each (2j, 2j+1) pair as a complex number."""
    out = np.asarray(x, dtype=np.float64).copy()
    ph = np.asarray(phases)
    flat = out.reshape(-1, out.shape[-2], out.shape[-1])
    for b in range(flat.shape[0]):
        for l in range(flat.shape[1]):
            for j in range(ph.shape[-1]):
                c = complex(flat[b, l, 2 * j], flat[b, l, 2 * j + 1])
                rot = c * np.exp(1j * ph[l, j])
                flat[b, l, 2 * j] = rot.real
                flat[b, l, 2 * j + 1] = rot.imag
    return flat.reshape(out.shape)


def test_apply_rope_matches_complex_oracle(rng):
    idx = grid_indices(2, 3, 2)
    phases = rope_phases(idx, (4, 6, 6))
    x = rng.standard_normal((2, idx.shape[0], 16))
    got = apply_rope(torch.from_numpy(x), phases).numpy()
    want = naive_complex_rotation(x, phases.numpy())
    assert np.abs(got - want).max() < 1e-12


def test_phases_are_additive_in_position():
    # phases(i + d) - phases(i) depends only on d: relative structure
    idx_a = torch.tensor([[1, 2, 3], [4, 0, 2]])
    d = torch.tensor([3, 1, 2])
    pa = rope_phases(idx_a, (4, 6, 6))
    pb = rope_phases(idx_a + d, (4, 6, 6))
    pd = rope_phases(d[None], (4, 6, 6))
    assert ((pb - pa) - pd).abs().max() < 1e-12


def test_dot_products_depend_only_on_relative_position(rng):
    sub = (4, 6, 6)
    q = torch.from_numpy(rng.standard_normal((1, 4, 16)))
    k = torch.from_numpy(rng.standard_normal((1, 4, 16)))
    idx = torch.tensor([[0, 1, 0], [2, 1, 3], [1, 0, 2], [3, 3, 3]])
    shift = torch.tensor([5, 2, 4])
    s1 = apply_rope(q, rope_phases(idx, sub)) @ \
        apply_rope(k, rope_phases(idx, sub)).transpose(-1, -2)
    s2 = apply_rope(q, rope_phases(idx + shift, sub)) @ \
        apply_rope(k, rope_phases(idx + shift, sub)).transpose(-1, -2)
    assert (s1 - s2).abs().max() < 1e-10


def test_zero_relative_position_cancels(rng):
    # same index for q and k -> rotation cancels in the product entirely
    sub = (4, 6, 6)
    q = torch.from_numpy(rng.standard_normal((16,)))
    k = torch.from_numpy(rng.standard_normal((16,)))
    idx = torch.tensor([[7, 3, 5]])
    ph = rope_phases(idx, sub)
    qr = apply_rope(q[None, None], ph)[0, 0]
    kr = apply_rope(k[None, None], ph)[0, 0]
    assert abs(float(qr @ kr) - float(q @ k)) < 1e-10


def test_grid_indices_row_major():
    idx = grid_indices(2, 2, 3)
    assert idx.shape == (12, 3)
    assert idx[0].tolist() == [0, 0, 0]
    assert idx[1].tolist() == [0, 0, 1]
    assert idx[3].tolist() == [0, 1, 0]
    assert idx[6].tolist() == [1, 0, 0]


def test_sub_dim_validation():
    check_sub_dims((4, 6, 6), 16)
    with pytest.raises(ConfigError):
        check_sub_dims((4, 6, 6), 12)
    with pytest.raises(ConfigError):
        check_sub_dims((3, 6, 7), 16)  # odd components
    with pytest.raises(ConfigError):
        check_sub_dims((0, 8, 8), 16)
