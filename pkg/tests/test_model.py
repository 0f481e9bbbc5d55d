"""Transformer core: parameter inventory, timestep features, forward contracts."""

import math

import numpy as np
import pytest
import torch

from anchorvid.errors import ConfigError
from anchorvid.model import (
    CoreConfig,
    clone_params,
    forward_tokens,
    init_params,
    load_params,
    param_shapes,
    save_params,
    timestep_features,
)
from anchorvid.rope import grid_indices


def small_cfg(**kw):
    base = dict(dim=32, heads=2, blocks=2, in_channels=7, out_channels=3,
                rope_sub_dims=(4, 6, 6), vocab=8)
    base.update(kw)
    return CoreConfig(**base)


def test_param_inventory_is_complete_and_shaped():
    cfg = small_cfg()
    shapes = param_shapes(cfg)
    params = init_params(cfg, seed=0)
    assert set(params) == set(shapes)
    for name, p in params.items():
        assert tuple(p.shape) == shapes[name], name
        assert p.dtype == torch.float32
    assert shapes["proj_in.w"] == (7, 32)
    assert shapes["proj_out.w"] == (32, 3)
    assert shapes["block0.attn.qkv.w"] == (32, 96)
    assert shapes["block0.cross.kv.w"] == (32, 64)
    assert shapes["text.embed"] == (8, 32)


def test_init_is_seeded_and_scaled():
    cfg = small_cfg()
    a = init_params(cfg, seed=0)
    b = init_params(cfg, seed=0)
    c = init_params(cfg, seed=1)
    for k in a:
        assert torch.equal(a[k], b[k])
    assert any(not torch.equal(a[k], c[k]) for k in a)
    w = a["block0.attn.qkv.w"]
    assert abs(float(w.std()) - 0.02) < 0.005
    assert torch.all(a["block0.ln1.g"] == 1.0)
    assert torch.all(a["block0.ln1.b"] == 0.0)


def test_timestep_features_sinusoid_oracle():
    dim = 8
    t = torch.tensor([0.25])
    feats = timestep_features(t, dim).numpy()[0]
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = 0.25 * freqs * 1000.0
    want = np.concatenate([np.cos(args), np.sin(args)])
    assert np.abs(feats - want).max() < 1e-6
    # distinct timesteps map to distinct features
    f2 = timestep_features(torch.tensor([0.75]), dim).numpy()[0]
    assert np.abs(feats - f2).max() > 0.1


def test_forward_shapes_and_determinism(tiny_model):
    cfg, params = tiny_model
    core = cfg.core()
    t, h, w = cfg.grid
    L = t * h * w
    rng = np.random.default_rng(0)
    tokens = torch.from_numpy(rng.standard_normal((2, L, core.in_channels)).astype(np.float32))
    idx = grid_indices(t, h, w)
    out1 = forward_tokens(params, core, tokens, torch.tensor([0.3, 0.7]),
                          torch.tensor([1, 2]), idx)
    out2 = forward_tokens(params, core, tokens, torch.tensor([0.3, 0.7]),
                          torch.tensor([1, 2]), idx)
    assert out1.shape == (2, L, core.out_channels)
    assert torch.equal(out1, out2)


def test_forward_out_len_slices_prefix(tiny_model):
    cfg, params = tiny_model
    core = cfg.core()
    t, h, w = cfg.grid
    L = t * h * w
    rng = np.random.default_rng(1)
    tokens = torch.from_numpy(rng.standard_normal((1, L, core.in_channels)).astype(np.float32))
    idx = grid_indices(t, h, w)
    full = forward_tokens(params, core, tokens, torch.tensor([0.5]), torch.tensor([0]), idx)
    part = forward_tokens(params, core, tokens, torch.tensor([0.5]), torch.tensor([0]), idx,
                          out_len=5)
    assert part.shape == (1, 5, core.out_channels)
    assert torch.allclose(part, full[:, :5])


def test_prompt_embedding_changes_output(tiny_model):
    cfg, params = tiny_model
    core = cfg.core()
    t, h, w = cfg.grid
    rng = np.random.default_rng(2)
    tokens = torch.from_numpy(
        rng.standard_normal((1, t * h * w, core.in_channels)).astype(np.float32))
    idx = grid_indices(t, h, w)
    o1 = forward_tokens(params, core, tokens, torch.tensor([0.5]), torch.tensor([0]), idx)
    o2 = forward_tokens(params, core, tokens, torch.tensor([0.5]), torch.tensor([3]), idx)
    assert (o1 - o2).abs().max() > 1e-6


def test_save_load_roundtrip(tmp_path, tiny_model):
    cfg, params = tiny_model
    path = tmp_path / "m.dmt1"
    save_params(path, params, {"kind": "test"})
    loaded, meta = load_params(path)
    assert meta["kind"] == "test"
    assert set(loaded) == set(params)
    for k in params:
        assert torch.equal(loaded[k], params[k])


def test_clone_params_detaches(tiny_model):
    _, params = tiny_model
    cl = clone_params(params)
    k = next(iter(cl))
    cl[k] += 1.0
    assert not torch.equal(cl[k], params[k])


def test_config_validation():
    with pytest.raises(ConfigError):
        small_cfg(dim=30)           # not divisible by heads * even split
    with pytest.raises(ConfigError):
        small_cfg(rope_sub_dims=(4, 4, 4))  # wrong sum
