"""Preference optimization over the flow-matching denoiser.

Exact sequence likelihoods are intractable for this model class, so the
pairwise objective uses the standard reduction: the log-ratio of policy
to reference likelihood is replaced by the difference of their flow
losses on a shared (t, noise) draw. At policy == reference the loss is
exactly ln 2 for every pair, which anchors the implementation tests.

Pair construction comes in two flavors: generate-and-score groups ranked
by a cut-severity discriminator (worst adjacent-frame jump), and planted
corpus pairs where a smooth trajectory and a teleporting twin share the
same endpoints and prompt.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .conditioning import ConditionLayout, Timeline, build_layout, endpoints_timeline
from .dit import DiTConfig, FlowBatch, Optimizer, TrainConfig, flow_loss_per_sample, generate, make_batch
from .errors import ConfigError, NonFiniteError
from .geometry import TemporalCompression
from .model import clone_params
from .seeds import rng_for
from .vae import LatentVideo, encode

PIPELINE_CUTS = "abrupt_cuts"
PIPELINE_MOTION = "subject_motion"


@dataclass
class PreferencePair:
    timeline: Timeline
    layout: ConditionLayout
    winner: np.ndarray
    loser: np.ndarray
    pipeline: str
    scores: tuple[float, float]

    def __post_init__(self):
        self.winner = np.asarray(self.winner, dtype=np.float32)
        self.loser = np.asarray(self.loser, dtype=np.float32)
        if self.winner.shape != self.loser.shape:
            raise ConfigError("winner and loser must share one grid")
        if not self.scores[0] < self.scores[1]:
            raise ConfigError(f"winner score {self.scores[0]} must beat loser score {self.scores[1]}")


@dataclass
class DpoConfig:
    policy: dict[str, torch.Tensor]
    reference: dict[str, torch.Tensor]
    model: DiTConfig
    beta: float = 0.1
    shared_noise: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        self.reference = clone_params(self.reference)


def cut_severity(latent) -> float:
    """Worst adjacent-latent-frame mean squared jump."""
    data = latent.data if isinstance(latent, LatentVideo) else np.asarray(latent)
    if data.shape[0] < 2:
        raise ConfigError("cut severity needs at least 2 latent frames")
    d = np.asarray(data, dtype=np.float64)
    return float(((d[1:] - d[:-1]) ** 2).mean(axis=tuple(range(1, d.ndim))).max())


def build_pairs_pipeline_a(params: dict[str, torch.Tensor], cfg: DiTConfig,
                           timelines: list[Timeline], group: int, seed: int
                           ) -> tuple[list[PreferencePair], list[dict]]:
    """Generate a seed group per timeline and pair best against worst.

    Ranking is by cut severity (lower wins). A timeline whose group is
    score-degenerate (min == max) is skipped with a logged reason.
    """
    if group < 2:
        raise ConfigError(f"group size must be >= 2, got {group}")
    pairs, skipped = [], []
    for pi, tl in enumerate(timelines):
        tc = TemporalCompression(stride=cfg.stride, pixel_len=tl.total_frames)
        layout = build_layout(tl, tc, cfg.patch, rng_for(seed, "pairs-a", pi, "layout"))
        gen_seeds = rng_for(seed, "pairs-a", pi, "seeds").integers(0, 2**62, size=group)
        latents = [generate(params, cfg, layout, tl.prompt_id, int(s), tc=tc) for s in gen_seeds]
        scores = [cut_severity(z) for z in latents]
        lo, hi = int(np.argmin(scores)), int(np.argmax(scores))
        if scores[lo] == scores[hi]:
            skipped.append({"timeline": pi, "reason": "degenerate scores", "score": scores[lo]})
            continue
        pairs.append(PreferencePair(
            timeline=tl, layout=layout,
            winner=latents[lo].data, loser=latents[hi].data,
            pipeline=PIPELINE_CUTS, scores=(scores[lo], scores[hi])))
    return pairs, skipped


def max_step_displacement(centroids) -> float:
    c = np.asarray(centroids, dtype=np.float64)
    if c.shape[0] < 2:
        raise ConfigError("need at least 2 centroids")
    return float(np.linalg.norm(c[1:] - c[:-1], axis=1).max())


def build_pairs_pipeline_b(entries: list[dict], stride: int, patch: int) -> list[PreferencePair]:
    """Planted pairs: smooth winner vs teleporting loser of the same scene.

    Both variants share endpoints, so they also share the first/last
    conditioning timeline. Scenes missing either variant are skipped.
    Pure function of the corpus: no sampling anywhere.
    """
    by_scene: dict[int, dict[str, dict]] = {}
    for e in entries:
        by_scene.setdefault(e["annotations"]["scene_id"], {})[e["annotations"]["variant"]] = e
    pairs = []
    for scene_id in sorted(by_scene):
        variants = by_scene[scene_id]
        if "smooth" not in variants or "teleport" not in variants:
            continue
        win, lose = variants["smooth"], variants["teleport"]
        w_score = max_step_displacement(win["annotations"]["centroids"])
        l_score = max_step_displacement(lose["annotations"]["centroids"])
        tc = TemporalCompression(stride=stride, pixel_len=win["video"].pixel_len)
        tl = endpoints_timeline(win["video"], tc, win["annotations"]["prompt_id"])
        layout = build_layout(tl, tc, patch, rng_for(0, "pairs-b", scene_id))
        pairs.append(PreferencePair(
            timeline=tl, layout=layout,
            winner=encode(win["video"], stride=stride, patch=patch).mean.data,
            loser=encode(lose["video"], stride=stride, patch=patch).mean.data,
            pipeline=PIPELINE_MOTION, scores=(w_score, l_score)))
    return pairs


def _pair_batch(pairs: list[PreferencePair], pick, t_draws, eps_draws) -> tuple[FlowBatch, FlowBatch]:
    win, lose = [], []
    for j, i in enumerate(pick):
        p = pairs[int(i)]
        t, eps = t_draws[j], eps_draws[j]
        win.append((p.winner, eps, t, p.layout, p.timeline.prompt_id))
        lose.append((p.loser, eps, t, p.layout, p.timeline.prompt_id))
    return make_batch(win), make_batch(lose)


def dpo_loss(cfg: DpoConfig, pair: PreferencePair, t: float, eps: np.ndarray) -> torch.Tensor:
    """Pairwise logistic loss on the flow-loss margin for one pair.

    inner = -beta * [(L_theta(v_w) - L_ref(v_w)) - (L_theta(v_l) - L_ref(v_l))]
    loss  = -log sigmoid(inner), evaluated on a shared (t, eps) draw.
    """
    wb, lb = _pair_batch([pair], [0], [float(t)], [np.asarray(eps)])
    return _dpo_loss_batches(cfg, wb, lb).mean()


def _dpo_loss_batches(cfg: DpoConfig, win: FlowBatch, lose: FlowBatch) -> torch.Tensor:
    l_theta_w = flow_loss_per_sample(cfg.policy, cfg.model, win)
    l_theta_l = flow_loss_per_sample(cfg.policy, cfg.model, lose)
    with torch.no_grad():
        l_ref_w = flow_loss_per_sample(cfg.reference, cfg.model, win)
        l_ref_l = flow_loss_per_sample(cfg.reference, cfg.model, lose)
    # margin head in f64: at theta == ref the margin is exactly zero and the
    # loss must hit ln 2 to full double precision
    inner = -cfg.beta * ((l_theta_w.double() - l_ref_w.double())
                         - (l_theta_l.double() - l_ref_l.double()))
    if not torch.isfinite(inner).all():
        raise NonFiniteError("non-finite preference margin")
    return torch.nn.functional.softplus(-inner)


def dpo_grad(cfg: DpoConfig, pair: PreferencePair, t: float, eps: np.ndarray
             ) -> tuple[float, dict[str, torch.Tensor]]:
    """Exact gradient of dpo_loss w.r.t. the policy parameters."""
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in cfg.policy.items()}
    probe = DpoConfig(policy=leaves, reference=cfg.reference, model=cfg.model,
                      beta=cfg.beta, shared_noise=cfg.shared_noise)
    loss = dpo_loss(probe, pair, t, eps)
    loss.backward()
    grads = {k: (v.grad.detach().clone() if v.grad is not None else torch.zeros_like(v))
             for k, v in leaves.items()}
    return float(loss.detach()), grads


def dpo_train(cfg: DpoConfig, pairs: list[PreferencePair], steps: int, seed: int,
              tcfg: TrainConfig | None = None) -> tuple[dict[str, torch.Tensor], list[float]]:
    """Minibatch gradient descent on the pairwise loss; the reference
    weights never move. Deterministic given seed."""
    if not pairs:
        raise ConfigError("no preference pairs to train on")
    tcfg = tcfg or TrainConfig(steps=steps, batch_size=2, lr=1e-4, optimizer="adam")
    policy = clone_params(cfg.policy)
    opt = Optimizer(tcfg, policy)
    grid = pairs[0].winner.shape
    history = []
    for step in range(steps):
        rng = rng_for(seed, "dpo", step)
        pick = rng.integers(0, len(pairs), size=tcfg.batch_size)
        if cfg.shared_noise:
            t_draws = [float(rng.random()) for _ in pick]
            eps_draws = [rng.standard_normal(grid) for _ in pick]
            win, lose = _pair_batch(pairs, pick, t_draws, eps_draws)
        else:
            t_w = [float(rng.random()) for _ in pick]
            e_w = [rng.standard_normal(grid) for _ in pick]
            t_l = [float(rng.random()) for _ in pick]
            e_l = [rng.standard_normal(grid) for _ in pick]
            win, _ = _pair_batch(pairs, pick, t_w, e_w)
            _, lose = _pair_batch(pairs, pick, t_l, e_l)

        leaves = {k: v.detach().clone().requires_grad_(True) for k, v in policy.items()}
        probe = DpoConfig(policy=leaves, reference=cfg.reference, model=cfg.model,
                          beta=cfg.beta, shared_noise=cfg.shared_noise)
        loss = _dpo_loss_batches(probe, win, lose).mean()
        fl = float(loss.detach())
        if not np.isfinite(fl):
            raise NonFiniteError("preference training loss became non-finite", step=step)
        loss.backward()
        grads = {k: (v.grad.detach().clone() if v.grad is not None else torch.zeros_like(v))
                 for k, v in leaves.items()}
        policy = opt.step(policy, grads)
        history.append(fl)
    return policy, history


def margin(cfg: DpoConfig, pairs: list[PreferencePair], seed: int = 0) -> float:
    """Mean preference margin (reference-relative winner advantage)."""
    grid = pairs[0].winner.shape
    total = 0.0
    with torch.no_grad():
        for i, p in enumerate(pairs):
            rng = rng_for(seed, "margin", i)
            t, eps = float(rng.random()), rng.standard_normal(grid)
            wb, lb = _pair_batch([p], [0], [t], [eps])
            ltw = float(flow_loss_per_sample(cfg.policy, cfg.model, wb))
            ltl = float(flow_loss_per_sample(cfg.policy, cfg.model, lb))
            lrw = float(flow_loss_per_sample(cfg.reference, cfg.model, wb))
            lrl = float(flow_loss_per_sample(cfg.reference, cfg.model, lb))
            total += (lrw - ltw) - (lrl - ltl)
    return total / len(pairs)
