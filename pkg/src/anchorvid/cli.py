"""Command-line surface: corpus, training, preference stages, generation,
super-resolution, evaluation, and the staged end-to-end pipeline.

File formats kept deliberately plain: the multi-tensor binary container
for latents/checkpoints/videos, JSON for timelines, configs, plans, and
reports, numbered P6 PPM files for exported frames. Every command is
deterministic given (config, seed) and re-runs reproduce outputs byte
for byte.

Exit codes: 0 success; 2 timeline schema violation (the offending field
path is printed); 3 condition layout conflict; 4 non-finite values
during training or sampling.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import corpus as corpus_mod
from . import dpo as dpo_mod
from . import evalkit
from . import sar as sar_mod
from . import sr as sr_mod
from .conditioning import (
    ConditionLayout,
    ConditionSpec,
    Timeline,
    build_layout,
    endpoints_timeline,
    snap_timeline,
)
from .dit import DiTConfig, TrainConfig, eval_loss, generate, init_dit_params, train
from .errors import ConfigError, LayoutConflictError, NonFiniteError, SchemaError
from .geometry import TemporalCompression
from .model import load_params, save_params
from .seeds import rng_for
from .tensorfile import read_tensors, write_ppm_sequence, write_tensors
from .vae import LatentVideo, PixelVideo, decode, encode

OUT_ROOT_ENV = "ANCHORVID_OUT"


def out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "."))


# ---------------------------------------------------------------- timelines

def _expect(doc: dict, path: str, key: str, types, required=True):
    where = f"{path}.{key}" if path else key
    if key not in doc:
        if required:
            raise SchemaError(where, "missing required field")
        return None
    val = doc[key]
    if not isinstance(val, types) or isinstance(val, bool):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise SchemaError(where, f"expected {names}, got {type(val).__name__}")
    return val


def load_timeline(path, notices: list[str] | None = None) -> Timeline:
    """Parse and validate a timeline JSON file.

    Schema: {"total_frames": int, "prompt_id": int, "conditions":
    [{"kind": "image"|"clip", "anchor_frame": int, "payload": path}]}.
    Payload paths resolve relative to the timeline file and point at
    containers holding a "frames" tensor. Anchors are snapped on load;
    each move appends a notice line.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError("", f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError("", "timeline document must be a JSON object")
    total = _expect(doc, "", "total_frames", int)
    prompt = _expect(doc, "", "prompt_id", int)
    conds_doc = _expect(doc, "", "conditions", list, required=False) or []
    conds = []
    for i, c in enumerate(conds_doc):
        where = f"conditions[{i}]"
        if not isinstance(c, dict):
            raise SchemaError(where, "condition must be a JSON object")
        kind = _expect(c, where, "kind", str)
        if kind not in ("image", "clip"):
            raise SchemaError(f"{where}.kind", f"must be 'image' or 'clip', got {kind!r}")
        anchor = _expect(c, where, "anchor_frame", int)
        if not 0 <= anchor < total:
            raise SchemaError(f"{where}.anchor_frame", f"must be in [0, {total}), got {anchor}")
        payload_path = _expect(c, where, "payload", str)
        full = path.parent / payload_path
        if not full.exists():
            raise SchemaError(f"{where}.payload", f"file not found: {payload_path}")
        tensors, _ = read_tensors(full)
        if "frames" not in tensors:
            raise SchemaError(f"{where}.payload", "container has no 'frames' tensor")
        frames = tensors["frames"]
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise SchemaError(f"{where}.payload", f"frames must be [T, H, W, 3], got {list(frames.shape)}")
        if kind == "image" and frames.shape[0] != 1:
            raise SchemaError(f"{where}.payload", f"image payload must have T=1, got {frames.shape[0]}")
        if anchor + frames.shape[0] > total:
            raise SchemaError(f"{where}.anchor_frame",
                              f"condition span [{anchor}, {anchor + frames.shape[0]}) exceeds total_frames")
        conds.append(ConditionSpec(kind=kind, anchor_frame=anchor, payload=frames))
    tl = Timeline(total_frames=total, prompt_id=prompt, conditions=conds)
    return tl


def save_timeline(path, tl: Timeline, payload_dir: str = "payloads"):
    """Write a timeline plus its payload containers next to it."""
    path = Path(path)
    pdir = path.parent / payload_dir
    pdir.mkdir(parents=True, exist_ok=True)
    conds = []
    for i, c in enumerate(tl.conditions):
        rel = f"{payload_dir}/{path.stem}_c{i:02d}.dmt1"
        write_tensors(path.parent / rel, {"frames": np.asarray(c.payload, dtype=np.float32)})
        conds.append({"kind": c.kind, "anchor_frame": int(c.anchor_frame), "payload": rel})
    doc = {"total_frames": int(tl.total_frames), "prompt_id": int(tl.prompt_id), "conditions": conds}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- config

DEFAULT_CONFIG = {
    "seed": 0,
    "model": DiTConfig().to_dict(),
    "train": TrainConfig().to_dict(),
    "sft": {"steps": 400},
    "corpus": {"count": 200, "t": 14, "h": 32, "w": 32},
    "filter": corpus_mod.FilterThresholds().to_dict(),
    "dpo": {"beta": 0.1, "group": 4, "prompts": 60, "steps": 300,
            "lr": 1e-4, "batch_size": 2, "pipeline": "both"},
    "sr": sr_mod.SrConfig().to_dict(),
    "sr_train": {"steps": 600, "batch_size": 2, "lr": 2e-3, "optimizer": "adam"},
    "sar": {"l_max": 5, "tail_k": 2, "fusion": "crossfade"},
    "eval": {"n_gen": 20},
}


def load_config(path=None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path:
        user = json.loads(Path(path).read_text())
        for key, val in user.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(val)
            else:
                cfg[key] = val
    return cfg


def _model_cfg(cfg: dict) -> DiTConfig:
    return DiTConfig.from_dict(cfg["model"])


def _stage_seed(cfg: dict, args) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


# ---------------------------------------------------------------- corpus io

def write_corpus(out_dir: Path, entries: list[dict], params: dict):
    vdir = out_dir / "videos"
    vdir.mkdir(parents=True, exist_ok=True)
    manifest = {"params": params, "entries": []}
    for i, e in enumerate(entries):
        rel = f"videos/v{i:05d}.dmt1"
        write_tensors(out_dir / rel, {"frames": e["video"].frames})
        spec_doc = dataclasses.asdict(e["spec"])
        manifest["entries"].append({"index": i, "path": rel,
                                    "annotations": e["annotations"], "spec": spec_doc})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_corpus(corpus_dir) -> list[dict]:
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    entries = []
    for e in manifest["entries"]:
        tensors, _ = read_tensors(corpus_dir / e["path"])
        entries.append({"video": PixelVideo(frames=tensors["frames"]),
                        "annotations": e["annotations"], "index": e["index"]})
    return entries


def kept_entries(entries: list[dict], filtered_path, tag: str | None = None) -> list[dict]:
    doc = json.loads(Path(filtered_path).read_text())
    keep = set(doc["kept_indices"])
    if tag is not None:
        keep &= {int(i) for i, tags in doc["tags"].items() if tag in tags}
    return [e for e in entries if e["index"] in keep]


def load_checkpoint(path) -> tuple[dict, dict]:
    params, meta = load_params(path)
    return params, meta


# ---------------------------------------------------------------- commands

def cmd_gen_corpus(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    c = cfg["corpus"]
    entries = corpus_mod.gen_corpus(int(c["count"]), seed, t=int(c["t"]),
                                    h=int(c["h"]), w=int(c["w"]), mix=c.get("mix"))
    out = Path(args.out)
    write_corpus(out, entries, {"seed": seed, **{k: c[k] for k in ("count", "t", "h", "w")}})
    print(f"wrote {len(entries)} corpus entries to {out}")
    return 0


def cmd_filter(args) -> int:
    cfg = load_config(args.config)
    thresholds = corpus_mod.FilterThresholds.from_dict(cfg["filter"])
    entries = read_corpus(args.corpus)
    reports = corpus_mod.filter_corpus([e["video"] for e in entries], thresholds)
    kept = [e["index"] for e, r in zip(entries, reports) if r.kept]
    motions = {e["index"]: r.scores["motion_strength"] for e, r in zip(entries, reports) if r.kept}
    median = float(np.median(list(motions.values()))) if motions else 0.0
    tags = {str(i): (["high_dynamics"] if motions[i] >= median else []) for i in kept}
    doc = {
        "thresholds": thresholds.to_dict(),
        "kept_indices": kept,
        "tags": tags,
        "motion_median": median,
        "reports": [{"index": e["index"], "kept": r.kept, "failing_rule": r.failing_rule,
                     "scores": r.scores} for e, r in zip(entries, reports)],
    }
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"kept {len(kept)}/{len(entries)} entries")
    return 0


def _load_dataset(args, cfg, tag=None) -> list[dict]:
    entries = read_corpus(args.corpus)
    if getattr(args, "filtered", None):
        entries = kept_entries(entries, args.filtered, tag=tag)
    model = _model_cfg(cfg)
    return corpus_mod.prepare_dataset(entries, model.stride, model.patch)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    model = _model_cfg(cfg)
    tcfg = TrainConfig.from_dict(cfg["train"])
    dataset = _load_dataset(args, cfg)
    if args.init:
        params, _ = load_checkpoint(args.init)
    else:
        params = init_dit_params(model, seed)
    params, history = train(params, model, dataset, tcfg, seed)
    save_params(args.out, params, {"kind": "dit", "config": model.to_dict(),
                                   "train": tcfg.to_dict(), "seed": seed})
    curve_path = Path(args.out).with_suffix(".loss.json")
    curve_path.write_text(json.dumps({"loss": history}, sort_keys=True) + "\n")
    print(f"trained {tcfg.steps} steps; final loss {history[-1]:.4f}" if history
          else "trained 0 steps")
    return 0


def cmd_sft(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    model = _model_cfg(cfg)
    base = TrainConfig.from_dict(cfg["train"]).to_dict()
    base.update(cfg.get("sft", {}))
    tcfg = TrainConfig.from_dict(base)
    dataset = _load_dataset(args, cfg, tag="high_dynamics")
    if not dataset:
        raise ConfigError("no high-dynamics entries available for the tuning pass")
    params, _ = load_checkpoint(args.init)
    params, history = train(params, model, dataset, tcfg, seed + 1)
    save_params(args.out, params, {"kind": "dit", "config": model.to_dict(),
                                   "train": tcfg.to_dict(), "seed": seed})
    print(f"tuning pass done; final loss {history[-1]:.4f}" if history else "tuning pass: 0 steps")
    return 0


def _pair_file_tensors(p: dpo_mod.PreferencePair) -> dict[str, np.ndarray]:
    return {"winner": p.winner, "loser": p.loser,
            "cond": p.layout.cond, "mask": p.layout.mask}


def cmd_dpo_pairs(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    model = _model_cfg(cfg)
    dcfg = cfg["dpo"]
    entries = read_corpus(args.corpus)
    params, _ = load_checkpoint(args.ckpt)
    pairs: list[dpo_mod.PreferencePair] = []
    skipped = []
    which = args.pipeline or dcfg.get("pipeline", "both")
    if which in ("a", "both"):
        smooth = [e for e in entries if e["annotations"]["variant"] == "smooth"]
        n = int(args.count or dcfg.get("prompts", 60))
        timelines = []
        for e in smooth[:n]:
            tc = TemporalCompression(stride=model.stride, pixel_len=e["video"].pixel_len)
            timelines.append(endpoints_timeline(e["video"], tc, e["annotations"]["prompt_id"]))
        got, skip = dpo_mod.build_pairs_pipeline_a(
            params, model, timelines, int(args.group or dcfg.get("group", 4)), seed)
        pairs.extend(got)
        skipped.extend(skip)
    if which in ("b", "both"):
        pairs.extend(dpo_mod.build_pairs_pipeline_b(entries, model.stride, model.patch))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, p in enumerate(pairs):
        rel = f"pair_{i:05d}.dmt1"
        write_tensors(out / rel, _pair_file_tensors(p),
                      {"prompt_id": p.timeline.prompt_id, "pipeline": p.pipeline,
                       "scores": list(p.scores), "total_frames": p.timeline.total_frames})
        lines.append(json.dumps({
            "pair_id": i, "pipeline": p.pipeline, "prompt": p.timeline.prompt_id,
            "winner_path": f"{rel}:winner", "loser_path": f"{rel}:loser",
            "scores": list(p.scores)}, sort_keys=True))
    (out / "pairs.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    (out / "skipped.json").write_text(json.dumps(skipped, indent=2, sort_keys=True) + "\n")
    print(f"built {len(pairs)} pairs ({len(skipped)} prompts skipped)")
    return 0


def read_pairs(pairs_dir) -> list[dpo_mod.PreferencePair]:
    pairs_dir = Path(pairs_dir)
    pairs = []
    for line in (pairs_dir / "pairs.jsonl").read_text().splitlines():
        doc = json.loads(line)
        rel = doc["winner_path"].split(":")[0]
        tensors, meta = read_tensors(pairs_dir / rel)
        tl = Timeline(total_frames=int(meta["total_frames"]), prompt_id=int(meta["prompt_id"]))
        layout = ConditionLayout(cond=tensors["cond"], mask=tensors["mask"], rope_anchors=[])
        pairs.append(dpo_mod.PreferencePair(
            timeline=tl, layout=layout, winner=tensors["winner"], loser=tensors["loser"],
            pipeline=meta["pipeline"], scores=tuple(meta["scores"])))
    return pairs


def cmd_dpo_train(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    model = _model_cfg(cfg)
    d = cfg["dpo"]
    params, _ = load_checkpoint(args.ckpt)
    pairs = read_pairs(args.pairs)
    dcfg = dpo_mod.DpoConfig(policy=params, reference=params, model=model,
                             beta=float(d.get("beta", 0.1)))
    tcfg = TrainConfig(steps=int(d.get("steps", 300)), batch_size=int(d.get("batch_size", 2)),
                       lr=float(d.get("lr", 1e-4)), optimizer="adam")
    policy, history = dpo_mod.dpo_train(dcfg, pairs, tcfg.steps, seed, tcfg)
    save_params(args.out, policy, {"kind": "dit", "config": model.to_dict(),
                                   "dpo": {"beta": dcfg.beta, "steps": tcfg.steps}, "seed": seed})
    print(f"preference training done; final loss {history[-1]:.4f}")
    return 0


def cmd_train_sr(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    scfg = sr_mod.SrConfig.from_dict(cfg["sr"])
    tcfg = TrainConfig.from_dict({**TrainConfig().to_dict(), **cfg.get("sr_train", {})})
    entries = read_corpus(args.corpus)
    if getattr(args, "filtered", None):
        entries = kept_entries(entries, args.filtered)
    dataset = sr_mod.prepare_sr_dataset(entries, scfg)
    params = sr_mod.init_sr_params(scfg, seed)
    use_tail = not args.no_tail_tokens
    params, history = sr_mod.sr_train(params, scfg, dataset, tcfg, seed, use_tail_tokens=use_tail)
    save_params(args.out, params, {"kind": "sr", "config": scfg.to_dict(),
                                   "train": tcfg.to_dict(), "tail_tokens": use_tail, "seed": seed})
    print(f"SR training done; final loss {history[-1]:.4f}")
    return 0


def _write_latent(path, z: LatentVideo, extra: dict | None = None):
    meta = {"stride": z.tc.stride, "pixel_len": z.tc.pixel_len, "patch": z.patch}
    meta.update(extra or {})
    write_tensors(path, {"latent": z.data}, meta)


def read_latent(path) -> tuple[LatentVideo, dict]:
    tensors, meta = read_tensors(path)
    tc = TemporalCompression(stride=int(meta["stride"]), pixel_len=int(meta["pixel_len"]))
    return LatentVideo(data=tensors["latent"], tc=tc, patch=int(meta["patch"])), meta


def cmd_sr(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    params, meta = load_checkpoint(args.ckpt)
    scfg = sr_mod.SrConfig.from_dict(meta.get("config", cfg["sr"]))
    use_tail = bool(meta.get("tail_tokens", True)) and not args.no_tail_tokens
    lowres, _ = read_latent(args.latent)
    tl = load_timeline(args.timeline)
    tc = lowres.tc
    tl, notices = snap_timeline(tl, tc)
    for msg in notices:
        print(f"notice: {msg}", file=sys.stderr)
    layout = build_layout(tl, tc, scfg.patch, rng_for(seed, "sr-layout"))
    z = sr_mod.sr_generate(params, scfg, lowres, layout, tl.prompt_id, seed,
                           use_tail_tokens=use_tail)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_latent(out / "latent_hires.dmt1", z)
    video = decode(z)
    write_ppm_sequence(out / "frames", video.frames)
    print(f"SR output in {out}")
    return 0


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    params, meta = load_checkpoint(args.ckpt)
    model = DiTConfig.from_dict(meta.get("config", cfg["model"]))
    sar_cfg = cfg["sar"]
    l_max = int(args.lmax or sar_cfg.get("l_max") or model.grid[0])
    tail_k = int(args.tail_k or sar_cfg.get("tail_k", 2))
    fusion = args.fusion or sar_cfg.get("fusion", "crossfade")

    tl = load_timeline(args.timeline)
    tc = TemporalCompression(stride=model.stride, pixel_len=tl.total_frames)
    tl, notices = snap_timeline(tl, tc)
    for msg in notices:
        print(f"notice: {msg}", file=sys.stderr)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.anchor_latents:
        if tc.latent_len > l_max:
            raise ConfigError("anchor-latents debug mode supports single-window timelines only")
        layout = build_layout(tl, tc, model.patch, rng_for(seed, "layout"))
        z = generate(params, model, layout, tl.prompt_id, seed, tc=tc,
                     steps=args.steps, anchor_latents=True)
        plan = sar_mod.SegmentPlan(segments=[(0, tc.latent_len - 1)], tail_k=tail_k,
                                   l_max=l_max, routing=[list(range(len(tl.conditions)))])
    else:
        z, plan = sar_mod.generate_long(params, model, tl, l_max, tail_k, seed,
                                        fusion=fusion, steps=args.steps)
    _write_latent(out / "latent.dmt1", z, {"seed": seed})
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    video = decode(z)
    write_ppm_sequence(out / "frames", video.frames)
    layout = build_layout(tl, tc, model.patch, rng_for(seed, "layout"))
    (out / "layout.json").write_text(json.dumps(
        {"mask": layout.mask[:, 0].astype(int).tolist(),
         "anchors": [[int(a), k] for a, k in layout.rope_anchors]},
        indent=2, sort_keys=True) + "\n")
    print(f"generated {tc.latent_len} latent frames ({len(plan.segments)} segment(s)) in {out}")
    return 0


def cmd_eval(args) -> int:
    z, _ = read_latent(args.latent)
    metrics: dict[str, list[float]] = {}
    comparisons = {}
    if args.timeline:
        tl = load_timeline(args.timeline)
        tl, _ = snap_timeline(tl, z.tc)
        video = decode(z)
        metrics["condition_psnr"] = evalkit.condition_psnr(video, tl)
    metrics["cut_severity"] = [dpo_mod.cut_severity(z)]
    if args.plan:
        plan = sar_mod.SegmentPlan.from_dict(json.loads(Path(args.plan).read_text()))
        stats = evalkit.join_continuity(z, plan)
        comparisons["join_continuity"] = stats
    report = evalkit.make_report(metrics, config={"latent": str(args.latent)},
                                 comparisons=comparisons or None)
    evalkit.save_report(args.out, report)
    print(f"report written to {args.out}")
    return 0


# ---------------------------------------------------------------- pipeline

def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":"),
                                     default=str).encode()).hexdigest()


def _files_exist(paths) -> bool:
    return all(Path(p).exists() for p in paths)


class _Stage:
    def __init__(self, name, config_slice, outputs, run):
        self.name = name
        self.config_slice = config_slice
        self.outputs = [str(p) for p in outputs]
        self.run = run


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    seed = _stage_seed(cfg, args)
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / "run_manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {"stages": {}}

    corpus_dir = root / "corpus"
    filtered = root / "filtered.json"
    ckpt_base = root / "ckpt_base.dmt1"
    ckpt_sft = root / "ckpt_sft.dmt1"
    pairs_dir = root / "pairs"
    ckpt_dpo = root / "ckpt_dpo.dmt1"
    eval_report = root / "eval_report.json"

    ns = argparse.Namespace

    def run_gen_corpus():
        cmd_gen_corpus(ns(config=args.config, seed=seed, out=corpus_dir))

    def run_filter():
        cmd_filter(ns(config=args.config, corpus=corpus_dir, out=filtered))

    def run_train():
        cmd_train(ns(config=args.config, seed=seed, corpus=corpus_dir,
                     filtered=filtered, init=None, out=ckpt_base))

    def run_sft():
        cmd_sft(ns(config=args.config, seed=seed, corpus=corpus_dir,
                   filtered=filtered, init=ckpt_base, out=ckpt_sft))

    def run_pairs():
        cmd_dpo_pairs(ns(config=args.config, seed=seed, corpus=corpus_dir,
                         ckpt=ckpt_sft, pipeline=None, group=None, count=None,
                         out=pairs_dir))

    def run_dpo():
        cmd_dpo_train(ns(config=args.config, seed=seed, ckpt=ckpt_sft,
                         pairs=pairs_dir, out=ckpt_dpo))

    def run_eval():
        model = _model_cfg(cfg)
        entries = read_corpus(corpus_dir)
        smooth = [e for e in entries if e["annotations"]["variant"] == "smooth"]
        n = int(cfg["eval"].get("n_gen", 20))
        eval_entries = smooth[-n:]
        pre, _ = load_checkpoint(ckpt_sft)
        post, _ = load_checkpoint(ckpt_dpo)
        sev = {"pre": [], "post": []}
        for i, e in enumerate(eval_entries):
            tc = TemporalCompression(stride=model.stride, pixel_len=e["video"].pixel_len)
            tl = endpoints_timeline(e["video"], tc, e["annotations"]["prompt_id"])
            layout = build_layout(tl, tc, model.patch, rng_for(seed, "pipe-eval", i))
            gs = int(rng_for(seed, "pipe-eval", i, "seed").integers(0, 2**62))
            for tag, p in (("pre", pre), ("post", post)):
                z = generate(p, model, layout, tl.prompt_id, gs, tc=tc)
                sev[tag].append(dpo_mod.cut_severity(z))
        report = evalkit.make_report(
            {"cut_severity_pre_dpo": sev["pre"], "cut_severity_post_dpo": sev["post"]},
            config=cfg,
            comparisons={"cut_severity_delta": float(np.mean(sev["post"]) - np.mean(sev["pre"]))})
        evalkit.save_report(eval_report, report)

    stages = [
        _Stage("gen-corpus", {"corpus": cfg["corpus"], "seed": seed}, [corpus_dir / "manifest.json"], run_gen_corpus),
        _Stage("filter", {"filter": cfg["filter"]}, [filtered], run_filter),
        _Stage("train", {"model": cfg["model"], "train": cfg["train"], "seed": seed}, [ckpt_base], run_train),
        _Stage("sft", {"sft": cfg["sft"], "seed": seed}, [ckpt_sft], run_sft),
        _Stage("dpo-pairs", {"dpo": cfg["dpo"], "seed": seed}, [pairs_dir / "pairs.jsonl"], run_pairs),
        _Stage("dpo-train", {"dpo": cfg["dpo"], "seed": seed}, [ckpt_dpo], run_dpo),
        _Stage("eval", {"eval": cfg["eval"], "seed": seed}, [eval_report], run_eval),
    ]

    upstream_hash = ""
    for stage in stages:
        stage_hash = _hash_obj({"config": stage.config_slice, "upstream": upstream_hash})
        recorded = manifest["stages"].get(stage.name)
        if recorded and recorded["hash"] == stage_hash and _files_exist(stage.outputs):
            print(f"stage {stage.name}: up to date")
        else:
            print(f"stage {stage.name}: running")
            try:
                stage.run()
            except Exception:
                print(f"stage {stage.name}: FAILED", file=sys.stderr)
                raise
            manifest["stages"][stage.name] = {"hash": stage_hash, "outputs": stage.outputs}
            manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        upstream_hash = stage_hash
    return 0


# ---------------------------------------------------------------- entry

def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--threads", type=int, default=1, help="torch thread count")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anchorvid",
                                 description="anchored one-shot video generation, desk scale")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="render the synthetic shape corpus")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("filter", help="score and filter corpus entries")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="flow-matching training of the base model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--filtered", default=None)
    p.add_argument("--init", default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sft", help="continued tuning on high-dynamics entries")
    p.add_argument("--corpus", required=True)
    p.add_argument("--filtered", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sft)

    p = sub.add_parser("dpo-pairs", help="build preference pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pipeline", choices=["a", "b", "both"], default=None)
    p.add_argument("--group", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_dpo_pairs)

    p = sub.add_parser("dpo-train", help="preference-train against a frozen reference")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_dpo_train)

    p = sub.add_parser("train-sr", help="train the super-resolution model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--filtered", default=None)
    p.add_argument("--no-tail-tokens", action="store_true",
                   help="ablation: channel concatenation only")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train_sr)

    p = sub.add_parser("sr", help="super-resolve a low-resolution latent")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--latent", required=True)
    p.add_argument("--timeline", required=True)
    p.add_argument("--no-tail-tokens", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("generate", help="generate from a timeline (segmented when long)")
    p.add_argument("--timeline", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lmax", type=int, default=None)
    p.add_argument("--tail-k", type=int, default=None)
    p.add_argument("--fusion", choices=list(sar_mod.FUSION_MODES), default=None)
    p.add_argument("--anchor-latents", action="store_true",
                   help="debug: pin conditioned positions during sampling")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="metric report for a generated latent")
    p.add_argument("--latent", required=True)
    p.add_argument("--timeline", default=None)
    p.add_argument("--plan", default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="staged end-to-end run with resume")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(max(1, int(getattr(args, "threads", 1) or 1)))
    try:
        return args.func(args)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except LayoutConflictError as e:
        print(f"layout conflict: {e}", file=sys.stderr)
        return 3
    except NonFiniteError as e:
        print(f"non-finite failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
