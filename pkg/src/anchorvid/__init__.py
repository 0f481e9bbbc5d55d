"""Anchored one-shot video generation at desk scale.

A self-contained study system: an analytic temporal-compression codec,
a small rectified-flow transformer conditioned on arbitrary frame and
clip anchors, segmented autoregressive rollout for long timelines,
preference tuning from automatic judges, and a tied-position
super-resolution stage. Everything runs on CPU in minutes and every
path is deterministic given a seed.
"""

from .conditioning import (
    ConditionLayout,
    ConditionSpec,
    Timeline,
    build_layout,
    empty_layout,
    endpoints_timeline,
    sample_training_conditions,
    snap_timeline,
)
from .corpus import FilterReport, FilterThresholds, SceneSpec, filter_corpus, gen_corpus
from .dit import DiTConfig, FlowBatch, TrainConfig, flow_loss, generate, grad, init_dit_params, train
from .dpo import DpoConfig, PreferencePair, cut_severity, dpo_grad, dpo_loss, dpo_train
from .errors import ConfigError, LayoutConflictError, NonFiniteError, SchemaError
from .geometry import TemporalCompression, latent_len
from .sar import SegmentPlan, generate_long, plan_segments
from .seeds import rng_for, segment_seed
from .sr import SrConfig, init_sr_params, sr_generate, sr_train
from .vae import LatentPosterior, LatentVideo, PixelVideo, decode, encode, encode_single, sample

__version__ = "0.1.0"

__all__ = [
    "ConditionLayout",
    "ConditionSpec",
    "ConfigError",
    "DiTConfig",
    "DpoConfig",
    "FilterReport",
    "FilterThresholds",
    "FlowBatch",
    "LatentPosterior",
    "LatentVideo",
    "LayoutConflictError",
    "NonFiniteError",
    "PixelVideo",
    "PreferencePair",
    "SceneSpec",
    "SchemaError",
    "SegmentPlan",
    "SrConfig",
    "TemporalCompression",
    "Timeline",
    "TrainConfig",
    "build_layout",
    "cut_severity",
    "decode",
    "dpo_grad",
    "dpo_loss",
    "dpo_train",
    "empty_layout",
    "encode",
    "encode_single",
    "endpoints_timeline",
    "filter_corpus",
    "flow_loss",
    "gen_corpus",
    "generate",
    "generate_long",
    "grad",
    "init_dit_params",
    "init_sr_params",
    "latent_len",
    "plan_segments",
    "rng_for",
    "sample",
    "sample_training_conditions",
    "segment_seed",
    "snap_timeline",
    "sr_generate",
    "sr_train",
    "train",
]
