"""Verifier-free test-time adaptation for frozen tokenized policies.

A frozen behavior-cloned policy is adapted at deployment without touching
its weights: uncertainty decides how many augmented views each step gets,
candidate actions from all views are majority-voted, and a small
perturbation head on top of the frozen logits learns from delayed
episodic feedback alone.
"""

from .types import (
    Action,
    ArchHeader,
    BaselineSpec,
    ConfigError,
    Feature,
    Feedback,
    HyperParams,
    Instruction,
    LogitsMatrix,
    NumericError,
    Observation,
    PdfError,
    RolloutRecord,
)
from .adapt import AdaptStats, BaselineTracker, RolloutBuffer, adapt, baseline_value, pdf_loss
from .augment import AugmentRanges, AugmentSpec, apply_augment, budget, generate_views, uncertainty
from .env import EnvConfig, EpisodeResult, GridPickPlace, ObjectSpec, ShiftSpec, scripted_expert
from .perturb import PerturbationHead, decode_candidates, perturbed_logits, vote
from .policy import Demonstration, PolicySnapshot, encode, greedy_action, lm_logits, train_bc
from .runner import (
    EnvTemplate,
    ExperimentConfig,
    MetricsRow,
    ModelConfig,
    budget_sweep,
    compare_voting,
    emit_metrics,
    read_metrics,
    run_variant,
    train_bc_for,
)
from .weights_io import load_any, read_tensors, write_tensors

__version__ = "0.1.0"

__all__ = [
    "Action", "ArchHeader", "BaselineSpec", "ConfigError", "Feature",
    "Feedback", "HyperParams", "Instruction", "LogitsMatrix", "NumericError",
    "Observation", "PdfError", "RolloutRecord",
    "AdaptStats", "BaselineTracker", "RolloutBuffer", "adapt",
    "baseline_value", "pdf_loss",
    "AugmentRanges", "AugmentSpec", "apply_augment", "budget",
    "generate_views", "uncertainty",
    "EnvConfig", "EpisodeResult", "GridPickPlace", "ObjectSpec", "ShiftSpec",
    "scripted_expert",
    "PerturbationHead", "decode_candidates", "perturbed_logits", "vote",
    "Demonstration", "PolicySnapshot", "encode", "greedy_action", "lm_logits",
    "train_bc",
    "EnvTemplate", "ExperimentConfig", "MetricsRow", "ModelConfig",
    "budget_sweep", "compare_voting", "emit_metrics", "read_metrics",
    "run_variant", "train_bc_for",
    "load_any", "read_tensors", "write_tensors",
    "__version__",
]
