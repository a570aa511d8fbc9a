"""Shared domain types, invariants, and typed errors.

Every other module imports from here. Conventions used throughout the
package:

- persisted values (weights, pixels, features, logits) are float32,
- arithmetic accumulates in float64 inside the kernels,
- token/action indices are int64,
- value types are frozen dataclasses validated on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

DTYPE = np.float32
PAD_ID = 0


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class PdfError(Exception):
    """Base class for all package errors."""


class ConfigError(PdfError):
    """Invalid configuration value or file."""


class ShapeMismatchError(PdfError):
    """An array does not match the declared architecture shape."""


class InvariantError(PdfError):
    """A domain-type invariant was violated on construction."""


class MalformedHeaderError(PdfError):
    """Weight file header cannot be parsed."""


class DimensionMismatchError(PdfError):
    """Weight file tensor dims disagree with the data or architecture."""


class EmptyInputError(PdfError):
    """An operation requiring a nonempty sequence received an empty one."""


class EmptyBufferError(PdfError):
    """Adaptation was requested on an empty rollout buffer."""


class NumericError(PdfError):
    """A non-finite value appeared; the message names the offending term."""


class EpisodeDoneError(PdfError):
    """step() was called after the episode finished."""


class FeedbackNotReadyError(PdfError):
    """Feedback was requested before the episode finished."""


class UnsupportedShiftError(PdfError):
    """The scripted expert only supports canonical (unshifted) layouts."""


class TrainingError(PdfError):
    """Behavior-cloning training failed to meet its contract."""


class DivergenceError(TrainingError):
    """Training loss became non-finite; message carries the epoch index."""


# ---------------------------------------------------------------------------
# Architecture header
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchHeader:
    """Fixed dimensions shared by the frozen policy and the perturbation head.

    (h, w, c) is the pixel observation shape, (vocab, instr_len, embed_dim)
    the instruction interface, feature_dim the encoder output width, and
    (action_dims, action_tokens) the tokenized action layout: action_dims
    independent dimensions with action_tokens choices each.
    """

    h: int
    w: int
    c: int
    vocab: int
    instr_len: int
    embed_dim: int
    feature_dim: int
    action_dims: int
    action_tokens: int

    def __post_init__(self) -> None:
        for name, v in self.__dict__.items():
            if int(v) < 1:
                raise InvariantError(f"ArchHeader.{name} must be >= 1, got {v}")

    @property
    def input_dim(self) -> int:
        return self.h * self.w * self.c + self.instr_len * self.embed_dim

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.h, self.w, self.c, self.vocab, self.instr_len,
             self.embed_dim, self.feature_dim, self.action_dims,
             self.action_tokens],
            dtype=DTYPE,
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ArchHeader":
        if arr.ndim != 1 or arr.shape[0] != 9:
            raise MalformedHeaderError(
                f"architecture meta tensor must have 9 entries, got shape {arr.shape}"
            )
        vals = [int(round(float(v))) for v in arr]
        return cls(*vals)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    """Pixel grid of shape (h, w, c) with every value finite and in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 3:
            raise InvariantError(f"observation must be rank 3, got shape {p.shape}")
        if p.dtype != DTYPE:
            object.__setattr__(self, "pixels", p.astype(DTYPE))
            p = self.pixels
        # A single range pass also rejects NaN and +-inf.
        if not bool(((p >= 0.0) & (p <= 1.0)).all()):
            raise InvariantError("observation values must be finite and in [0, 1]")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class Instruction:
    """Token id sequence of fixed length; pad ids form a suffix only."""

    tokens: np.ndarray
    vocab: int

    def __post_init__(self) -> None:
        t = np.asarray(self.tokens, dtype=np.int64)
        object.__setattr__(self, "tokens", t)
        if t.ndim != 1:
            raise InvariantError("instruction tokens must be a 1-d sequence")
        if t.size == 0:
            raise InvariantError("instruction must have at least one token")
        if bool((t < 0).any()) or bool((t >= self.vocab).any()):
            raise InvariantError(f"instruction token ids must lie in [0, {self.vocab})")
        pad_positions = np.flatnonzero(t == PAD_ID)
        if pad_positions.size and not bool((t[pad_positions[0]:] == PAD_ID).all()):
            raise InvariantError("pad ids may only appear as a suffix")


@dataclass(frozen=True)
class Action:
    """Length-`dims` vector of token indices, each in [0, tokens)."""

    dims: np.ndarray
    tokens: int

    def __post_init__(self) -> None:
        d = np.asarray(self.dims, dtype=np.int64)
        object.__setattr__(self, "dims", d)
        if d.ndim != 1 or d.size == 0:
            raise InvariantError("action must be a nonempty 1-d token vector")
        if bool((d < 0).any()) or bool((d >= self.tokens).any()):
            raise InvariantError(f"action tokens must lie in [0, {self.tokens})")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Action):
            return NotImplemented
        return self.tokens == other.tokens and bool(np.array_equal(self.dims, other.dims))

    def __hash__(self) -> int:
        return hash((self.tokens, self.dims.tobytes()))


@dataclass(frozen=True)
class LogitsMatrix:
    """Per-dimension token scores: row d scores the tokens of dimension d."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2:
            raise InvariantError(f"logits must be rank 2, got shape {v.shape}")
        if v.dtype != DTYPE:
            object.__setattr__(self, "values", v.astype(DTYPE))
            v = self.values
        if not bool(np.isfinite(v).all()):
            raise InvariantError("logits must be finite")

    @property
    def action_dims(self) -> int:
        return self.values.shape[0]

    @property
    def action_tokens(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Feature:
    """Encoder output vector; finite, fixed length."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 1:
            raise InvariantError("feature must be a 1-d vector")
        if v.dtype != DTYPE:
            object.__setattr__(self, "values", v.astype(DTYPE))
            v = self.values
        if not bool(np.isfinite(v).all()):
            raise InvariantError("feature values must be finite")


@dataclass(frozen=True)
class Feedback:
    """Delayed episodic feedback: success flag or cumulative reward."""

    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise InvariantError("feedback must be finite")


@dataclass(frozen=True)
class RolloutRecord:
    """One (timestep, view) entry awaiting delayed feedback.

    view_index 0 is the original, unaugmented view; executed_action is the
    voted action actually sent to the environment, identical across all
    records of one timestep.
    """

    feature: Feature
    final_logits: LogitsMatrix
    executed_action: Action
    timestep: int
    view_index: int

    def __post_init__(self) -> None:
        if self.timestep < 0 or self.view_index < 0:
            raise InvariantError("timestep and view_index must be >= 0")


# ---------------------------------------------------------------------------
# Hyperparameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineSpec:
    """Feedback baseline: a fixed constant, or a windowed running mean."""

    kind: str = "running_mean"
    value: float = 0.0      # fixed mode only
    window: int = 10        # running_mean mode only
    prior: float = 0.0      # running_mean value before any feedback

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "running_mean"):
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "running_mean" and self.window < 1:
            raise ConfigError("running_mean window must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "BaselineSpec":
        """Parse CLI syntax 'fixed:<value>' or 'mean:<window>'."""
        kind, _, arg = text.partition(":")
        if kind == "fixed":
            return cls(kind="fixed", value=float(arg))
        if kind == "mean":
            return cls(kind="running_mean", window=int(arg))
        raise ConfigError(f"baseline must be 'fixed:<v>' or 'mean:<w>', got {text!r}")


@dataclass(frozen=True)
class HyperParams:
    """Adaptation knobs.

    perturb_scale scales the perturbation head's additive logit output,
    kl_weight the success-gated KL regularizer. n_max caps the augmentation
    budget; rounding sets how the fractional budget becomes an integer.
    """

    perturb_scale: float = 1.0
    kl_weight: float = 0.3
    n_max: int = 3
    learning_rate: float = 1e-2
    baseline: BaselineSpec = field(default_factory=BaselineSpec)
    rounding: str = "floor"
    batch_size: int = 32
    grad_steps_per_episode: int = 4

    def __post_init__(self) -> None:
        if self.perturb_scale < 0:
            raise ConfigError("perturb_scale must be >= 0")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be >= 0")
        if self.n_max < 0:
            raise ConfigError("n_max must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.rounding not in ("floor", "round"):
            raise ConfigError("rounding must be 'floor' or 'round'")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.grad_steps_per_episode < 1:
            raise ConfigError("grad_steps_per_episode must be >= 1")
