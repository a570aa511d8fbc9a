"""Perturbation head, logit perturbation, and candidate voting.

The head is the only trainable component at test time: a small two-layer
MLP (tanh hidden, linear out) whose output additively perturbs the frozen
policy's logits. Its final layer starts at zero so a fresh head is an
exact no-op; the first layer is randomly initialized so gradients can
reach it once feedback arrives.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from . import kernels, weights_io
from .types import (
    Action,
    ArchHeader,
    ConfigError,
    DimensionMismatchError,
    EmptyInputError,
    Feature,
    LogitsMatrix,
    ShapeMismatchError,
    DTYPE,
)

VOTE_MODES = ("dim_wise", "action_wise")


@dataclass
class PerturbationHead:
    """Trainable two-layer head mapping features to additive logit offsets.

    Mutable by design: adaptation rewrites the weights in place between
    episodes. feature_dim -> hidden (tanh) -> action_dims * action_tokens
    (linear).
    """

    feature_dim: int
    action_dims: int
    action_tokens: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        out = self.action_dims * self.action_tokens
        hidden = self.w1.shape[1] if self.w1.ndim == 2 else -1
        expected = {
            "w1": (self.feature_dim, hidden),
            "b1": (hidden,),
            "w2": (hidden, out),
            "b2": (out,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.ndim != len(shape) or arr.shape != shape:
                raise DimensionMismatchError(
                    f"head tensor {name} has shape {arr.shape}, expected {shape}"
                )
            if arr.dtype != DTYPE:
                setattr(self, name, arr.astype(DTYPE))

    @classmethod
    def fresh(cls, arch: ArchHeader, *, hidden: int = 32,
              seed: int = 0) -> "PerturbationHead":
        """Zero-output head: random tanh layer, zero final layer.

        The zero final layer makes the head an exact no-op before any
        update, while the random first layer keeps the loss surface
        non-degenerate once updates begin.
        """
        rng = np.random.Generator(np.random.PCG64(seed))
        out = arch.action_dims * arch.action_tokens
        w1 = rng.normal(0.0, 1.0 / np.sqrt(arch.feature_dim),
                        size=(arch.feature_dim, hidden)).astype(DTYPE)
        return cls(
            feature_dim=arch.feature_dim,
            action_dims=arch.action_dims,
            action_tokens=arch.action_tokens,
            w1=w1,
            b1=np.zeros(hidden, dtype=DTYPE),
            w2=np.zeros((hidden, out), dtype=DTYPE),
            b2=np.zeros(out, dtype=DTYPE),
        )

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def is_zero_output(self) -> bool:
        return not (self.w2.any() or self.b2.any())

    def forward(self, feature: Feature) -> np.ndarray:
        """Additive logit offsets, shape (action_dims, action_tokens)."""
        if feature.values.shape[0] != self.feature_dim:
            raise ShapeMismatchError(
                f"feature length {feature.values.shape[0]} != {self.feature_dim}"
            )
        flat = kernels.mlp_tanh_linear(feature.values, self.w1, self.b1,
                                       self.w2, self.b2)
        return flat.reshape(self.action_dims, self.action_tokens)

    def copy(self) -> "PerturbationHead":
        return PerturbationHead(
            self.feature_dim, self.action_dims, self.action_tokens,
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def to_tensors(self) -> Dict[str, np.ndarray]:
        meta = np.array([self.feature_dim, self.hidden_dim, self.action_dims,
                         self.action_tokens], dtype=DTYPE)
        return {
            "head.meta": meta,
            "head.w1": self.w1,
            "head.b1": self.b1,
            "head.w2": self.w2,
            "head.b2": self.b2,
        }

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "PerturbationHead":
        try:
            meta = tensors["head.meta"]
            if meta.shape != (4,):
                raise DimensionMismatchError(
                    f"head.meta must have 4 entries, got shape {meta.shape}")
            f_dim, _, d, k = (int(round(float(v))) for v in meta)
            return cls(feature_dim=f_dim, action_dims=d, action_tokens=k,
                       w1=tensors["head.w1"], b1=tensors["head.b1"],
                       w2=tensors["head.w2"], b2=tensors["head.b2"])
        except KeyError as exc:
            raise DimensionMismatchError(f"head file missing tensor {exc}")

    def save(self, path) -> None:
        weights_io.write_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "PerturbationHead":
        return cls.from_tensors(weights_io.read_tensors(path))

    def checksum(self) -> str:
        return weights_io.checksum_tensors(self.to_tensors())


def perturbed_logits(base: LogitsMatrix, head: PerturbationHead,
                     feature: Feature, scale: float) -> LogitsMatrix:
    """base + scale * head(feature), accumulated in float64.

    A zero-output head returns the base values bit-for-bit.
    """
    if scale < 0:
        raise ConfigError("perturb scale must be >= 0")
    if base.values.shape != (head.action_dims, head.action_tokens):
        raise ShapeMismatchError(
            f"logits shape {base.values.shape} != head output "
            f"{(head.action_dims, head.action_tokens)}")
    offsets = head.forward(feature)
    return LogitsMatrix(kernels.add_scaled(base.values, offsets, scale))


def decode_candidates(logits_seq: Sequence[LogitsMatrix]) -> List[Action]:
    """Greedy action per view, preserving view order (original first)."""
    if not logits_seq:
        raise EmptyInputError("no logits to decode")
    out: List[Action] = []
    for lm in logits_seq:
        dims = kernels.rows_argmax(lm.values)
        out.append(Action(dims=dims, tokens=lm.action_tokens))
    return out


def _vote_action_wise_big(cands: np.ndarray, original: np.ndarray) -> np.ndarray:
    # Tuple space too large for int64 keys; count python tuples instead.
    counts = Counter(tuple(int(v) for v in row) for row in cands)
    best = max(counts.values())
    modes = sorted(key for key, c in counts.items() if c == best)
    orig = tuple(int(v) for v in original)
    pick = orig if orig in counts and counts[orig] == best else modes[0]
    return np.array(pick, dtype=np.int64)


def vote(candidates: Sequence[Action], mode: str) -> Action:
    """Reduce candidate actions to one by majority.

    dim_wise picks the modal token independently per dimension;
    action_wise picks the modal whole tuple. Ties prefer the first
    candidate (the original view) when it is among the modes, otherwise
    the lowest token index (dim_wise) or lexicographically smallest tuple
    (action_wise). With a single action dimension the two modes agree.
    """
    if mode not in VOTE_MODES:
        raise ConfigError(f"vote mode must be one of {VOTE_MODES}, got {mode!r}")
    if not candidates:
        raise EmptyInputError("no candidates to vote over")
    k = candidates[0].tokens
    d = candidates[0].dims.shape[0]
    for a in candidates:
        if a.tokens != k or a.dims.shape[0] != d:
            raise ShapeMismatchError("candidates disagree on action layout")
    arr = np.stack([a.dims for a in candidates]).astype(np.int64)
    if mode == "dim_wise":
        dims = kernels.vote_dim_wise(arr, k)
    elif d * np.log2(max(k, 2)) > 62:
        dims = _vote_action_wise_big(arr, arr[0])
    else:
        dims = kernels.vote_action_wise(arr, k)
    return Action(dims=dims, tokens=k)
