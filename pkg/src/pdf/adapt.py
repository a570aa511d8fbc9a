"""Delayed-feedback adaptation of the perturbation head.

Episodes run with the head frozen; every (timestep, view) record lands in
a rollout buffer. When the episode's scalar feedback arrives, the head
takes a few SGD steps on minibatches drawn from that buffer, then the
buffer is cleared. The loss per record has two pieces:

- a feedback-weighted score term  -(r - b) * sum_d log q_d(executed token)
  where q is the softmax of the perturbed logits and b a baseline, and
- a success-gated anchor  kl_weight * sum_d KL(p_d || q_d)  with p the
  frozen policy's distribution, applied only when r > b, pulling the
  perturbed policy back toward the frozen one exactly when it is winning.

Base logits are recomputed from each record's feature through the frozen
snapshot, never through the head, so the frozen weights receive no
gradient. All updates run in float64 and write back float32; when r == b
both terms vanish exactly and the head's bytes do not change.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Tuple, Union

import numpy as np

from . import kernels
from .types import (
    Action,
    BaselineSpec,
    EmptyBufferError,
    Feature,
    Feedback,
    HyperParams,
    LogitsMatrix,
    NumericError,
    RolloutRecord,
    ShapeMismatchError,
    DTYPE,
)
from .perturb import PerturbationHead
from .policy import PolicySnapshot


class RolloutBuffer:
    """FIFO store of rollout records awaiting delayed feedback."""

    def __init__(self, capacity: Optional[int] = None) -> None:
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1 or None")
        self._records: Deque[RolloutRecord] = deque(maxlen=capacity)

    @property
    def capacity(self) -> Optional[int]:
        return self._records.maxlen

    def push(self, record: RolloutRecord) -> None:
        self._records.append(record)

    def clear(self) -> None:
        self._records.clear()

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> Tuple[RolloutRecord, ...]:
        return tuple(self._records)

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Stack contents to (features, executed actions) batch arrays."""
        if not self._records:
            raise EmptyBufferError("rollout buffer is empty")
        feats = np.stack([r.feature.values for r in self._records])
        acts = np.stack([r.executed_action.dims for r in self._records])
        return feats, acts.astype(np.int64)


class BaselineTracker:
    """Scalar feedback baseline: fixed constant or windowed running mean."""

    def __init__(self, spec: BaselineSpec) -> None:
        self.spec = spec
        self._window: Deque[float] = deque(maxlen=max(spec.window, 1))

    def value(self) -> float:
        if self.spec.kind == "fixed":
            return float(self.spec.value)
        if not self._window:
            return float(self.spec.prior)
        return float(sum(self._window) / len(self._window))

    def update(self, feedback: Union[Feedback, float]) -> None:
        r = feedback.value if isinstance(feedback, Feedback) else float(feedback)
        if self.spec.kind == "running_mean":
            self._window.append(r)

    def seen(self) -> int:
        return len(self._window)


def baseline_value(tracker: BaselineTracker) -> float:
    return tracker.value()


@dataclass(frozen=True)
class HeadGrads:
    """Gradients of the adaptation loss w.r.t. the head weights, float64."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class AdaptStats:
    """What one adaptation call did, for logging and tests."""

    grad_steps: int
    losses: Tuple[float, ...]
    advantage: float
    gate_open: bool
    baseline: float


def _head_f64(head: PerturbationHead):
    return (head.w1.astype(np.float64), head.b1.astype(np.float64),
            head.w2.astype(np.float64), head.b2.astype(np.float64))


def _as_scalar(feedback: Union[Feedback, float]) -> float:
    return feedback.value if isinstance(feedback, Feedback) else float(feedback)


def pdf_loss(head: PerturbationHead, base: LogitsMatrix, feature: Feature,
             executed_action: Action, r: Union[Feedback, float], b: float,
             scale: float, kl_weight: float, *, re_scale: float = 1.0,
             ) -> Tuple[float, HeadGrads]:
    """Loss and analytic head gradients for one stored record.

    Pure function of its arguments; the gate opens strictly when r > b.
    base must be the frozen policy's logits for this feature. re_scale
    rescales only the feedback-weighted term (ablations set it to 0).
    """
    if base.values.shape != (head.action_dims, head.action_tokens):
        raise ShapeMismatchError(
            f"base logits shape {base.values.shape} != head output "
            f"{(head.action_dims, head.action_tokens)}")
    rv = _as_scalar(r)
    advantage = rv - float(b)
    gate_open = rv > float(b)
    hw1, hb1, hw2, hb2 = _head_f64(head)
    re_l, kl_l, gw1, gb1, gw2, gb2 = kernels.record_loss_grads(
        feature.values, base.values, executed_action.dims,
        hw1, hb1, hw2, hb2, scale, advantage, kl_weight, gate_open, re_scale)
    loss = re_scale * re_l + (kl_weight if gate_open else 0.0) * kl_l
    if not np.isfinite(loss):
        raise NumericError(f"adaptation loss is non-finite ({loss})")
    return float(loss), HeadGrads(gw1, gb1, gw2, gb2)


def adapt(head: PerturbationHead, buffer: RolloutBuffer,
          snapshot: PolicySnapshot, r: Union[Feedback, float],
          baseline: BaselineTracker, hp: HyperParams, rng_seed: int, *,
          re_scale: float = 1.0, clear_buffer: bool = True) -> AdaptStats:
    """Update the head in place from one episode's buffer and feedback.

    Runs hp.grad_steps_per_episode plain SGD steps. Each step draws
    hp.batch_size records uniformly with replacement (seeded by rng_seed)
    and averages their gradients in draw order. The baseline value is read
    once before any step; the tracker sees the new feedback only after all
    steps. The buffer is cleared at the end unless clear_buffer is False
    (persistent-buffer mode).
    """
    if len(buffer) == 0:
        raise EmptyBufferError("cannot adapt from an empty rollout buffer")
    rv = _as_scalar(r)
    b = baseline.value()
    advantage = rv - b
    gate_open = rv > b

    feats, acts = buffer.as_arrays()
    n = feats.shape[0]
    a = snapshot.header
    bases = np.empty((n, a.action_dims, a.action_tokens), dtype=DTYPE)
    for i in range(n):
        bases[i] = kernels.affine(feats[i], snapshot.lm_w, snapshot.lm_b) \
            .reshape(a.action_dims, a.action_tokens)

    hw1, hb1, hw2, hb2 = _head_f64(head)
    lr = hp.learning_rate
    rng = np.random.Generator(np.random.PCG64(rng_seed))

    losses: List[float] = []
    for step in range(hp.grad_steps_per_episode):
        idx = rng.integers(0, n, size=hp.batch_size)
        loss, gw1, gb1, gw2, gb2 = kernels.batch_loss_grads(
            feats[idx], bases[idx], acts[idx], hw1, hb1, hw2, hb2,
            hp.perturb_scale, advantage, hp.kl_weight, gate_open, re_scale)
        if not np.isfinite(loss):
            raise NumericError(f"adaptation loss non-finite at step {step}")
        for name, g in (("w1", gw1), ("b1", gb1), ("w2", gw2), ("b2", gb2)):
            if not np.isfinite(g).all():
                raise NumericError(f"gradient for head.{name} non-finite at step {step}")
        hw1 -= lr * gw1
        hb1 -= lr * gb1
        hw2 -= lr * gw2
        hb2 -= lr * gb2
        losses.append(float(loss))

    head.w1 = hw1.astype(DTYPE)
    head.b1 = hb1.astype(DTYPE)
    head.w2 = hw2.astype(DTYPE)
    head.b2 = hb2.astype(DTYPE)
    baseline.update(rv)
    if clear_buffer:
        buffer.clear()
    return AdaptStats(
        grad_steps=hp.grad_steps_per_episode,
        losses=tuple(losses),
        advantage=advantage,
        gate_open=gate_open,
        baseline=b,
    )
