"""Frozen tokenized policy: encoder, action head, and behavior cloning.

The policy is a small pixels+instruction MLP trained once by behavior
cloning and then frozen. At test time only ``encode``, ``lm_logits`` and
``greedy_action`` run; adaptation never touches these weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from . import kernels, weights_io
from .types import (
    Action,
    ArchHeader,
    DimensionMismatchError,
    DivergenceError,
    Feature,
    Instruction,
    LogitsMatrix,
    Observation,
    ShapeMismatchError,
    TrainingError,
    DTYPE,
)


@dataclass(frozen=True)
class PolicySnapshot:
    """Immutable weight set for the frozen policy.

    Tensors: instruction embedding table, two tanh encoder layers mapping
    the flattened (pixels, embedded instruction) input to the feature
    vector, and an affine action head producing action_dims * action_tokens
    logits. All arrays are float32 and write-protected.
    """

    header: ArchHeader
    embed: np.ndarray
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    lm_w: np.ndarray
    lm_b: np.ndarray

    def __post_init__(self) -> None:
        a = self.header
        expected = {
            "embed": (a.vocab, a.embed_dim),
            "enc_w1": (a.input_dim, self.enc_w1.shape[1] if self.enc_w1.ndim == 2 else -1),
            "enc_b1": (self.enc_w1.shape[1],) if self.enc_w1.ndim == 2 else (-1,),
            "enc_w2": (self.enc_w1.shape[1], a.feature_dim) if self.enc_w1.ndim == 2 else (-1, -1),
            "enc_b2": (a.feature_dim,),
            "lm_w": (a.feature_dim, a.action_dims * a.action_tokens),
            "lm_b": (a.action_dims * a.action_tokens,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionMismatchError(
                    f"snapshot tensor {name} has shape {arr.shape}, expected {shape}"
                )
            if arr.dtype != DTYPE:
                object.__setattr__(self, name, arr.astype(DTYPE))
        for name in expected:
            getattr(self, name).setflags(write=False)

    @property
    def hidden_dim(self) -> int:
        return self.enc_w1.shape[1]

    def to_tensors(self) -> Dict[str, np.ndarray]:
        return {
            "arch": self.header.to_array(),
            "embed": self.embed,
            "enc.w1": self.enc_w1,
            "enc.b1": self.enc_b1,
            "enc.w2": self.enc_w2,
            "enc.b2": self.enc_b2,
            "lm.w": self.lm_w,
            "lm.b": self.lm_b,
        }

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "PolicySnapshot":
        try:
            header = ArchHeader.from_array(tensors["arch"])
            return cls(
                header=header,
                embed=tensors["embed"],
                enc_w1=tensors["enc.w1"],
                enc_b1=tensors["enc.b1"],
                enc_w2=tensors["enc.w2"],
                enc_b2=tensors["enc.b2"],
                lm_w=tensors["lm.w"],
                lm_b=tensors["lm.b"],
            )
        except KeyError as exc:
            raise DimensionMismatchError(f"snapshot file missing tensor {exc}")

    def save(self, path) -> None:
        weights_io.write_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "PolicySnapshot":
        return cls.from_tensors(weights_io.read_tensors(path))

    def checksum(self) -> str:
        return weights_io.checksum_tensors(self.to_tensors())


# ---------------------------------------------------------------------------
# Frozen forward passes
# ---------------------------------------------------------------------------

def _assemble_input(snapshot: PolicySnapshot, obs: Observation,
                    instr: Instruction) -> np.ndarray:
    a = snapshot.header
    if obs.pixels.shape != (a.h, a.w, a.c):
        raise ShapeMismatchError(
            f"observation shape {obs.pixels.shape} != policy input {(a.h, a.w, a.c)}"
        )
    if instr.tokens.shape[0] != a.instr_len or instr.vocab != a.vocab:
        raise ShapeMismatchError(
            f"instruction (len={instr.tokens.shape[0]}, vocab={instr.vocab}) "
            f"does not match policy (len={a.instr_len}, vocab={a.vocab})"
        )
    x = np.empty(a.input_dim, dtype=DTYPE)
    n_pix = a.h * a.w * a.c
    x[:n_pix] = obs.pixels.reshape(-1)
    x[n_pix:] = snapshot.embed[instr.tokens].reshape(-1)
    return x


def encode(snapshot: PolicySnapshot, obs: Observation,
           instr: Instruction) -> Feature:
    """Deterministic feature vector for one observation and instruction."""
    x = _assemble_input(snapshot, obs, instr)
    values = kernels.mlp_tanh_tanh(
        x, snapshot.enc_w1, snapshot.enc_b1, snapshot.enc_w2, snapshot.enc_b2)
    return Feature(values)


def lm_logits(snapshot: PolicySnapshot, feature: Feature) -> LogitsMatrix:
    """Base per-dimension token logits for a feature vector."""
    a = snapshot.header
    if feature.values.shape[0] != a.feature_dim:
        raise ShapeMismatchError(
            f"feature length {feature.values.shape[0]} != {a.feature_dim}"
        )
    flat = kernels.affine(feature.values, snapshot.lm_w, snapshot.lm_b)
    return LogitsMatrix(flat.reshape(a.action_dims, a.action_tokens))


def greedy_action(logits: LogitsMatrix) -> Action:
    """Per-dimension argmax; ties resolve to the lowest token index."""
    dims = kernels.rows_argmax(logits.values)
    return Action(dims=dims, tokens=logits.action_tokens)


# ---------------------------------------------------------------------------
# Behavior cloning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Demonstration:
    """Expert episode: one instruction and its (observation, action) steps."""

    instruction: Instruction
    steps: Tuple[Tuple[Observation, Action], ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise TrainingError("demonstration has no steps")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def train_bc(demos: Sequence[Demonstration], arch: ArchHeader, *,
             seed: int = 0, epochs: int = 1500, learning_rate: float = 3e-3,
             hidden: int = 64, label_smoothing: float = 0.0,
             aug_shift_px: int = 0, aug_copies: int = 0,
             fit_threshold: float = 0.95) -> PolicySnapshot:
    """Fit the policy to demonstrations by full-batch Adam cross-entropy.

    Loss is the per-dimension cross-entropy summed over action dimensions,
    averaged over steps. label_smoothing > 0 spreads that much target mass
    uniformly over tokens, which bounds the trained logit margins (and so
    keeps the policy's token entropy informative off-distribution).
    aug_copies > 0 adds that many pixel-shifted duplicates of every step
    (offsets drawn without replacement from the nonzero ring of radius
    aug_shift_px, labels unchanged), giving the policy partial robustness
    to small translations while leaving larger ones degraded.
    Runs entirely in float64 with a fixed operation order, so equal inputs
    yield bit-identical snapshots. Raises DivergenceError when the loss
    goes non-finite and TrainingError when the final greedy fit on the
    original demonstrations is below fit_threshold.
    """
    if not (0.0 <= label_smoothing < 1.0):
        raise TrainingError("label_smoothing must lie in [0, 1)")
    if aug_shift_px < 0 or aug_copies < 0:
        raise TrainingError("augmentation parameters must be >= 0")
    if aug_copies > 0 and aug_shift_px == 0:
        raise TrainingError("aug_copies > 0 requires aug_shift_px >= 1")
    if not demos:
        raise TrainingError("need at least one demonstration")
    d, k = arch.action_dims, arch.action_tokens
    n_pix = arch.h * arch.w * arch.c

    ring = [(dx, dy)
            for dx in range(-aug_shift_px, aug_shift_px + 1)
            for dy in range(-aug_shift_px, aug_shift_px + 1)
            if (dx, dy) != (0, 0)]
    if aug_copies > len(ring) > 0:
        raise TrainingError(
            f"aug_copies {aug_copies} exceeds the {len(ring)} distinct offsets")
    aug_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, 0xA46))))

    pix_rows, tok_rows, y_rows = [], [], []
    for demo in demos:
        for obs, act in demo.steps:
            if obs.pixels.shape != (arch.h, arch.w, arch.c):
                raise ShapeMismatchError(
                    f"demo observation shape {obs.pixels.shape} != "
                    f"{(arch.h, arch.w, arch.c)}")
            pix_rows.append(obs.pixels.reshape(-1).astype(np.float64))
            tok_rows.append(demo.instruction.tokens)
            y_rows.append(act.dims)
            if aug_copies:
                for idx in aug_rng.choice(len(ring), size=aug_copies,
                                          replace=False):
                    dx, dy = ring[int(idx)]
                    shifted = kernels.shift_image(obs.pixels, dx, dy)
                    pix_rows.append(shifted.reshape(-1).astype(np.float64))
                    tok_rows.append(demo.instruction.tokens)
                    y_rows.append(act.dims)
    pix = np.stack(pix_rows)
    toks = np.stack(tok_rows)
    y = np.stack(y_rows)
    n = pix.shape[0]

    rng = np.random.Generator(np.random.PCG64(seed))
    def init(shape, scale):
        return rng.normal(0.0, scale, size=shape)

    embed = init((arch.vocab, arch.embed_dim), 0.5)
    w1 = init((arch.input_dim, hidden), np.sqrt(2.0 / (arch.input_dim + hidden)))
    b1 = np.zeros(hidden)
    w2 = init((hidden, arch.feature_dim), np.sqrt(2.0 / (hidden + arch.feature_dim)))
    b2 = np.zeros(arch.feature_dim)
    lw = init((arch.feature_dim, d * k), np.sqrt(2.0 / (arch.feature_dim + d * k)))
    lb = np.zeros(d * k)

    params = [embed, w1, b1, w2, b2, lw, lb]
    m_t = [np.zeros_like(p) for p in params]
    v_t = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    onehot = np.zeros((n, d, k))
    onehot[np.arange(n)[:, None], np.arange(d)[None, :], y] = 1.0
    if label_smoothing > 0.0:
        onehot = (1.0 - label_smoothing) * onehot + label_smoothing / k

    x = np.empty((n, arch.input_dim))
    x[:, :n_pix] = pix

    for epoch in range(epochs):
        x[:, n_pix:] = embed[toks].reshape(n, -1)
        h1 = np.tanh(x @ w1 + b1)
        f = np.tanh(h1 @ w2 + b2)
        z = (f @ lw + lb).reshape(n, d, k)
        logp = _log_softmax(z)
        loss = -(onehot * logp).sum() / n
        if not np.isfinite(loss):
            raise DivergenceError(f"behavior cloning diverged at epoch {epoch}")

        dz = (np.exp(logp) - onehot).reshape(n, d * k) / n
        glw = f.T @ dz
        glb = dz.sum(axis=0)
        df = dz @ lw.T
        dpre2 = df * (1.0 - f * f)
        gw2 = h1.T @ dpre2
        gb2 = dpre2.sum(axis=0)
        dh1 = dpre2 @ w2.T
        dpre1 = dh1 * (1.0 - h1 * h1)
        gw1 = x.T @ dpre1
        gb1 = dpre1.sum(axis=0)
        dx = dpre1 @ w1.T
        gembed = np.zeros_like(embed)
        np.add.at(gembed, toks.reshape(-1),
                  dx[:, n_pix:].reshape(n * toks.shape[1], arch.embed_dim))

        grads = [gembed, gw1, gb1, gw2, gb2, glw, glb]
        t = epoch + 1
        corr1 = 1.0 - beta1 ** t
        corr2 = 1.0 - beta2 ** t
        for p, g, mm, vv in zip(params, grads, m_t, v_t):
            mm *= beta1
            mm += (1.0 - beta1) * g
            vv *= beta2
            vv += (1.0 - beta2) * (g * g)
            p -= learning_rate * (mm / corr1) / (np.sqrt(vv / corr2) + eps)

    snapshot = PolicySnapshot(
        header=arch,
        embed=embed.astype(DTYPE),
        enc_w1=w1.astype(DTYPE),
        enc_b1=b1.astype(DTYPE),
        enc_w2=w2.astype(DTYPE),
        enc_b2=b2.astype(DTYPE),
        lm_w=lw.astype(DTYPE),
        lm_b=lb.astype(DTYPE),
    )

    fit = bc_greedy_fit(snapshot, demos)
    if fit < fit_threshold:
        raise TrainingError(
            f"greedy fit {fit:.4f} below threshold {fit_threshold:.2f}; "
            f"raise epochs or learning_rate")
    return snapshot


def bc_greedy_fit(snapshot: PolicySnapshot,
                  demos: Sequence[Demonstration]) -> float:
    """Fraction of demonstration steps whose greedy action matches exactly."""
    total = 0
    hit = 0
    for demo in demos:
        for obs, act in demo.steps:
            pred = greedy_action(lm_logits(snapshot, encode(snapshot, obs, demo.instruction)))
            total += 1
            hit += int(np.array_equal(pred.dims, act.dims))
    if total == 0:
        raise TrainingError("no demonstration steps to evaluate")
    return hit / total
