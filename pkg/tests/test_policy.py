"""Frozen policy: forward-pass oracles, greedy decoding, behavior cloning."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdf.policy import (
    Demonstration,
    bc_greedy_fit,
    encode,
    greedy_action,
    lm_logits,
    train_bc,
)
from pdf.types import (
    Action,
    ArchHeader,
    Feature,
    Instruction,
    LogitsMatrix,
    Observation,
    ShapeMismatchError,
    TrainingError,
    DTYPE,
)

from conftest import make_snapshot, random_obs, random_instr


# Oracles: naive float64 reimplementation of the forward maps, written
# against the declared architecture rather than the kernel code.

def encode_oracle(snap, obs, instr):
    x = np.concatenate([
        obs.pixels.reshape(-1).astype(np.float64),
        snap.embed.astype(np.float64)[instr.tokens].reshape(-1),
    ])
    h1 = np.tanh(x @ snap.enc_w1.astype(np.float64)
                 + snap.enc_b1.astype(np.float64))
    f = np.tanh(h1 @ snap.enc_w2.astype(np.float64)
                + snap.enc_b2.astype(np.float64))
    return f


def lm_logits_oracle(snap, feat_values):
    a = snap.header
    w = snap.lm_w.astype(np.float64)
    b = snap.lm_b.astype(np.float64)
    out = np.empty(w.shape[1])
    for j in range(w.shape[1]):
        acc = b[j]
        for i in range(w.shape[0]):
            acc += feat_values[i] * w[i, j]
        out[j] = acc
    return out.reshape(a.action_dims, a.action_tokens)


class TestEncode:
    def test_deterministic(self, snapshot, arch):
        obs, instr = random_obs(arch, 0), random_instr(arch, 1)
        f1 = encode(snapshot, obs, instr)
        f2 = encode(snapshot, obs, instr)
        assert f1.values.tobytes() == f2.values.tobytes()

    def test_zero_obs_pad_instruction_matches_oracle(self, snapshot, arch):
        obs = Observation(np.zeros((arch.h, arch.w, arch.c), dtype=DTYPE))
        instr = Instruction(tokens=np.zeros(arch.instr_len, dtype=np.int64),
                            vocab=arch.vocab)
        got = encode(snapshot, obs, instr).values
        want = encode_oracle(snapshot, obs, instr)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_matches_oracle_on_random_input(self, snapshot, arch):
        obs, instr = random_obs(arch, 3), random_instr(arch, 4)
        got = encode(snapshot, obs, instr).values
        want = encode_oracle(snapshot, obs, instr)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_single_pixel_sensitivity(self, snapshot, arch):
        # 100 random single-pixel perturbations must each move the feature.
        obs, instr = random_obs(arch, 5), random_instr(arch, 6)
        base = encode(snapshot, obs, instr).values
        rng = np.random.Generator(np.random.PCG64(9))
        for _ in range(100):
            px = obs.pixels.copy()
            i = int(rng.integers(arch.h))
            j = int(rng.integers(arch.w))
            c = int(rng.integers(arch.c))
            px[i, j, c] = 1.0 - px[i, j, c]
            moved = encode(snapshot, Observation(px), instr).values
            assert not np.array_equal(moved, base)

    def test_shape_mismatch_rejected(self, snapshot, arch):
        bad = Observation(np.zeros((arch.h + 1, arch.w, arch.c), dtype=DTYPE))
        with pytest.raises(ShapeMismatchError):
            encode(snapshot, bad, random_instr(arch, 0))
        bad_instr = Instruction(tokens=np.array([1]), vocab=arch.vocab)
        with pytest.raises(ShapeMismatchError):
            encode(snapshot, random_obs(arch, 0), bad_instr)


class TestLmLogits:
    def test_zero_feature_gives_bias_rows(self, snapshot, arch):
        z = lm_logits(snapshot, Feature(np.zeros(arch.feature_dim, dtype=DTYPE)))
        want = snapshot.lm_b.reshape(arch.action_dims, arch.action_tokens)
        assert z.values.tobytes() == want.astype(DTYPE).tobytes()

    def test_affinity_in_feature(self, snapshot, arch):
        f = np.linspace(-1, 1, arch.feature_dim).astype(DTYPE)
        bias = snapshot.lm_b.reshape(arch.action_dims, arch.action_tokens)
        z1 = lm_logits(snapshot, Feature(f)).values.astype(np.float64) - bias
        z2 = lm_logits(snapshot, Feature(2 * f)).values.astype(np.float64) - bias
        np.testing.assert_allclose(z2, 2 * z1, atol=1e-5)

    def test_matches_naive_matmul_oracle(self, snapshot, arch):
        f = np.linspace(-0.9, 1.1, arch.feature_dim).astype(DTYPE)
        got = lm_logits(snapshot, Feature(f)).values
        want = lm_logits_oracle(snapshot, f.astype(np.float64))
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_wrong_length_rejected(self, snapshot, arch):
        with pytest.raises(ShapeMismatchError):
            lm_logits(snapshot, Feature(np.zeros(arch.feature_dim + 1, dtype=DTYPE)))


class TestGreedyAction:
    def test_basic_argmax(self):
        z = LogitsMatrix(np.array([[0.1, 0.9, 0.3]], dtype=DTYPE))
        assert greedy_action(z) == Action(dims=np.array([1]), tokens=3)

    def test_tie_breaks_low(self):
        z = LogitsMatrix(np.zeros((2, 4), dtype=DTYPE))
        assert greedy_action(z) == Action(dims=np.array([0, 0]), tokens=4)

    def test_two_row_example(self):
        z = LogitsMatrix(np.array([[1.0, 2.0], [3.0, 0.0]], dtype=DTYPE))
        assert greedy_action(z) == Action(dims=np.array([1, 0]), tokens=2)

    @given(st.integers(1, 4), st.integers(2, 6),
           st.integers(0, 2 ** 31 - 1),
           st.floats(-5, 5, allow_nan=False))
    @settings(max_examples=60, deadline=None)
    def test_invariant_to_row_constant(self, d, k, seed, shift):
        rng = np.random.Generator(np.random.PCG64(seed))
        z = rng.normal(0, 2, (d, k)).astype(DTYPE)
        before = greedy_action(LogitsMatrix(z))
        row = int(rng.integers(d))
        z2 = z.copy()
        z2[row] += DTYPE(shift)
        after = greedy_action(LogitsMatrix(z2))
        assert before == after


def one_step_demo(arch, seed=0):
    obs = random_obs(arch, seed)
    instr = random_instr(arch, seed + 1)
    act = Action(dims=np.array([1, 0, 2]), tokens=arch.action_tokens)
    return Demonstration(instruction=instr, steps=((obs, act),))


class TestTrainBc:
    def test_memorizes_single_step(self, arch):
        demo = one_step_demo(arch)
        snap = train_bc([demo], arch, seed=0, epochs=300, hidden=8)
        obs, act = demo.steps[0]
        pred = greedy_action(lm_logits(snap, encode(snap, obs, demo.instruction)))
        assert pred == act
        assert bc_greedy_fit(snap, [demo]) == 1.0

    def test_same_seed_bit_identical(self, arch):
        demo = one_step_demo(arch)
        s1 = train_bc([demo], arch, seed=3, epochs=120, hidden=8)
        s2 = train_bc([demo], arch, seed=3, epochs=120, hidden=8)
        assert s1.checksum() == s2.checksum()

    def test_different_seed_differs(self, arch):
        demo = one_step_demo(arch)
        s1 = train_bc([demo], arch, seed=3, epochs=120, hidden=8)
        s2 = train_bc([demo], arch, seed=4, epochs=120, hidden=8)
        assert s1.checksum() != s2.checksum()

    def test_unreachable_fit_threshold_raises(self, arch):
        # Two identical observations with contradicting labels cannot both fit.
        obs = random_obs(arch, 0)
        instr = random_instr(arch, 1)
        a0 = Action(dims=np.array([0, 0, 0]), tokens=arch.action_tokens)
        a1 = Action(dims=np.array([1, 1, 1]), tokens=arch.action_tokens)
        demo = Demonstration(instruction=instr, steps=((obs, a0), (obs, a1)))
        with pytest.raises(TrainingError):
            train_bc([demo], arch, seed=0, epochs=60, hidden=8)

    def test_empty_demos_rejected(self, arch):
        with pytest.raises(TrainingError):
            train_bc([], arch, seed=0, epochs=10)

    def test_aug_params_validated(self, arch):
        demo = one_step_demo(arch)
        with pytest.raises(TrainingError):
            train_bc([demo], arch, epochs=10, aug_copies=2, aug_shift_px=0)
        with pytest.raises(TrainingError):
            train_bc([demo], arch, epochs=10, aug_copies=9, aug_shift_px=1)

    def test_label_smoothing_validated(self, arch):
        demo = one_step_demo(arch)
        with pytest.raises(TrainingError):
            train_bc([demo], arch, epochs=10, label_smoothing=1.0)

    def test_snapshot_is_write_protected(self, snapshot):
        with pytest.raises(ValueError):
            snapshot.lm_w[0, 0] = 1.0
