import numpy as np
import pytest

from pdf.perturb import PerturbationHead
from pdf.policy import PolicySnapshot
from pdf.types import ArchHeader, DTYPE


@pytest.fixture
def arch():
    return ArchHeader(h=4, w=4, c=3, vocab=9, instr_len=2, embed_dim=3,
                      feature_dim=6, action_dims=3, action_tokens=5)


def make_snapshot(arch: ArchHeader, seed: int = 0,
                  hidden: int = 8) -> PolicySnapshot:
    """Random (untrained) snapshot; enough for shape and purity tests."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = arch.action_dims * arch.action_tokens
    return PolicySnapshot(
        header=arch,
        embed=rng.normal(0, 0.5, (arch.vocab, arch.embed_dim)).astype(DTYPE),
        enc_w1=rng.normal(0, 0.2, (arch.input_dim, hidden)).astype(DTYPE),
        enc_b1=rng.normal(0, 0.1, hidden).astype(DTYPE),
        enc_w2=rng.normal(0, 0.2, (hidden, arch.feature_dim)).astype(DTYPE),
        enc_b2=rng.normal(0, 0.1, arch.feature_dim).astype(DTYPE),
        lm_w=rng.normal(0, 0.5, (arch.feature_dim, out)).astype(DTYPE),
        lm_b=rng.normal(0, 0.2, out).astype(DTYPE),
    )


@pytest.fixture
def snapshot(arch):
    return make_snapshot(arch)


@pytest.fixture
def fresh_head(arch):
    return PerturbationHead.fresh(arch, hidden=8, seed=7)


def random_obs(arch: ArchHeader, seed: int = 0):
    from pdf.types import Observation
    rng = np.random.Generator(np.random.PCG64(seed))
    return Observation(rng.random((arch.h, arch.w, arch.c)).astype(DTYPE))


def random_instr(arch: ArchHeader, seed: int = 0):
    from pdf.types import Instruction
    rng = np.random.Generator(np.random.PCG64(seed))
    toks = rng.integers(1, arch.vocab, size=arch.instr_len)
    return Instruction(tokens=toks, vocab=arch.vocab)
