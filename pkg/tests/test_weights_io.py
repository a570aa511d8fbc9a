"""Portable weight file format: round trips, corruption, dispatch."""

import numpy as np
import pytest

from pdf import weights_io
from pdf.perturb import PerturbationHead
from pdf.policy import PolicySnapshot, encode, lm_logits
from pdf.types import (
    ArchHeader,
    DimensionMismatchError,
    MalformedHeaderError,
    DTYPE,
)

from conftest import make_snapshot, random_obs, random_instr


def header_fields_oracle(a: ArchHeader, b: ArchHeader):
    """Field-by-field header comparison, independent of dataclass __eq__."""
    names = ("h", "w", "c", "vocab", "instr_len", "embed_dim",
             "feature_dim", "action_dims", "action_tokens")
    return [(n, getattr(a, n), getattr(b, n)) for n in names
            if getattr(a, n) != getattr(b, n)]


class TestTensorRoundTrip:
    def test_bit_exact_identity(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(3))
        tensors = {
            "a": rng.normal(0, 1, (4, 5)).astype(DTYPE),
            "b.c": rng.normal(0, 1, 7).astype(DTYPE),
            "scalar": np.array(2.5, dtype=DTYPE),
        }
        path = tmp_path / "t.pdfw"
        weights_io.write_tensors(path, tensors)
        back = weights_io.read_tensors(path)
        assert list(back) == list(tensors)
        for name in tensors:
            assert back[name].dtype == DTYPE
            assert back[name].shape == tensors[name].shape
            assert back[name].tobytes() == tensors[name].tobytes()

    def test_zero_head_round_trips_zero(self, arch, tmp_path):
        head = PerturbationHead.fresh(arch, hidden=4, seed=0)
        path = tmp_path / "head.pdfw"
        head.save(path)
        back = PerturbationHead.load(path)
        assert not back.w2.any() and not back.b2.any()
        assert back.w1.tobytes() == head.w1.tobytes()
        assert back.is_zero_output()

    def test_header_preserved_field_by_field(self, tmp_path):
        # D=7, K=16, F=32 survive a full save/load cycle.
        arch = ArchHeader(h=4, w=4, c=3, vocab=9, instr_len=2, embed_dim=3,
                          feature_dim=32, action_dims=7, action_tokens=16)
        snap = make_snapshot(arch, seed=5)
        path = tmp_path / "snap.pdfw"
        snap.save(path)
        back = PolicySnapshot.load(path)
        assert header_fields_oracle(snap.header, back.header) == []

    def test_logits_identical_after_reload(self, tmp_path):
        arch = ArchHeader(h=4, w=4, c=3, vocab=9, instr_len=2, embed_dim=3,
                          feature_dim=6, action_dims=3, action_tokens=5)
        snap = make_snapshot(arch, seed=11)
        obs, instr = random_obs(arch, 1), random_instr(arch, 2)
        before = lm_logits(snap, encode(snap, obs, instr)).values
        path = tmp_path / "snap.pdfw"
        snap.save(path)
        back = PolicySnapshot.load(path)
        after = lm_logits(back, encode(back, obs, instr)).values
        assert before.tobytes() == after.tobytes()  # 0 ulp


class TestCorruptInputs:
    def _snap_bytes(self, tmp_path):
        arch = ArchHeader(h=2, w=2, c=1, vocab=3, instr_len=1, embed_dim=2,
                          feature_dim=3, action_dims=2, action_tokens=3)
        snap = make_snapshot(arch, seed=1, hidden=4)
        path = tmp_path / "x.pdfw"
        snap.save(path)
        return path.read_bytes()

    def test_bad_magic(self):
        with pytest.raises(MalformedHeaderError):
            weights_io.deserialize_tensors(b"NOPE" + b"\x00" * 16)

    def test_truncated_header(self, tmp_path):
        data = self._snap_bytes(tmp_path)
        with pytest.raises(MalformedHeaderError):
            weights_io.deserialize_tensors(data[:17])

    def test_truncated_data_is_dimension_mismatch(self, tmp_path):
        # Header declares more floats than remain: one value short.
        data = self._snap_bytes(tmp_path)
        with pytest.raises(DimensionMismatchError):
            weights_io.deserialize_tensors(data[:-4])

    def test_trailing_bytes_rejected(self, tmp_path):
        data = self._snap_bytes(tmp_path)
        with pytest.raises(DimensionMismatchError):
            weights_io.deserialize_tensors(data + b"\x00\x00\x00\x00")

    def test_unsupported_version(self):
        import struct
        blob = b"PDF1" + struct.pack("<II", 99, 0)
        with pytest.raises(MalformedHeaderError):
            weights_io.deserialize_tensors(blob)

    def test_missing_tensor_on_load(self, tmp_path):
        path = tmp_path / "bad.pdfw"
        weights_io.write_tensors(path, {"head.w1": np.zeros(2, dtype=DTYPE)})
        with pytest.raises(DimensionMismatchError):
            PerturbationHead.load(path)


class TestChecksumAndDispatch:
    def test_checksum_stable_and_sensitive(self, arch):
        snap = make_snapshot(arch, seed=2)
        c1 = snap.checksum()
        assert c1 == snap.checksum()
        other = make_snapshot(arch, seed=3)
        assert c1 != other.checksum()

    def test_load_any_dispatches(self, arch, tmp_path):
        snap = make_snapshot(arch, seed=4)
        head = PerturbationHead.fresh(arch, hidden=4, seed=4)
        sp, hp_ = tmp_path / "s.pdfw", tmp_path / "h.pdfw"
        snap.save(sp)
        head.save(hp_)
        assert isinstance(weights_io.load_any(sp), PolicySnapshot)
        assert isinstance(weights_io.load_any(hp_), PerturbationHead)

    def test_load_any_rejects_unknown_set(self, tmp_path):
        path = tmp_path / "u.pdfw"
        weights_io.write_tensors(path, {"mystery": np.zeros(1, dtype=DTYPE)})
        with pytest.raises(MalformedHeaderError):
            weights_io.load_any(path)
