import struct

import numpy as np
import pytest

from poperm.checkpoint import CheckpointFormatError, decode, encode, load_checkpoint, save_checkpoint
from poperm.training import ParamStore, TrainConfig, adam_step


def trained_store(rng):
    s = ParamStore()
    s.add("cost.W1", rng.normal(size=(4, 2)))
    s.add("eta", np.array(1.0))
    for _ in range(3):
        adam_step(s, {"cost.W1": rng.normal(size=(4, 2)), "eta": np.array(rng.normal())}, TrainConfig())
    return s


def le_tensor(name, values, shape):
    raw = name.encode()
    out = struct.pack("<I", len(raw)) + raw + struct.pack(f"<I{len(shape)}I", len(shape), *shape)
    return out + struct.pack(f"<{len(values)}d", *values)


def fixture_bytes():
    """Hand-assembled little-endian file: one 2-vector parameter at step 7."""
    body = [
        le_tensor("w", [1.5, -2.25], (2,)),
        le_tensor("w.m", [0.5, 0.0], (2,)),
        le_tensor("w.v", [0.25, 1.0], (2,)),
        le_tensor("step", [7.0], ()),
    ]
    return b"POPT" + struct.pack("<II", 1, len(body)) + b"".join(body)


class TestCheckpoint:
    def test_round_trip_bitwise(self, rng, tmp_path):
        s = trained_store(rng)
        path = tmp_path / "final.popt"
        save_checkpoint(s, path)
        loaded = load_checkpoint(path)
        assert loaded.equals(s)
        assert loaded.step == 3
        assert not (tmp_path / "final.popt.tmp").exists()

    def test_encode_is_stable(self, rng):
        s = trained_store(rng)
        assert encode(decode(encode(s))) == encode(s)

    def test_little_endian_fixture(self):
        s = decode(fixture_bytes())
        np.testing.assert_array_equal(s["w"], [1.5, -2.25])
        np.testing.assert_array_equal(s.m["w"], [0.5, 0.0])
        np.testing.assert_array_equal(s.v["w"], [0.25, 1.0])
        assert s.step == 7
        assert encode(s) == fixture_bytes()

    def test_big_endian_bytes_are_not_accepted(self):
        data = bytearray(fixture_bytes())
        data[4:8] = struct.pack(">I", 1)
        with pytest.raises(CheckpointFormatError, match="version"):
            decode(bytes(data))

    def test_bad_magic(self):
        with pytest.raises(CheckpointFormatError, match="magic"):
            decode(b"PUPT" + fixture_bytes()[4:])

    def test_version_mismatch(self):
        data = fixture_bytes()
        with pytest.raises(CheckpointFormatError, match="version"):
            decode(data[:4] + struct.pack("<I", 2) + data[8:])

    def test_truncated(self):
        data = fixture_bytes()
        for cut in (3, 10, len(data) - 1):
            with pytest.raises(CheckpointFormatError):
                decode(data[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointFormatError, match="trailing"):
            decode(fixture_bytes() + b"\x00")

    def test_missing_moments(self):
        body = [le_tensor("w", [1.0], (1,)), le_tensor("step", [0.0], ())]
        with pytest.raises(CheckpointFormatError, match="moment"):
            decode(b"POPT" + struct.pack("<II", 1, 2) + b"".join(body))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope.popt")
