import json
import struct

import numpy as np
import pytest

from adarank.checkpoint import FORMAT_VERSION, MAGIC, Checkpoint, CheckpointFormatError, file_digest


def sample():
    return Checkpoint(
        {"b.0": np.arange(6.0).reshape(2, 3), "head.0": np.array([[0.5], [-1.25]])},
        {"seed": 3, "acc": 0.975, "name": "x"},
    )


def test_layout_by_hand():
    ck = Checkpoint({"w": np.array([[1.5, -2.0]])}, {"a": 1})
    raw = ck.to_bytes()
    expected = (
        b"ADRK"
        + struct.pack("<II", 1, 1)
        + struct.pack("<I", 1) + b"w"
        + struct.pack("<II", 1, 2)
        + struct.pack("<2d", 1.5, -2.0)
        + struct.pack("<I", 7) + b'{"a":1}'
    )
    assert raw == expected


def test_round_trip_exact(tmp_path):
    ck = sample()
    digest = ck.save(tmp_path / "c.adrk")
    back = Checkpoint.load(tmp_path / "c.adrk")
    assert back.names() == ck.names()
    for n in ck.names():
        assert back[n].tobytes() == ck[n].tobytes()
    assert back.manifest == ck.manifest
    assert digest == file_digest(tmp_path / "c.adrk") == back.digest()


def test_manifest_key_order_does_not_change_bytes():
    a = Checkpoint({"w": np.ones((1, 1))}, {"x": 1, "y": 2})
    b = Checkpoint({"w": np.ones((1, 1))}, {"y": 2, "x": 1})
    assert a.to_bytes() == b.to_bytes()


def test_vectors_become_rows():
    assert Checkpoint({"s": np.arange(3.0)})["s"].shape == (1, 3)


def test_rejects_unknown_version():
    raw = bytearray(sample().to_bytes())
    raw[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    with pytest.raises(CheckpointFormatError, match="version"):
        Checkpoint.from_bytes(bytes(raw))


def test_rejects_bad_magic_truncation_and_trailing():
    raw = sample().to_bytes()
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(raw[:-3])
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(raw + b"\0")


def test_manifest_is_json():
    raw = sample().to_bytes()
    (mlen,) = struct.unpack("<I", raw[-len(b'{"acc":0.975,"name":"x","seed":3}') - 4 :][:4])
    assert json.loads(raw[-mlen:]) == {"acc": 0.975, "name": "x", "seed": 3}
    assert raw.startswith(MAGIC)
