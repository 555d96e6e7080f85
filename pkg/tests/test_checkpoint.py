"""Binary container round-trips and malformed-input handling."""
import struct

import numpy as np
import pytest

from zooselect.errors import CheckpointFormatError
from zooselect.nncore import (MAGIC, dump_arrays, load_checkpoint,
                              parse_arrays, read_with_header, save_checkpoint,
                              write_with_header)


def sample_arrays():
    rng = np.random.default_rng(13)
    return {
        "layer.w": rng.normal(size=(4, 3)),
        "layer.b": rng.normal(size=3),
        "scalar": np.array(2.5),
        "cube": rng.normal(size=(2, 2, 2)),
    }


def test_round_trip_is_bitwise(tmp_path):
    arrays = sample_arrays()
    path = tmp_path / "params.k2v"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].dtype == np.float64
        assert loaded[name].shape == arrays[name].shape
        assert loaded[name].tobytes() == np.asarray(arrays[name], dtype=np.float64).tobytes()


def test_serialization_is_deterministic():
    arrays = sample_arrays()
    reordered = {k: arrays[k] for k in reversed(list(arrays))}
    assert dump_arrays(arrays) == dump_arrays(reordered)


def test_container_layout_is_as_documented():
    blob = dump_arrays({"ab": np.array([1.0, 2.0])})
    assert blob[:4] == MAGIC == b"K2V1"
    name_len = struct.unpack("<I", blob[4:8])[0]
    assert name_len == 2
    assert blob[8:10] == b"ab"
    rank = struct.unpack("<I", blob[10:14])[0]
    assert rank == 1
    assert struct.unpack("<I", blob[14:18])[0] == 2
    assert np.frombuffer(blob[18:], dtype="<f8").tolist() == [1.0, 2.0]


def test_bad_magic_rejected():
    with pytest.raises(CheckpointFormatError, match="magic"):
        parse_arrays(b"XXXX" + b"\x00" * 16)


def test_truncated_payload_rejected():
    blob = dump_arrays({"w": np.ones((3, 3))})
    with pytest.raises(CheckpointFormatError, match="truncated"):
        parse_arrays(blob[:-8])


def test_header_container_round_trip(tmp_path):
    header = {"model_id": "m-00", "k": 4, "epsilon": 1e-3}
    arrays = {"anchor.0": np.arange(5.0)}
    path = tmp_path / "artifact.bin"
    write_with_header(path, header, arrays)
    got_header, got_arrays = read_with_header(path)
    assert got_header == header
    np.testing.assert_array_equal(got_arrays["anchor.0"], np.arange(5.0))


def test_garbage_header_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(struct.pack("<I", 5) + b"nope!" + b"")
    with pytest.raises(CheckpointFormatError):
        read_with_header(path)
