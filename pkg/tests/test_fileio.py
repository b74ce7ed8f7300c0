import struct

import numpy as np
import pytest

from heml.dictionary import KeyDictionary
from heml.encoder import EncoderParams, init_params
from heml.fileio import (
    read_checkpoint,
    read_dataset,
    read_snapshot,
    write_checkpoint,
    write_dataset,
    write_dictionary,
)


def test_snapshot_layout(tmp_path):
    path = tmp_path / "d.bin"
    write_dataset(path, np.array([[1.0, 2.0]]), [7])
    raw = path.read_bytes()
    assert raw[:4] == b"MRID"
    assert struct.unpack("<II", raw[4:12]) == (2, 1)
    assert struct.unpack("<ffIQ", raw[12:]) == (1.0, 2.0, 7, 0)


def test_dictionary_round_trip(tmp_path, rng):
    d = KeyDictionary(10, 3)
    for b in range(4):
        d.enqueue(rng.normal(size=(4, 3)), [b, b, b + 1, b + 1])
    write_dictionary(tmp_path / "q.bin", d)
    feats, labels, seqs = read_snapshot(tmp_path / "q.bin")
    ref = d.contents()
    np.testing.assert_allclose(feats, ref[0], rtol=1e-6)  # stored as float32
    assert np.array_equal(labels, ref[1]) and np.array_equal(seqs, ref[2])


def test_dataset_round_trip(tmp_path, rng):
    x = rng.normal(size=(5, 4)).astype(np.float32).astype(np.float64)
    write_dataset(tmp_path / "x.bin", x, np.arange(5))
    y, labels = read_dataset(tmp_path / "x.bin")
    assert np.array_equal(x, y) and labels.tolist() == list(range(5))


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_params(5, (6, 4), 3, 7, rng)
    write_checkpoint(tmp_path / "c.bin", params.to_layers())
    back = EncoderParams.from_layers(read_checkpoint(tmp_path / "c.bin"))
    for a, b in zip(params.arrays(), back.arrays()):
        assert np.array_equal(a, b)


def test_bad_files(tmp_path):
    (tmp_path / "junk").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "junk")
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "junk")
    write_dataset(tmp_path / "t.bin", np.zeros((3, 2)), [0, 1, 2])
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-3])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "t.bin")
