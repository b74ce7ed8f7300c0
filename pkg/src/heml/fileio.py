"""Little-endian binary formats.

Key snapshot / dataset dump ("MRID")::

    char[4] magic, u32 dim, u32 count,
    count x (float32[dim] features, u32 label, u64 batch_seq)

Encoder checkpoint ("MRCK")::

    char[4] magic, u32 layer_count, layer_count x (u32 rows, u32 cols),
    then per layer: float64[rows*cols] weight (row-major), float64[cols] bias

The ID head is stored as the final layer.
"""

import struct

import numpy as np

SNAPSHOT_MAGIC = b"MRID"
CHECKPOINT_MAGIC = b"MRCK"


def _record_dtype(dim):
    return np.dtype([("x", "<f4", (dim,)), ("label", "<u4"), ("seq", "<u8")])


def write_snapshot(path, features, labels, batch_seq=None):
    features = np.asarray(features, dtype=np.float64)
    count, dim = features.shape
    labels = np.asarray(labels)
    if labels.shape != (count,):
        raise ValueError("labels must have one entry per row")
    if batch_seq is None:
        batch_seq = np.zeros(count, dtype=np.uint64)
    records = np.zeros(count, dtype=_record_dtype(dim))
    records["x"] = features
    records["label"] = labels
    records["seq"] = batch_seq
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC + struct.pack("<II", dim, count))
        fh.write(records.tobytes())


def read_snapshot(path):
    """Return ``(features float64, labels int64, batch_seq int64)``."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not an MRID snapshot")
        dim, count = struct.unpack("<II", head[4:])
        dt = _record_dtype(dim)
        payload = fh.read()
    if len(payload) != count * dt.itemsize:
        raise ValueError(f"{path}: truncated snapshot")
    records = np.frombuffer(payload, dtype=dt, count=count)
    return (
        records["x"].astype(np.float64).reshape(count, dim),
        records["label"].astype(np.int64),
        records["seq"].astype(np.int64),
    )


def write_dictionary(path, dictionary):
    feats, labels, seqs = dictionary.contents()
    write_snapshot(path, feats, labels, seqs)


def write_dataset(path, inputs, labels):
    write_snapshot(path, inputs, labels)


def read_dataset(path):
    x, labels, _ = read_snapshot(path)
    return x, labels


def write_checkpoint(path, layers):
    """``layers`` is a list of (weight, bias) pairs, weight shaped (in, out)."""
    header = [CHECKPOINT_MAGIC, struct.pack("<I", len(layers))]
    for w, b in layers:
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ValueError("bias must match the weight's output width")
        header.append(struct.pack("<II", *w.shape))
    with open(path, "wb") as fh:
        fh.write(b"".join(header))
        for w, b in layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an MRCK checkpoint")
    (n_layers,) = struct.unpack_from("<I", data, 4)
    off = 8
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", data, off))
        off += 8
    layers = []
    for rows, cols in shapes:
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=off)
        off += 8 * cols
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    if off != len(data):
        raise ValueError(f"{path}: checkpoint size does not match its header")
    return layers
