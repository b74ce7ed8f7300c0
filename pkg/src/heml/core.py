"""Shared types, validation helpers, seeded RNG streams and distance functions."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels

METRICS = ("euclidean", "neg_cosine")


class DegenerateGeometryError(ValueError):
    """A hard sample sits exactly on its query, so the distance gradient is undefined."""

    def __init__(self, message, query_rows=()):
        super().__init__(message)
        self.query_rows = tuple(query_rows)


def as_embeddings(x, dim=None, name="embeddings"):
    """Return `x` as a C-contiguous float64 (rows, dim) array, checking finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, dim or 0)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} has dim {arr.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_vector(x, name="vector"):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_labels(labels, num_ids=None):
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be 1-D")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("labels must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("labels must be non-negative")
    if num_ids is not None and arr.size and arr.max() >= num_ids:
        raise ValueError(f"label {arr.max()} out of range for {num_ids} identities")
    return arr


def check_metric(metric):
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return metric


@dataclass
class DistanceList:
    values: np.ndarray
    sample_indices: np.ndarray
    is_sorted: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.sample_indices is None:
            self.sample_indices = np.arange(self.values.size)
        self.sample_indices = np.asarray(self.sample_indices, dtype=np.intp).reshape(-1)
        if self.values.size != self.sample_indices.size:
            raise ValueError("values and sample_indices must be parallel")

    @classmethod
    def of(cls, values):
        return cls(np.asarray(values, dtype=np.float64), None)

    def __len__(self):
        return self.values.size

    def sorted(self):
        """Ascending copy; ties broken by ascending sample index."""
        if self.is_sorted:
            return self
        order = np.lexsort((self.sample_indices, self.values))
        return DistanceList(self.values[order], self.sample_indices[order], is_sorted=True)


@dataclass
class GroupedBatch:
    """C identity groups of N rows each; rows are laid out group-major."""

    inputs: np.ndarray
    labels: np.ndarray
    groups: int
    per_group: int
    sample_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.groups < 2 or self.per_group < 2:
            raise ValueError("a grouped batch needs C >= 2 and N >= 2")
        if self.inputs.shape[0] != self.groups * self.per_group:
            raise ValueError("row count must equal C * N")
        ids, counts = np.unique(self.labels, return_counts=True)
        if ids.size != self.groups or np.any(counts != self.per_group):
            raise ValueError("batch must hold exactly C distinct labels, N rows each")


def substream(seed, name):
    """Independent generator for a named purpose ('sampler', 'init', 'data', ...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def euclidean_distance(a, b):
    a, b = as_vector(a, "a"), as_vector(b, "b")
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(kernels.pairwise_euclidean(a.reshape(1, -1), b.reshape(1, -1))[0, 0])


def negative_cosine_similarity(a, b):
    a, b = as_vector(a, "a"), as_vector(b, "b")
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("negative cosine similarity is undefined for a zero vector")
    return float(np.clip(-np.dot(a / na, b / nb), -1.0, 1.0))


def distance_matrix(queries, keys, metric="euclidean"):
    """(Q, K) matrix of distances between every query row and every key row."""
    check_metric(metric)
    queries = as_embeddings(queries, name="queries")
    keys = as_embeddings(keys, dim=queries.shape[1], name="keys")
    if metric == "euclidean":
        return kernels.pairwise_euclidean(queries, keys)
    qn = np.linalg.norm(queries, axis=1)
    kn = np.linalg.norm(keys, axis=1)
    if np.any(qn == 0) or np.any(kn == 0):
        raise ValueError("negative cosine similarity is undefined for a zero vector")
    return np.clip(-(queries / qn[:, None]) @ (keys / kn[:, None]).T, -1.0, 1.0)


def pairwise_distances(query, keys, metric="euclidean"):
    """Distances from one query to every key row, as an unsorted DistanceList."""
    query = as_vector(query, "query")
    keys = as_embeddings(keys, name="keys") if np.size(keys) else np.zeros((0, query.size))
    if keys.shape[1] != query.size:
        raise ValueError(f"dimension mismatch: query {query.size} vs keys {keys.shape[1]}")
    if keys.shape[0] == 0:
        return DistanceList(np.zeros(0), np.zeros(0, dtype=np.intp))
    values = distance_matrix(query.reshape(1, -1), keys, metric)[0]
    return DistanceList(values, np.arange(keys.shape[0]))


def distance_gradients(query, keys, metric="euclidean"):
    """Distances from `query` to each key and d(distance)/d(query), one row per key.

    Euclidean rows are (q - k) / d; rows with d == 0 are left at zero and the
    caller decides whether that is degenerate.
    """
    query = as_vector(query, "query")
    keys = as_embeddings(keys, dim=query.size, name="keys")
    if metric == "euclidean":
        d = kernels.pairwise_euclidean(query.reshape(1, -1), keys)[0]
        diff = query - keys
        grad = np.zeros_like(diff)
        nz = d > 0
        grad[nz] = diff[nz] / d[nz, None]
        return d, grad
    check_metric(metric)
    qn = np.linalg.norm(query)
    kn = np.linalg.norm(keys, axis=1)
    if qn == 0 or np.any(kn == 0):
        raise ValueError("negative cosine similarity is undefined for a zero vector")
    qhat = query / qn
    khat = keys / kn[:, None]
    cos = khat @ qhat
    d = -cos
    grad = -(khat - cos[:, None] * qhat) / qn
    return d, grad
