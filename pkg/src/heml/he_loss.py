"""Hard-distance Elastic (HE) loss.

For a query with positive distances ``d_p`` and negative distances ``d_n``
the loss at boundary ``t`` is::

    L(t) = sum_p max(d_p - t, 0) + sum_n max(t - d_n, 0)

``L`` is convex and piecewise linear in ``t`` with slope ``N_hn(t) - N_hp(t)``,
so its minimiser is found by a two-pointer walk over the two sorted lists
that stops once the hard-positive and hard-negative counts meet.

With the negative-cosine metric the walk runs on ``1 + d`` (range [0, 2]);
the loss value and hard sets are unchanged by that shift, ``t_star`` is
reported in shifted units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (
    DegenerateGeometryError,
    DistanceList,
    as_embeddings,
    check_metric,
    distance_gradients,
    distance_matrix,
)

_COSINE_SHIFT = 1.0


@dataclass
class BoundaryResult:
    t_star: float
    loss: float
    hard_positive_indices: np.ndarray
    hard_negative_indices: np.ndarray
    iterations: int = 0


def _as_distance_list(d):
    if isinstance(d, DistanceList):
        return d
    return DistanceList.of(d)


def he_loss_at(t, pos_dists, neg_dists):
    """Evaluate the HE loss at a fixed boundary ``t``. Empty lists contribute 0."""
    pos = _as_distance_list(pos_dists).values
    neg = _as_distance_list(neg_dists).values
    if np.any(pos < 0) or np.any(neg < 0):
        raise ValueError("distances must be non-negative")
    return float(np.sum(np.maximum(pos - t, 0.0)) + np.sum(np.maximum(t - neg, 0.0)))


def find_optimal_boundary(pos_dists, neg_dists, backend=None):
    """Minimise the HE loss over the boundary.

    Inputs are sorted (ties by sample index) unless already flagged sorted.
    Hard positives are the positives the walk has not yet passed and hard
    negatives the negatives it has; both sets have the same size. If the
    minimum is an interval the walk's left end is returned.
    """
    pos = _as_distance_list(pos_dists).sorted()
    neg = _as_distance_list(neg_dists).sorted()
    if len(pos) == 0:
        raise ValueError("at least one positive distance is required")
    if np.any(pos.values < 0) or np.any(neg.values < 0):
        raise ValueError("distances must be non-negative")
    t, n_hp, n_hn, iterations = kernels.boundary_walk(pos.values, neg.values, backend=backend)
    hp = slice(len(pos) - n_hp, len(pos))
    loss = float(np.sum(pos.values[hp] - t) + np.sum(t - neg.values[:n_hn]))
    return BoundaryResult(
        t_star=float(t),
        loss=loss,
        hard_positive_indices=pos.sample_indices[hp].copy(),
        hard_negative_indices=neg.sample_indices[:n_hn].copy(),
        iterations=int(iterations),
    )


def _query_distances(query, keys, metric):
    d = distance_matrix(query.reshape(1, -1), keys, metric)[0]
    if metric == "neg_cosine":
        d = d + _COSINE_SHIFT
    return d


def he_loss_per_query(query_index, batch_features, positives, negatives, metric="euclidean"):
    """HE loss of one batch row against its labelled positive and negative keys.

    Returned hard indices are row indices into ``positives`` / ``negatives``.
    """
    check_metric(metric)
    feats = as_embeddings(batch_features, name="batch_features")
    if not 0 <= query_index < feats.shape[0]:
        raise ValueError(f"query index {query_index} out of range")
    q = feats[query_index]
    positives = as_embeddings(positives, dim=q.size, name="positives")
    negatives = as_embeddings(negatives, dim=q.size, name="negatives")
    if positives.shape[0] == 0:
        raise ValueError("query has no positives")
    if negatives.shape[0] == 0:
        raise ValueError("query has no negatives")
    return find_optimal_boundary(
        DistanceList(_query_distances(q, positives, metric), None),
        DistanceList(_query_distances(q, negatives, metric), None),
    )


def he_loss_batch(queries, positive_sets, negative_sets, metric="euclidean"):
    """Mean HE loss over queries, each with its own positive/negative key sets."""
    feats = as_embeddings(queries, name="queries")
    if len(positive_sets) != feats.shape[0] or len(negative_sets) != feats.shape[0]:
        raise ValueError("need one positive and one negative set per query")
    losses = [
        he_loss_per_query(i, feats, positive_sets[i], negative_sets[i], metric).loss
        for i in range(feats.shape[0])
    ]
    return float(np.mean(losses)) if losses else 0.0


def he_loss_gradient(query_index, batch_features, positives, negatives, metric="euclidean"):
    """Subgradients of the per-query HE loss, boundary held at its optimum.

    Returns ``(grad_query, grad_positives, grad_negatives)``; the last two are
    dicts keyed by hard-sample row index. Non-hard samples get no entry
    (their gradient is zero).
    """
    feats = as_embeddings(batch_features, name="batch_features")
    res = he_loss_per_query(query_index, feats, positives, negatives, metric)
    q = feats[query_index]
    positives = as_embeddings(positives, dim=q.size)
    negatives = as_embeddings(negatives, dim=q.size)
    grad_q = np.zeros_like(q)
    grad_p, grad_n = {}, {}
    for idx, sign, keys, out in (
        (res.hard_positive_indices, 1.0, positives, grad_p),
        (res.hard_negative_indices, -1.0, negatives, grad_n),
    ):
        if idx.size == 0:
            continue
        d, g = distance_gradients(q, keys[idx], metric)
        if metric == "euclidean" and np.any(d == 0):
            raise DegenerateGeometryError("hard sample coincides with the query", [query_index])
        grad_q += sign * g.sum(axis=0)
        for i, k in enumerate(idx):
            out[int(k)] = sign * _key_gradient(q, keys[k], g[i], metric)
    return grad_q, grad_p, grad_n


def _key_gradient(q, k, dq, metric):
    # d(distance)/d(key) given d(distance)/d(query)
    if metric == "euclidean":
        return -dq
    qhat = q / np.linalg.norm(q)
    khat = k / np.linalg.norm(k)
    return -(qhat - np.dot(qhat, khat) * khat) / np.linalg.norm(k)


def he_loss_with_roles(queries, keys, roles, metric="euclidean", backend=None):
    """Batched HE loss of every query row against a shared key matrix.

    ``roles[i, j]`` is +1 if key j is a positive for query i, -1 if a
    negative, 0 if ignored. Returns ``(mean_loss, grad_queries, info)``
    where ``grad_queries`` is the gradient of the mean loss and ``info``
    holds per-row ``loss``, ``t_star`` and the signed ``hard`` mask.
    """
    check_metric(metric)
    queries = as_embeddings(queries, name="queries")
    keys = as_embeddings(keys, dim=queries.shape[1], name="keys")
    dist = distance_matrix(queries, keys, metric)
    if metric == "neg_cosine":
        dist = dist + _COSINE_SHIFT
    loss, t_star, hard, status = kernels.he_rows(dist, roles, backend=backend)
    bad = np.flatnonzero(status == kernels.STATUS_NO_POSITIVES)
    if bad.size:
        raise ValueError(f"queries {bad.tolist()} have no positives")
    bad = np.flatnonzero(status == kernels.STATUS_NO_NEGATIVES)
    if bad.size:
        raise ValueError(f"queries {bad.tolist()} have no negatives")
    n = queries.shape[0]
    sign = hard.astype(np.float64)
    if metric == "euclidean":
        zero = (hard != 0) & (dist == 0)
        if np.any(zero):
            rows = np.unique(np.nonzero(zero)[0])
            raise DegenerateGeometryError("hard sample coincides with the query", rows.tolist())
        w = np.divide(sign, dist, out=np.zeros_like(dist), where=hard != 0)
        grad = w.sum(axis=1)[:, None] * queries - w @ keys
    else:
        qn = np.linalg.norm(queries, axis=1)
        khat = keys / np.linalg.norm(keys, axis=1)[:, None]
        qhat = queries / qn[:, None]
        cos = qhat @ khat.T
        # d(1 - cos)/dq = -(khat - cos * qhat) / |q|
        grad = -((sign @ khat) - (sign * cos).sum(axis=1)[:, None] * qhat) / qn[:, None]
    info = {"loss": loss, "t_star": t_star, "hard": hard}
    return float(loss.mean()), grad / n, info
