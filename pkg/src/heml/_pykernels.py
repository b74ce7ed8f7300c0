"""Pure-Python/numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Both modules expose the same three functions with identical semantics.
"""

import numpy as np

STATUS_OK = 0
STATUS_NO_POSITIVES = 1
STATUS_NO_NEGATIVES = 2

_CHUNK = 1 << 20  # elements of the (rows, keys, dim) difference block


def pairwise_euclidean(a, b):
    out = np.empty((a.shape[0], b.shape[0]))
    if out.size == 0:
        return out
    step = max(1, _CHUNK // max(1, b.shape[0] * a.shape[1]))
    for i in range(0, a.shape[0], step):
        diff = a[i:i + step, None, :] - b[None, :, :]
        out[i:i + step] = np.sqrt(np.sum(diff * diff, axis=2))
    return out


def boundary_walk(pos, neg):
    """Two-pointer search for the HE-loss minimiser over ascending distance lists.

    Returns ``(t, n_hard_pos, n_hard_neg, iterations)``. An exhausted list
    reads as +inf so the walk always moves along the other one.
    """
    n_p, n_n = len(pos), len(neg)
    inf = float("inf")
    n_hp, n_hn = n_p, 0
    d_p = pos[0] if n_p else inf
    d_n = neg[0] if n_n else inf
    t = 0.0
    iterations = 0
    while n_hp != n_hn:
        if d_p <= d_n:
            t = d_p
            n_hp -= 1
            k = n_p - n_hp
            d_p = pos[k] if k < n_p else inf
        else:
            t = d_n
            n_hn += 1
            d_n = neg[n_hn] if n_hn < n_n else inf
        iterations += 1
    return float(t), n_hp, n_hn, iterations


def he_rows(dist, order, roles, loss, t_out, hard, status, start, stop):
    """Per-row HE loss over a (Q, K) distance matrix.

    ``order`` is each row's ascending argsort, ``roles`` marks keys +1
    (positive), -1 (negative) or 0 (ignored). Results are written in place;
    ``hard`` gets +1 for hard positives and -1 for hard negatives.
    """
    for r in range(start, stop):
        idx = order[r]
        rl = roles[r, idx]
        pos_idx = idx[rl == 1]
        neg_idx = idx[rl == -1]
        hard[r] = 0
        if pos_idx.size == 0:
            status[r] = STATUS_NO_POSITIVES
            continue
        if neg_idx.size == 0:
            status[r] = STATUS_NO_NEGATIVES
            continue
        pos = dist[r, pos_idx]
        neg = dist[r, neg_idx]
        t, n_hp, n_hn, _ = boundary_walk(pos, neg)
        hp = pos_idx[pos_idx.size - n_hp:]
        hn = neg_idx[:n_hn]
        hard[r, hp] = 1
        hard[r, hn] = -1
        total = 0.0
        for v in pos[pos.size - n_hp:]:
            total += v - t
        for v in neg[:n_hn]:
            total += t - v
        loss[r] = total
        t_out[r] = t
        status[r] = STATUS_OK
