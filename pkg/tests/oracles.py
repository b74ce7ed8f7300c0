"""Independent reference computations used as test oracles.

Nothing here calls into the code paths being checked.
"""

import math

import numpy as np


def he_loss_scalar(t, pos, neg):
    total = 0.0
    for d in pos:
        total += max(d - t, 0.0)
    for d in neg:
        total += max(t - d, 0.0)
    return total


def sweep_candidates(pos, neg):
    """Every distance, every midpoint of consecutive sorted distances, 0 and max + 1."""
    values = sorted(set(float(v) for v in list(pos) + list(neg)))
    cands = list(values)
    cands += [(a + b) / 2.0 for a, b in zip(values[:-1], values[1:])]
    cands += [0.0, (values[-1] if values else 0.0) + 1.0]
    return cands


def brute_force_min(pos, neg):
    best_t, best = None, math.inf
    for t in sweep_candidates(pos, neg):
        v = he_loss_scalar(t, pos, neg)
        if v < best:
            best_t, best = t, v
    return best_t, best


def euclid_loop(a, b):
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def central_diff(f, x, h=1e-6):
    """Gradient of scalar f at array x by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def ap_precision_at_k(ranking, relevance):
    """O(n^2) AP: explicit precision@k recomputed from scratch at every hit."""
    ranked = [bool(relevance[i]) for i in ranking]
    n_rel = sum(ranked)
    total = 0.0
    for k in range(1, len(ranked) + 1):
        if ranked[k - 1]:
            total += sum(ranked[:k]) / k
    return total / n_rel


def matmul_loop(x, w, b):
    rows, inner = x.shape
    out = np.zeros((rows, w.shape[1]))
    for i in range(rows):
        for j in range(w.shape[1]):
            acc = b[j]
            for k in range(inner):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out
