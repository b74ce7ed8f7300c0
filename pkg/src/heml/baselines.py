"""Comparison losses: triplet (all / hard), N-pair, Ranked List and InfoNCE.

Every loss takes one query vector and its positive and negative key matrices.
The ``*_grad`` variants also return the gradient with respect to the query;
keys come from the momentum encoder and never need gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_embeddings, as_vector, distance_gradients

TRIPLET_MINING = ("all", "hard")
INFONCE_VARIANTS = ("single", "multi_in", "multi_out")


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.3
    mining: str = "hard"

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.mining not in TRIPLET_MINING:
            raise ValueError(f"mining must be one of {TRIPLET_MINING}")


@dataclass(frozen=True)
class RankedListConfig:
    alpha: float = 1.2
    beta: float = 0.4

    def __post_init__(self):
        if not self.alpha > self.beta >= 0:
            raise ValueError("need alpha > beta >= 0")


@dataclass(frozen=True)
class InfoNceConfig:
    temperature: float = 0.07
    variant: str = "multi_out"
    hard_mining: bool = False
    hard_count: int = 15

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.variant not in INFONCE_VARIANTS:
            raise ValueError(f"variant must be one of {INFONCE_VARIANTS}")
        if self.hard_count < 1:
            raise ValueError("hard_count must be >= 1")


def _prepare(query, positives, negatives, need_pos=True, need_neg=True):
    q = as_vector(query, "query")
    pos = as_embeddings(positives, dim=q.size, name="positives") if np.size(positives) else np.zeros((0, q.size))
    neg = as_embeddings(negatives, dim=q.size, name="negatives") if np.size(negatives) else np.zeros((0, q.size))
    if need_pos and pos.shape[0] == 0:
        raise ValueError("positives must be non-empty")
    if need_neg and neg.shape[0] == 0:
        raise ValueError("negatives must be non-empty")
    return q, pos, neg


def _nearest(values, k):
    # k smallest, ties by ascending index
    return np.argsort(values, kind="stable")[:k]


def triplet_grad(query, positives, negatives, cfg=TripletConfig(), metric="euclidean"):
    q, pos, neg = _prepare(query, positives, negatives)
    dp, gp = distance_gradients(q, pos, metric)
    dn, gn = distance_gradients(q, neg, metric)
    if cfg.mining == "hard":
        ip, in_ = int(np.argmax(dp)), int(np.argmin(dn))
        rep_p, rep_n = dp[ip], dn[in_]
        grad_p, grad_n = gp[ip], gn[in_]
    else:
        rep_p, rep_n = dp.mean(), dn.mean()
        grad_p, grad_n = gp.mean(axis=0), gn.mean(axis=0)
    value = rep_p - rep_n + cfg.margin
    if value <= 0:
        return 0.0, np.zeros_like(q)
    return float(value), grad_p - grad_n


def triplet_loss(query, positives, negatives, cfg=TripletConfig(), metric="euclidean"):
    """Hinge on one positive and one negative representative distance.

    ``mining="all"`` uses the mean distance of each set, ``"hard"`` the
    farthest positive and the nearest negative.
    """
    return triplet_grad(query, positives, negatives, cfg, metric)[0]


def npair_grad(query, positives, negatives, hard_count=15, metric="euclidean"):
    q, pos, neg = _prepare(query, positives, negatives)
    if neg.shape[0] < hard_count:
        raise ValueError(f"need at least {hard_count} negatives, got {neg.shape[0]}")
    dp, gp = distance_gradients(q, pos, metric)
    dn, gn = distance_gradients(q, neg, metric)
    ip = int(np.argmax(dp))
    chosen = _nearest(dn, hard_count)
    x = np.concatenate(([0.0], dp[ip] - dn[chosen]))
    top = x.max()
    w = np.exp(x - top)
    value = top + np.log(w.sum())
    w /= w.sum()
    grad = w[1:].sum() * gp[ip] - w[1:] @ gn[chosen]
    return float(value), grad


def npair_loss(query, positives, negatives, hard_count=15, metric="euclidean"):
    """log(1 + sum_n exp(d_p - d_n)) over the farthest positive and the
    ``hard_count`` nearest negatives (similarity taken as negative distance)."""
    return npair_grad(query, positives, negatives, hard_count, metric)[0]


def ranked_list_grad(query, positives, negatives, cfg=RankedListConfig(), metric="euclidean"):
    q, pos, neg = _prepare(query, positives, negatives, need_pos=False, need_neg=False)
    value = 0.0
    grad = np.zeros_like(q)
    if pos.shape[0]:
        dp, gp = distance_gradients(q, pos, metric)
        hp = dp > cfg.alpha - cfg.beta
        if hp.any():
            value += float(np.sum(dp[hp] - (cfg.alpha - cfg.beta))) / dp.size
            grad += gp[hp].sum(axis=0) / dp.size
    if neg.shape[0]:
        dn, gn = distance_gradients(q, neg, metric)
        hn = dn < cfg.alpha
        if hn.any():
            value += float(np.sum(cfg.alpha - dn[hn])) / dn.size
            grad -= gn[hn].sum(axis=0) / dn.size
    return value, grad


def ranked_list_loss(query, positives, negatives, cfg=RankedListConfig(), metric="euclidean"):
    """Hinge on positives beyond ``alpha - beta`` plus hinge on negatives
    inside ``alpha``, each averaged over its whole set.

    Easy samples enter the average with a zero hinge. Dividing by the hard
    count instead would let the loss rise when a negative moves outward and
    leaves the hard set. Empty sets contribute nothing.
    """
    return ranked_list_grad(query, positives, negatives, cfg, metric)[0]


def _logsumexp(x):
    top = x.max()
    return top + np.log(np.exp(x - top).sum())


def _softmax(x):
    w = np.exp(x - x.max())
    return w / w.sum()


def infonce_grad(query, positives, negatives, cfg=InfoNceConfig()):
    q, pos, neg = _prepare(query, positives, negatives, need_neg=False)
    if cfg.variant == "single" and pos.shape[0] != 1:
        raise ValueError(f"single-positive InfoNCE needs exactly 1 positive, got {pos.shape[0]}")
    tau = cfg.temperature
    if cfg.hard_mining and neg.shape[0]:
        sims = neg @ q
        neg = neg[np.argsort(-sims, kind="stable")[:cfg.hard_count]]
    keys = np.concatenate([pos, neg])
    s_pos = pos @ q / tau
    s_all = keys @ q / tau
    lse_all = _logsumexp(s_all)
    attract = _softmax(s_all) @ keys
    if cfg.variant == "single":
        value = lse_all - s_pos[0]
        grad = (attract - pos[0]) / tau
    elif cfg.variant == "multi_in":
        value = lse_all - _logsumexp(s_pos)
        grad = (attract - _softmax(s_pos) @ pos) / tau
    else:
        value = pos.shape[0] * lse_all - s_pos.sum()
        grad = (pos.shape[0] * attract - pos.sum(axis=0)) / tau
    return float(value), grad


def infonce_loss(query, positives, negatives, cfg=InfoNceConfig()):
    """InfoNCE with dot-product similarity over keys = positives + negatives.

    ``single`` is the one-positive form; ``multi_in`` sums the positive
    probabilities inside the log, ``multi_out`` sums the per-positive logs.
    With ``hard_mining`` only the ``hard_count`` negatives most similar to
    the query are kept.
    """
    return infonce_grad(query, positives, negatives, cfg)[0]
