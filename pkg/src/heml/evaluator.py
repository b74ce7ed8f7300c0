"""Euclidean retrieval evaluation: ranking, average precision, mAP and CMC."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .core import as_embeddings, as_labels, as_vector, distance_matrix

log = logging.getLogger(__name__)


class NoRelevantItems(ValueError):
    """The query has no relevant gallery item; callers skip it."""


@dataclass
class RetrievalResult:
    per_query_ap: np.ndarray
    map: float
    rank1: float
    cmc: np.ndarray
    query_indices: np.ndarray  # queries that were scored
    first_hit: np.ndarray  # 1-based rank of the first match per scored query

    def to_dict(self):
        return {"map": self.map, "rank1": self.rank1, "cmc": self.cmc.tolist()}


def rank_gallery(query, gallery):
    """Gallery indices by ascending Euclidean distance, ties by index."""
    q = as_vector(query, "query")
    g = as_embeddings(gallery, dim=q.size, name="gallery")
    d = distance_matrix(q.reshape(1, -1), g)[0]
    return np.argsort(d, kind="stable")


def average_precision(ranking, relevance):
    """Non-interpolated AP: mean of precision@k over the ranks k of relevant items."""
    hits = np.asarray(relevance, dtype=bool)[np.asarray(ranking, dtype=np.intp)]
    n_rel = int(hits.sum())
    if n_rel == 0:
        raise NoRelevantItems("no relevant item in the ranking")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_rel + 1) / ranks))


def evaluate(query_feats, query_labels, gallery_feats, gallery_labels, exclude_self=False):
    """Score every query against the gallery.

    With ``exclude_self`` the query and gallery are the same set and gallery
    item i is dropped from query i's ranking. Queries with no match in the
    gallery are skipped with a warning.
    """
    q = as_embeddings(query_feats, name="queries")
    g = as_embeddings(gallery_feats, dim=q.shape[1], name="gallery")
    ql = as_labels(query_labels)
    gl = as_labels(gallery_labels)
    if ql.size != q.shape[0] or gl.size != g.shape[0]:
        raise ValueError("labels must have one entry per row")
    if exclude_self and q.shape[0] != g.shape[0]:
        raise ValueError("exclude_self needs the query and gallery to be the same set")
    dist = distance_matrix(q, g)
    order = np.argsort(dist, axis=1, kind="stable")
    aps, first_hit, scored = [], [], []
    skipped = 0
    for i in range(q.shape[0]):
        ranking = order[i]
        if exclude_self:
            ranking = ranking[ranking != i]
        relevance = gl == ql[i]
        try:
            ap = average_precision(ranking, relevance)
        except NoRelevantItems:
            skipped += 1
            continue
        aps.append(ap)
        first_hit.append(int(np.argmax(relevance[ranking])) + 1)
        scored.append(i)
    if skipped:
        log.warning("skipped %d queries with no gallery match", skipped)
    if not aps:
        raise ValueError("no query has a match in the gallery")
    length = g.shape[0] - (1 if exclude_self else 0)
    first_hit = np.asarray(first_hit)
    cmc = np.array([(first_hit <= k).mean() for k in range(1, length + 1)])
    aps = np.asarray(aps)
    return RetrievalResult(
        per_query_ap=aps,
        map=float(aps.mean()),
        rank1=float(cmc[0]),
        cmc=cmc,
        query_indices=np.asarray(scored),
        first_hit=first_hit,
    )


def write_json(path, result):
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=1)
        fh.write("\n")


def write_per_query_csv(path, result, query_labels=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "label", "ap", "first_hit"])
        for qi, ap, fh_rank in zip(result.query_indices, result.per_query_ap, result.first_hit):
            label = "" if query_labels is None else int(query_labels[qi])
            w.writerow([int(qi), label, repr(float(ap)), int(fh_rank)])
