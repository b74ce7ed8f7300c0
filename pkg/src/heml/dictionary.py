"""Fixed-capacity FIFO of momentum-encoded keys with identity labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_embeddings, as_labels


@dataclass
class LabeledSets:
    positives: np.ndarray
    negatives: np.ndarray
    positive_indices: np.ndarray
    negative_indices: np.ndarray
    excluded_indices: np.ndarray


class KeyDictionary:
    """Ring buffer of key features, labels and the batch sequence number of
    each entry. The most recent enqueue is the "current" batch.

    While filling, valid entries are slots ``[0, len(self))``; once full every
    slot is valid and ``_start`` points at the oldest entry.
    """

    def __init__(self, capacity, dim):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.features = np.zeros((self.capacity, self.dim))
        self.labels = np.full(self.capacity, -1, dtype=np.int64)
        self.batch_seq = np.full(self.capacity, -1, dtype=np.int64)
        self._start = 0
        self._count = 0
        self.current_seq = -1

    def __len__(self):
        return self._count

    def enqueue(self, keys, labels):
        """Append a batch, evicting the oldest entries beyond capacity.

        Returns the slot index of each new row, in input order.
        """
        keys = as_embeddings(keys, dim=self.dim, name="keys")
        labels = as_labels(labels)
        n = keys.shape[0]
        if labels.size != n:
            raise ValueError("keys and labels must have the same length")
        if n > self.capacity:
            raise ValueError(f"batch of {n} exceeds dictionary capacity {self.capacity}")
        overflow = max(0, self._count + n - self.capacity)
        slots = (self._start + self._count + np.arange(n)) % self.capacity
        self.current_seq += 1
        self.features[slots] = keys
        self.labels[slots] = labels
        self.batch_seq[slots] = self.current_seq
        self._start = (self._start + overflow) % self.capacity
        self._count = min(self.capacity, self._count + n)
        return slots

    def fifo_order(self):
        """Slot indices from oldest to newest."""
        return (self._start + np.arange(self._count)) % self.capacity

    def contents(self):
        order = self.fifo_order()
        return self.features[order], self.labels[order], self.batch_seq[order]

    def valid_slots(self):
        return np.arange(self._count)

    def label(self, query_label, query_entry_index, include_past_positives=False):
        """Split the dictionary into positives and negatives for one query.

        Negatives are every entry with a different label. Positives are the
        same-label entries of the current batch other than the query's own;
        past same-label entries are dropped unless ``include_past_positives``.
        """
        if not 0 <= query_entry_index < self._count:
            raise ValueError(f"query entry {query_entry_index} out of range")
        if self.batch_seq[query_entry_index] != self.current_seq:
            raise ValueError("query entry must belong to the current batch")
        roles = self.roles([query_label], [query_entry_index], include_past_positives)[0]
        slots = self.fifo_order()
        r = roles[slots]
        same_past = slots[(self.labels[slots] == query_label) & (r == 0) & (slots != query_entry_index)]
        pos_idx = slots[r == 1]
        neg_idx = slots[r == -1]
        return LabeledSets(
            positives=self.features[pos_idx].copy(),
            negatives=self.features[neg_idx].copy(),
            positive_indices=pos_idx,
            negative_indices=neg_idx,
            excluded_indices=same_past,
        )

    def roles(self, query_labels, query_slots, include_past_positives=False):
        """(Q, capacity) int8 matrix: +1 positive, -1 negative, 0 unused/excluded."""
        query_labels = np.asarray(query_labels, dtype=np.int64)
        query_slots = np.asarray(query_slots, dtype=np.int64)
        valid = np.zeros(self.capacity, dtype=bool)
        valid[: self._count] = True
        same = self.labels[None, :] == query_labels[:, None]
        roles = np.zeros((query_labels.size, self.capacity), dtype=np.int8)
        roles[~same & valid[None, :]] = -1
        pos = same & valid[None, :]
        if not include_past_positives:
            pos &= (self.batch_seq == self.current_seq)[None, :]
        pos[np.arange(query_slots.size), query_slots] = False
        roles[pos] = 1
        return roles


def enqueue_batch(dictionary, keys, labels):
    dictionary.enqueue(keys, labels)
    return dictionary


def label_dictionary(dictionary, query_label, query_entry_index, include_past_positives=False):
    return dictionary.label(query_label, query_entry_index, include_past_positives)
