"""Small ReLU MLP encoder with an ID-prediction head, hand-written backprop,
and the momentum (EMA) update used for the forward-only key encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_embeddings, as_labels


@dataclass
class EncoderParams:
    layers: list  # [(weight (in, out), bias (out,)), ...]
    id_head: tuple  # (weight (embed, num_ids), bias (num_ids,))

    @property
    def input_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def embed_dim(self):
        return self.layers[-1][0].shape[1]

    @property
    def num_ids(self):
        return self.id_head[0].shape[1]

    def arrays(self):
        """All parameter arrays in a fixed order: layer weights/biases, then head."""
        out = []
        for w, b in self.layers:
            out += [w, b]
        return out + list(self.id_head)

    def weight_mask(self):
        """True for weight matrices, False for biases (same order as arrays())."""
        return [i % 2 == 0 for i in range(2 * len(self.layers) + 2)]

    def copy(self):
        return EncoderParams([(w.copy(), b.copy()) for w, b in self.layers],
                             (self.id_head[0].copy(), self.id_head[1].copy()))

    def shapes(self):
        return [a.shape for a in self.arrays()]

    def to_layers(self):
        return list(self.layers) + [self.id_head]

    @classmethod
    def from_layers(cls, layers):
        if len(layers) < 2:
            raise ValueError("checkpoint needs at least one layer plus the ID head")
        return cls([(w.copy(), b.copy()) for w, b in layers[:-1]],
                   (layers[-1][0].copy(), layers[-1][1].copy()))


def init_params(input_dim, hidden_dims, embed_dim, num_ids, rng):
    """Glorot-uniform weights, zero biases."""
    dims = [input_dim, *hidden_dims, embed_dim]
    layers = [(_glorot(rng, a, b), np.zeros(b)) for a, b in zip(dims[:-1], dims[1:])]
    head = (_glorot(rng, embed_dim, num_ids), np.zeros(num_ids))
    return EncoderParams(layers, head)


def _glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def forward(params, inputs):
    """Embeddings, ID logits and the activations needed by :func:`backward`."""
    h = as_embeddings(inputs, dim=params.input_dim, name="inputs")
    acts = [h]
    pre = []
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    logits = h @ params.id_head[0] + params.id_head[1]
    return h, logits, (acts, pre)


def encode(params, inputs):
    return forward(params, inputs)[0]


def backward(params, inputs, grad_embeddings, grad_logits, cache=None):
    """Parameter gradients given upstream gradients on embeddings and logits.

    Either upstream gradient may be None (treated as zero).
    """
    if cache is None:
        emb, _, cache = forward(params, inputs)
    acts, pre = cache
    emb = acts[-1]
    n = emb.shape[0]
    g_emb = np.zeros_like(emb) if grad_embeddings is None else np.asarray(grad_embeddings, dtype=np.float64)
    g_log = np.zeros((n, params.num_ids)) if grad_logits is None else np.asarray(grad_logits, dtype=np.float64)
    if g_emb.shape != emb.shape or g_log.shape != (n, params.num_ids):
        raise ValueError("upstream gradient shapes do not match the forward outputs")
    wh, _ = params.id_head
    head = (emb.T @ g_log, g_log.sum(axis=0))
    g = g_emb + g_log @ wh.T
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        if i < len(params.layers) - 1:
            g = g * (pre[i] > 0)
        grads[i] = (acts[i].T @ g, g.sum(axis=0))
        if i:
            g = g @ w.T
    return EncoderParams(grads, head)


def ema_update(main, ema, m):
    """In place: every EMA parameter becomes ``m * ema + (1 - m) * main``.

    Written as ``ema += (1 - m) * (main - ema)`` so that a zero gap stays
    exactly zero, and ``m = 0`` copies the main encoder bit for bit.
    """
    if not 0 <= m < 1:
        raise ValueError("momentum must satisfy 0 <= m < 1")
    if main.shapes() != ema.shapes():
        raise ValueError("main and EMA encoders have different shapes")
    for p_ema, p_main in zip(ema.arrays(), main.arrays()):
        if m == 0:
            np.copyto(p_ema, p_main)
        else:
            p_ema += (1.0 - m) * (p_main - p_ema)
    return ema


def id_cross_entropy(logits, label):
    """Softmax cross-entropy of one logit vector; returns (loss, d loss / d logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} identities")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    p = np.exp(shifted - log_z)
    grad = p.copy()
    grad[label] -= 1.0
    return float(log_z - shifted[label]), grad


def id_cross_entropy_batch(logits, labels):
    """Mean cross-entropy over rows and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = as_labels(labels, num_ids=logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(labels.size)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / labels.size
