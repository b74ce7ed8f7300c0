"""Momentum-dictionary training loop.

Each step: encode the batch with the main and EMA encoders, push the EMA
keys into the dictionary, label the dictionary per query, compute the
metric loss plus ID cross-entropy, backprop through the main encoder only,
apply SGD with momentum and weight decay, then update the EMA encoder.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .core import DegenerateGeometryError, GroupedBatch, check_metric, substream
from .dictionary import KeyDictionary
from .encoder import backward, ema_update, encode, forward, id_cross_entropy_batch, init_params
from .he_loss import he_loss_with_roles

log = logging.getLogger(__name__)

LOSSES = (
    "he",
    "tri_all",
    "tri_hard",
    "npair",
    "ranked_list",
    "infonce_single",
    "infonce_in",
    "infonce_out",
    "infonce_single_hard",
    "infonce_in_hard",
    "infonce_out_hard",
)

DEGENERATE_NOISE = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 10
    groups_C: int = 16
    per_group_N: int = 16
    base_lr: float = 0.01
    weight_decay: float = 0.0005
    sgd_momentum: float = 0.9
    dict_capacity: int = 8192
    ema_momentum: float = 0.997
    seed: int = 0
    loss: str = "he"
    include_past_positives: bool = False
    metric: str = "euclidean"
    hidden_dims: tuple = (64,)
    embed_dim: int = 32
    decay_biases: bool = False
    margin: float = 0.3
    rll_alpha: float = 1.2
    rll_beta: float = 0.4
    temperature: float = 0.07
    hard_count: int = 15

    def __post_init__(self):
        if self.groups_C < 2 or self.per_group_N < 2:
            raise ValueError("groups_C and per_group_N must be >= 2")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.ema_momentum < 1:
            raise ValueError("ema_momentum must satisfy 0 <= m < 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {', '.join(LOSSES)}")
        check_metric(self.metric)
        if self.dict_capacity < self.batch_size:
            raise ValueError("dict_capacity must hold at least one batch")
        if self.loss.startswith("infonce_single") and (self.per_group_N != 2 or self.include_past_positives):
            raise ValueError("single-positive InfoNCE needs per_group_N == 2 and no past positives")
        if self.metric != "euclidean" and self.loss.startswith("infonce"):
            raise ValueError("InfoNCE uses dot-product similarity; metric must stay euclidean")
        self.hidden_dims = tuple(self.hidden_dims)

    @property
    def batch_size(self):
        return self.groups_C * self.per_group_N


@dataclass
class TrainState:
    params: object
    ema: object
    velocity: list
    dictionary: KeyDictionary
    sampler_rng: np.random.Generator
    noise_rng: np.random.Generator
    step: int = 0
    total_steps: int = 1
    steps_per_epoch: int = 1
    history: list = field(default_factory=list)


def lr_schedule(step, total_steps, base_lr):
    """Constant for the first half, then cosine decay reaching 0 at ``total_steps``."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ValueError("need 0 <= step <= total_steps and total_steps > 0")
    half = total_steps / 2.0
    if step < half:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - half) / half))


def optimal_lr_for_size(size):
    """Reference learning rate for a training set of ``size`` samples.

    Grows with log(size); anchored at 0.02 for 3e5 samples and 0 at 4e3.
    """
    if size <= 4e3:
        raise ValueError("dataset size must exceed 4000")
    return 0.02 * (math.log(size) - math.log(4e3)) / (math.log(3e5) - math.log(4e3))


def sample_batch(dataset, cfg, rng):
    """Draw C distinct identities and N distinct samples of each."""
    inputs, labels = dataset
    ids, counts = np.unique(labels, return_counts=True)
    eligible = ids[counts >= cfg.per_group_N]
    if eligible.size < cfg.groups_C:
        raise ValueError(
            f"need {cfg.groups_C} identities with >= {cfg.per_group_N} samples, have {eligible.size}"
        )
    chosen = rng.choice(eligible, size=cfg.groups_C, replace=False)
    rows = []
    for ident in chosen:
        members = np.flatnonzero(labels == ident)
        rows.append(rng.choice(members, size=cfg.per_group_N, replace=False))
    rows = np.concatenate(rows)
    return GroupedBatch(inputs[rows], labels[rows], cfg.groups_C, cfg.per_group_N, rows)


def init_state(cfg, input_dim, num_ids, dataset_size):
    params = init_params(input_dim, cfg.hidden_dims, cfg.embed_dim, num_ids, substream(cfg.seed, "init"))
    steps_per_epoch = dataset_size // cfg.batch_size
    if steps_per_epoch < 1:
        raise ValueError("dataset is smaller than one batch")
    return TrainState(
        params=params,
        ema=params.copy(),
        velocity=[np.zeros_like(a) for a in params.arrays()],
        dictionary=KeyDictionary(cfg.dict_capacity, cfg.embed_dim),
        sampler_rng=substream(cfg.seed, "sampler"),
        noise_rng=substream(cfg.seed, "noise"),
        steps_per_epoch=steps_per_epoch,
        total_steps=steps_per_epoch * cfg.epochs,
    )


def metric_loss(cfg, queries, keys, roles):
    """Mean configured metric loss over query rows and its gradient w.r.t. the queries."""
    if cfg.loss == "he":
        value, grad, _ = he_loss_with_roles(queries, keys, roles, cfg.metric)
        return value, grad
    n = queries.shape[0]
    grad = np.zeros_like(queries)
    total = 0.0
    for i in range(n):
        pos = keys[roles[i] == 1]
        neg = keys[roles[i] == -1]
        v, g = _baseline_grad(cfg, queries[i], pos, neg)
        total += v
        grad[i] = g
    return total / n, grad / n


def _baseline_grad(cfg, q, pos, neg):
    name = cfg.loss
    if name in ("tri_all", "tri_hard"):
        tcfg = baselines.TripletConfig(cfg.margin, "all" if name == "tri_all" else "hard")
        return baselines.triplet_grad(q, pos, neg, tcfg, cfg.metric)
    if name == "npair":
        return baselines.npair_grad(q, pos, neg, cfg.hard_count, cfg.metric)
    if name == "ranked_list":
        return baselines.ranked_list_grad(q, pos, neg, baselines.RankedListConfig(cfg.rll_alpha, cfg.rll_beta), cfg.metric)
    parts = name.split("_")
    variant = {"single": "single", "in": "multi_in", "out": "multi_out"}[parts[1]]
    icfg = baselines.InfoNceConfig(cfg.temperature, variant, parts[-1] == "hard", cfg.hard_count)
    return baselines.infonce_grad(q, pos, neg, icfg)


def train_step(state, batch, cfg):
    """One optimisation step; mutates ``state`` and returns the metrics record."""
    x, labels = batch.inputs, batch.labels
    emb, logits, cache = forward(state.params, x)
    keys = encode(state.ema, x)
    slots = state.dictionary.enqueue(keys, labels)
    count = len(state.dictionary)
    dict_keys = state.dictionary.features[:count]
    roles = state.dictionary.roles(labels, slots, cfg.include_past_positives)[:, :count]

    try:
        loss_metric, grad_emb = metric_loss(cfg, emb, dict_keys, roles)
    except DegenerateGeometryError as err:
        rows = list(err.query_rows)
        log.warning("step %d: degenerate geometry on rows %s, retrying with noise", state.step, rows)
        emb_try = emb.copy()
        emb_try[rows] += state.noise_rng.uniform(-DEGENERATE_NOISE, DEGENERATE_NOISE, size=(len(rows), emb.shape[1]))
        try:
            loss_metric, grad_emb = metric_loss(cfg, emb_try, dict_keys, roles)
        except DegenerateGeometryError:
            log.warning("step %d: metric loss skipped", state.step)
            loss_metric, grad_emb = float("nan"), np.zeros_like(emb)

    loss_id, grad_logits = id_cross_entropy_batch(logits, labels)
    grads = backward(state.params, x, grad_emb, grad_logits, cache)
    grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays()))

    lr = lr_schedule(state.step, state.total_steps, cfg.base_lr)
    sgd_update(state.params.arrays(), grads.arrays(), state.velocity, lr, cfg.sgd_momentum,
               cfg.weight_decay, decay_mask=None if cfg.decay_biases else state.params.weight_mask())
    ema_update(state.params, state.ema, cfg.ema_momentum)

    record = {
        "step": state.step,
        "epoch": state.step // state.steps_per_epoch,
        "lr": lr,
        "loss_he": loss_metric,
        "loss_id": loss_id,
        "grad_norm": grad_norm,
    }
    state.step += 1
    return record


def sgd_update(params, grads, velocity, lr, momentum, weight_decay, decay_mask=None):
    """In place: ``v = momentum * v + g + wd * p``; ``p -= lr * v``.

    ``decay_mask`` selects which arrays receive weight decay (all if None).
    """
    for i, (p, g, v) in enumerate(zip(params, grads, velocity)):
        wd = weight_decay if decay_mask is None or decay_mask[i] else 0.0
        v *= momentum
        v += g
        if wd:
            v += wd * p
        p -= lr * v


def train(cfg, dataset, on_step=None):
    """Run ``cfg.epochs`` epochs over ``dataset = (inputs, labels)``.

    ``on_step`` receives every metrics record as it is produced.
    """
    inputs, labels = dataset
    num_ids = int(labels.max()) + 1
    state = init_state(cfg, inputs.shape[1], num_ids, inputs.shape[0])
    for _ in range(state.total_steps):
        batch = sample_batch(dataset, cfg, state.sampler_rng)
        record = train_step(state, batch, cfg)
        state.history.append(record)
        if on_step is not None:
            on_step(record)
    return state
