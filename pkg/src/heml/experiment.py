"""Flat key=value experiment configs and the train-then-evaluate pipeline.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Keys are the fields of :class:`ExperimentConfig`. Unknown keys are rejected
and the keys in ``REQUIRED`` must be present. Example::

    seed = 0
    num_ids = 64
    samples_per_id = 32
    input_dim = 16
    epochs = 30
    loss = he
    base_lr = 0.003
    dict_capacity = 1024
    ema_momentum = 0.99
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, fields

from .encoder import encode
from .evaluator import evaluate
from .synth import SynthConfig, generate
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

REQUIRED = (
    "seed",
    "num_ids",
    "samples_per_id",
    "input_dim",
    "epochs",
    "loss",
    "base_lr",
    "dict_capacity",
    "ema_momentum",
)


class ConfigError(ValueError):
    """Bad config file, unknown key, missing key or invalid value."""


@dataclass
class ExperimentConfig:
    # data
    seed: int = 0
    num_ids: int = 64
    samples_per_id: int = 32
    input_dim: int = 16
    center_scale: float = 1.0
    noise_sigma: float = 0.5
    nuisance_dims: int = 0
    nuisance_sigma: float = 0.0
    test_num_ids: int = 0  # 0: half of num_ids
    test_samples_per_id: int = 0  # 0: half of samples_per_id
    # training
    epochs: int = 30
    groups_C: int = 16
    per_group_N: int = 16
    base_lr: float = 0.01
    weight_decay: float = 0.0005
    sgd_momentum: float = 0.9
    dict_capacity: int = 8192
    ema_momentum: float = 0.997
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

    def synth_config(self):
        return SynthConfig(self.num_ids, self.samples_per_id, self.input_dim, self.center_scale,
                           self.noise_sigma, self.seed, self.nuisance_dims, self.nuisance_sigma)

    def test_synth_config(self):
        return dataclasses.replace(
            self.synth_config(),
            num_ids=self.test_num_ids or max(2, self.num_ids // 2),
            samples_per_id=self.test_samples_per_id or max(2, self.samples_per_id // 2),
        )

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def validate(self):
        """Build the derived configs so every invalid value surfaces as ConfigError."""
        try:
            self.synth_config()
            self.test_synth_config()
            self.train_config()
        except ValueError as err:
            raise ConfigError(str(err)) from err
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(key, raw):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_assignments(pairs, source="<overrides>"):
    """Turn ``key=value`` strings into a typed dict, rejecting unknown keys."""
    out = {}
    for lineno, pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def parse_text(text, source="<config>"):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append((lineno, line))
    return parse_assignments(pairs, source)


def load_config(path=None, overrides=(), require=True):
    """Read a config file and apply ``--set`` style overrides (overrides win)."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
        values.update(parse_text(text, str(path)))
    values.update(parse_assignments([(i + 1, s) for i, s in enumerate(overrides)]))
    if require:
        missing = [k for k in REQUIRED if k not in values]
        if missing:
            raise ConfigError(f"missing required keys: {', '.join(missing)}")
    return ExperimentConfig(**values).validate()


@dataclass
class RunResult:
    state: object
    retrieval: object
    final_loss: float


def make_datasets(cfg):
    return generate(cfg.synth_config(), "data"), generate(cfg.test_synth_config(), "test")


def evaluate_params(params, test):
    feats = encode(params, test[0])
    return evaluate(feats, test[1], feats, test[1], exclude_self=True)


def run(cfg, on_step=None):
    """Generate data, train, and evaluate on held-out identities."""
    train_data, test_data = make_datasets(cfg)
    state = train(cfg.train_config(), train_data, on_step)
    result = evaluate_params(state.params, test_data)
    tail = [r["loss_he"] for r in state.history[-state.steps_per_epoch:]]
    final_loss = sum(tail) / len(tail)
    log.info("%s: map=%.4f rank1=%.4f", cfg.loss, result.map, result.rank1)
    return RunResult(state, result, final_loss)


def metrics_line(record):
    return json.dumps(record, sort_keys=False)
