"""Configuration, the training loop, the learning-rate sweep and attention dumps."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .corpus import Dataset, batches, evaluate, gen_synthetic, load_conll
from .embedder import apply_word_vectors, load_word_vectors
from .model import HANModel, ModelConfig
from .optim import OPTIMIZERS

log = logging.getLogger(__name__)

SEED_ENV = "HAN_SEED"


@dataclass
class Config:
    d: int = 128
    d_emb: int = 0
    n_layers: int = 2
    activation: str = "elu"
    channel: str = "query"
    d_ff: int = 0
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 30
    seed: int = 0
    loss_weight: float = 1.0
    optimizer: str = "radam"
    grad_clip: float = 0.0
    stop_at_overall: float = 0.0
    lowercase: bool = False
    train_path: str = ""
    dev_path: str = ""
    word_vectors: str = ""
    model_out: str = ""
    log_out: str = ""
    synth_utts: int = 64
    synth_intents: int = 4
    synth_slot_types: int = 3
    synth_max_len: int = 10
    synth_seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}")

    def model_config(self):
        return ModelConfig(d=self.d, d_emb=self.d_emb, n_layers=self.n_layers,
                           activation=self.activation, channel=self.channel, d_ff=self.d_ff,
                           lowercase=self.lowercase)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _coerce(name, raw, kind):
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config {name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ValueError(f"config {name}: cannot read {raw!r} as {kind.__name__}") from None


def config_from_mapping(mapping):
    types = {f.name: type(f.default) for f in dataclasses.fields(Config)}
    unknown = sorted(set(mapping) - set(types))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return Config(**{k: _coerce(k, v, types[k]) for k, v in mapping.items()})


def parse_config_text(text):
    """Read JSON (when the text starts with ``{``) or ``key = value`` lines."""
    if text.lstrip().startswith("{"):
        return json.loads(text)
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def load_config(path, env=None):
    """Load a config file; ``HAN_SEED`` in the environment overrides ``seed``."""
    path = Path(path)
    mapping = parse_config_text(path.read_text(encoding="utf-8"))
    for key in ("train_path", "dev_path", "word_vectors", "model_out", "log_out"):
        value = mapping.get(key)
        if value and not Path(value).is_absolute():
            mapping[key] = str(path.parent / value)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        mapping["seed"] = env[SEED_ENV]
    return config_from_mapping(mapping)


@dataclass
class TrainResult:
    model: HANModel
    log: list
    best_epoch: int
    best_report: object
    train_data: Dataset
    dev_data: Dataset
    final_params: dict = field(default_factory=dict)


def load_training_data(config):
    if config.train_path:
        train_data = load_conll(config.train_path, lowercase=config.lowercase)
    else:
        train_data = gen_synthetic(config.synth_seed, config.synth_utts, config.synth_intents,
                                   config.synth_slot_types, config.synth_max_len)
    dev_data = load_conll(config.dev_path, lowercase=config.lowercase) if config.dev_path else train_data
    return train_data, dev_data


def predict_dataset(model, dataset):
    return [model.predict_utterance(u.tokens) for u in dataset]


def evaluate_model(model, dataset):
    return evaluate(list(dataset), predict_dataset(model, dataset))


def _clip(store, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in store.grads.values()))
    if total > max_norm:
        for g in store.grads.values():
            g *= max_norm / total


def build_model(config, train_data):
    model = HANModel(config.model_config(), train_data.vocab, train_data.intent_labels,
                     train_data.slot_labels, seed=config.seed)
    if config.word_vectors:
        hits = apply_word_vectors(model.store, model.vocab, load_word_vectors(config.word_vectors))
        log.info("initialised %d embedding rows from %s", hits, config.word_vectors)
    return model


def train(config, train_data=None, dev_data=None):
    """Train with fixed epoch budget and keep the best-dev-overall parameters.

    The log holds one entry per epoch, starting with epoch 0 (the untrained
    model).  The returned model carries the best parameters.
    """
    if train_data is None:
        train_data, loaded_dev = load_training_data(config)
        dev_data = dev_data or loaded_dev
    dev_data = dev_data if dev_data is not None else train_data
    model = build_model(config, train_data)
    for u in dev_data:
        model.encode_labels(u)

    optimizer = OPTIMIZERS[config.optimizer](lr=config.lr)
    rng = np.random.default_rng(config.seed)
    entries = []
    report = evaluate_model(model, dev_data)
    entries.append({"epoch": 0, "train_loss": None, "dev": report.to_dict()})
    best_epoch, best_report = 0, report
    best_params = {k: v.copy() for k, v in model.store.values.items()}

    for epoch in range(1, config.epochs + 1):
        losses = []
        for batch in batches(train_data.utterances, config.batch_size, rng):
            tape = nx.Tape()
            loss = model.batch_loss(tape, batch, config.loss_weight)
            nx.backward(tape, loss)
            if config.grad_clip > 0:
                _clip(model.store, config.grad_clip)
            optimizer.step(model.store)
            losses.append(float(loss.value[0, 0]) * len(batch))
        report = evaluate_model(model, dev_data)
        entries.append({"epoch": epoch, "train_loss": sum(losses) / len(train_data),
                        "dev": report.to_dict()})
        log.debug("epoch %d loss %.6f overall %.4f", epoch, entries[-1]["train_loss"],
                  report.overall_acc)
        if report.overall_acc > best_report.overall_acc:
            best_epoch, best_report = epoch, report
            best_params = {k: v.copy() for k, v in model.store.values.items()}
        if config.stop_at_overall and report.overall_acc >= config.stop_at_overall:
            break

    final_params = model.store.values
    model.store.values = best_params
    result = TrainResult(model, entries, best_epoch, best_report, train_data, dev_data, final_params)
    if config.model_out:
        model.save(config.model_out)
    if config.log_out:
        write_log(entries, config.log_out)
    return result


def format_log(entries):
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries)


def write_log(entries, path):
    Path(path).write_text(format_log(entries), encoding="utf-8")


SWEEP_FIELDS = ("lr", "activation", "status", "overall_acc", "slot_f1", "intent_acc", "error")


def lr_sweep(config, lrs, activations=("relu", "elu"), train_data=None, dev_data=None):
    """Train one model per (learning rate, activation); failures become rows too."""
    if not lrs:
        raise ValueError("need at least one learning rate")
    if train_data is None:
        train_data, loaded_dev = load_training_data(config)
        dev_data = dev_data or loaded_dev
    rows = []
    for lr in lrs:
        for act in activations:
            run = config.replace(lr=float(lr), activation=act, model_out="", log_out="")
            row = {"lr": float(lr), "activation": act}
            try:
                rep = train(run, train_data, dev_data).best_report
            except (ArithmeticError, ValueError, FloatingPointError) as exc:
                row.update(status="failed", overall_acc="", slot_f1="", intent_acc="",
                           error=f"{type(exc).__name__}: {exc}")
            else:
                row.update(status="ok", overall_acc=rep.overall_acc, slot_f1=rep.slot_f1,
                           intent_acc=rep.intent_acc, error="")
            rows.append(row)
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def attention_dump(model, tokens):
    """Contextual (n x n) and channel (n x d) weights per layer and stream."""
    tokens = list(tokens)
    layers = []
    for index, trace in enumerate(model.traces(tokens)):
        entry = {"layer": index}
        for stream, block in trace.items():
            entry[stream] = block.to_dict()
        layers.append(entry)
    return {"tokens": tokens, "activation": model.config.activation, "layers": layers}
