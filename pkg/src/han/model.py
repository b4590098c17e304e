"""The full network: embedder, encoder, fusion and decoder over one ParamStore."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .corpus import Utterance
from .decoder import (
    Prediction, crf_nll_node, init_decoder, intent_logits, joint_loss,
    slot_emissions, viterbi,
)
from .embedder import Vocab, embed_utterance, init_params as init_embedder
from .encoder import bind_fusion, bind_layers, dynamic_fuse, init_encoder, init_fusion, run_encoder

MODEL_FORMAT = "han-model"
MODEL_VERSION = 1


@dataclass
class ModelConfig:
    d: int = 128
    d_emb: int = 0          # 0 means "same as d"
    n_layers: int = 2
    activation: str = "elu"
    channel: str = "query"
    d_ff: int = 0           # 0 means 2 * d
    lowercase: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")

    @property
    def emb_dim(self):
        return self.d_emb or self.d

    @property
    def ffn_dim(self):
        return self.d_ff or 2 * self.d


@dataclass
class Forward:
    intent_logits: nx.Node
    emissions: nx.Node
    transitions: nx.Node
    start: nx.Node
    traces: list


class HANModel:
    def __init__(self, config, vocab, intent_labels, slot_labels, store=None, seed=0):
        self.config = config
        self.vocab = vocab
        self.intent_labels = list(intent_labels)
        self.slot_labels = list(slot_labels)
        self._intent_index = {k: i for i, k in enumerate(self.intent_labels)}
        self._slot_index = {k: i for i, k in enumerate(self.slot_labels)}
        if store is None:
            store = nx.ParamStore()
            rng = np.random.default_rng(seed)
            d = config.d
            init_embedder(store, rng, len(vocab), config.emb_dim, d,
                          len(self.intent_labels), len(self.slot_labels))
            init_encoder(store, rng, d, config.n_layers)
            init_fusion(store, rng, d, config.ffn_dim)
            init_decoder(store, rng, d, len(self.intent_labels), len(self.slot_labels))
        self.store = store

    # encoding ---------------------------------------------------------------

    def encode_tokens(self, tokens):
        if self.config.lowercase:
            tokens = [t.lower() for t in tokens]
        return self.vocab.encode(tokens)

    def encode_labels(self, utt):
        try:
            intent = self._intent_index[utt.intent]
            slots = [self._slot_index[s] for s in utt.slots]
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} is not in the model's label inventory") from None
        return intent, slots

    # forward ----------------------------------------------------------------

    def forward(self, tape, tokens):
        if not tokens:
            raise ValueError("cannot run the model on an empty utterance")
        cfg = self.config
        p = lambda name: tape.param(self.store, name)  # noqa: E731
        _, H_I, H_S = embed_utterance(tape, self.store, self.encode_tokens(tokens))
        layers = bind_layers(tape, self.store, cfg.n_layers, cfg.activation, cfg.channel)
        H_I, H_S, Q_I, Q_S, traces = run_encoder(H_I, H_S, layers)
        H_I, H_S = dynamic_fuse(Q_I, H_I, Q_S, H_S, bind_fusion(tape, self.store))
        return Forward(
            intent_logits=intent_logits(H_I, p("decoder.W_intent"), p("decoder.b_intent")),
            emissions=slot_emissions(H_S, p("decoder.W_slot"), p("decoder.b_slot")),
            transitions=p("decoder.transitions"),
            start=p("decoder.start"),
            traces=traces,
        )

    def loss(self, tape, utt, weight=1.0):
        intent, slots = self.encode_labels(utt)
        out = self.forward(tape, utt.tokens)
        crf = crf_nll_node(out.emissions, out.transitions, out.start, slots)
        return joint_loss(out.intent_logits, intent, crf, weight)

    def batch_loss(self, tape, utts, weight=1.0):
        total = None
        for u in utts:
            term = self.loss(tape, u, weight)
            total = term if total is None else nx.add(total, term)
        return nx.scale(total, 1.0 / len(utts))

    def predict(self, tokens):
        out = self.forward(nx.Tape(grad=False), tokens)
        logits = out.intent_logits.value[0]
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        path, score = viterbi(out.emissions.value, out.transitions.value, out.start.value)
        return Prediction(int(probs.argmax()), probs, path, score)

    def predict_utterance(self, tokens):
        pred = self.predict(tokens)
        return Utterance(list(tokens), [self.slot_labels[i] for i in pred.slots],
                         self.intent_labels[pred.intent])

    def traces(self, tokens):
        return self.forward(nx.Tape(grad=False), tokens).traces

    # persistence ------------------------------------------------------------

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": asdict(self.config),
            "vocab": self.vocab.itos,
            "intent_labels": self.intent_labels,
            "slot_labels": self.slot_labels,
            "params": self.store.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError("not a supported model checkpoint")
        vocab = Vocab(doc["vocab"][2:])
        if vocab.itos != doc["vocab"]:
            raise ValueError("checkpoint vocabulary does not start with the reserved tokens")
        return cls(ModelConfig(**doc["config"]), vocab, doc["intent_labels"], doc["slot_labels"],
                   store=nx.ParamStore.from_dict(doc["params"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))
