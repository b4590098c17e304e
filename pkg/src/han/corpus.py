"""Utterances, BIO corpus files, the synthetic generator and SLU metrics.

File grammar (UTF-8): each utterance is a run of ``token<TAB>slot`` lines,
then ``#intent=<label>``, then a blank line.  Prediction files use the same
grammar.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedder import Vocab

_SLOT_RE = re.compile(r"^(O|[BI]-\S+)$")
INTENT_PREFIX = "#intent="


class CorpusFormatError(ValueError):
    def __init__(self, message, path=None, lineno=None):
        where = f"{path}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno


@dataclass
class Utterance:
    tokens: list
    slots: list
    intent: str

    def __post_init__(self):
        if len(self.tokens) != len(self.slots):
            raise CorpusFormatError(
                f"{len(self.tokens)} tokens but {len(self.slots)} slot labels")
        for label in self.slots:
            if not _SLOT_RE.match(label):
                raise CorpusFormatError(f"bad BIO label {label!r}")

    def __len__(self):
        return len(self.tokens)


@dataclass
class Dataset:
    utterances: list
    vocab: Vocab = field(default_factory=Vocab)
    slot_labels: list = field(default_factory=list)
    intent_labels: list = field(default_factory=list)

    @classmethod
    def from_utterances(cls, utterances, lowercase=False):
        vocab = Vocab()
        slots, intents = set(), set()
        for u in utterances:
            for tok in u.tokens:
                vocab.add(tok.lower() if lowercase else tok)
            slots.update(u.slots)
            intents.add(u.intent)
        types = {label[2:] for label in slots if label != "O"}
        slot_labels = ["O"] + sorted(f"{p}-{t}" for t in types for p in "BI")
        return cls(list(utterances), vocab, slot_labels, sorted(intents))

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]


def parse_conll(text, path=None):
    """Parse the corpus grammar from a string into a list of utterances."""
    utterances = []
    tokens, slots = [], []
    block_start = None
    intent = None

    def close(lineno):
        nonlocal tokens, slots, intent, block_start
        if block_start is None:
            return
        if intent is None:
            raise CorpusFormatError("utterance block has no #intent= line", path, lineno)
        if not tokens:
            raise CorpusFormatError("utterance block has no tokens", path, block_start)
        try:
            utterances.append(Utterance(tokens, slots, intent))
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), path, block_start) from None
        tokens, slots, intent, block_start = [], [], None, None

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r")
        if line.strip() == "":
            close(lineno)
            continue
        if block_start is None:
            block_start = lineno
        if line.startswith(INTENT_PREFIX):
            if intent is not None:
                raise CorpusFormatError("second #intent= line in one utterance", path, lineno)
            intent = line[len(INTENT_PREFIX):].strip()
            if not intent:
                raise CorpusFormatError("empty intent label", path, lineno)
            continue
        if intent is not None:
            raise CorpusFormatError("token line after #intent= (missing blank line?)", path, lineno)
        if "\t" not in line:
            raise CorpusFormatError(f"expected 'token<TAB>slot', got {line!r}", path, lineno)
        token, slot = line.split("\t", 1)
        if not token or not _SLOT_RE.match(slot):
            raise CorpusFormatError(f"bad token/slot pair {line!r}", path, lineno)
        tokens.append(token)
        slots.append(slot)
    close(len(lines) + 1)
    return utterances


def load_conll(path, lowercase=False):
    path = Path(path)
    utts = parse_conll(path.read_text(encoding="utf-8"), path=str(path))
    if lowercase:
        utts = [Utterance([t.lower() for t in u.tokens], u.slots, u.intent) for u in utts]
    return Dataset.from_utterances(utts)


def format_conll(utterances):
    out = []
    for u in utterances:
        out.extend(f"{t}\t{s}" for t, s in zip(u.tokens, u.slots))
        out.append(f"{INTENT_PREFIX}{u.intent}")
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def write_conll(utterances, path):
    Path(path).write_text(format_conll(utterances), encoding="utf-8")


# Synthetic corpus ---------------------------------------------------------

_FILLERS = ["please", "can", "you", "now", "the", "a", "for", "me", "i", "want"]
_LINKS = ["with", "at", "in", "on"]


def gen_synthetic(seed, n_utts, n_intents, n_slot_types, max_len=10):
    """Template corpus where labels are functions of keyword tokens.

    Every intent owns two trigger words and every slot type owns a small
    value lexicon, so the labels are recoverable from the tokens alone.
    Slot phrases are separated by link words so spans never touch.
    """
    if min(n_utts, n_intents, n_slot_types) < 1:
        raise ValueError("all counts must be at least 1")
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    rng = np.random.default_rng(seed)
    triggers = {f"INTENT_{k}": [f"act{k}a", f"act{k}b"] for k in range(n_intents)}
    lexicon = {f"TYPE{j}": [f"val{j}{c}" for c in "abcd"] for j in range(n_slot_types)}
    intents, types = sorted(triggers), sorted(lexicon)
    utterances = []
    for _ in range(n_utts):
        intent = intents[rng.integers(len(intents))]
        tokens = [_FILLERS[rng.integers(len(_FILLERS))], triggers[intent][rng.integers(2)]]
        slots = ["O", "O"]
        n_spans = int(rng.integers(0, 3))
        for _ in range(n_spans):
            span_len = int(rng.integers(1, 3))
            if len(tokens) + 1 + span_len > max_len:
                break
            stype = types[rng.integers(len(types))]
            tokens.append(_LINKS[rng.integers(len(_LINKS))])
            slots.append("O")
            words = lexicon[stype]
            for pos in range(span_len):
                tokens.append(words[rng.integers(len(words))])
                slots.append(("B-" if pos == 0 else "I-") + stype)
        if len(tokens) < max_len and rng.random() < 0.5:
            tokens.append(_FILLERS[rng.integers(len(_FILLERS))])
            slots.append("O")
        utterances.append(Utterance(tokens, slots, intent))
    return Dataset.from_utterances(utterances)


# Metrics ----------------------------------------------------------------

def bio_spans(labels):
    """Spans as ``(start, end, type)`` with inclusive ``end``.

    An ``I-`` label that does not continue a span of the same type opens a new
    span.
    """
    spans = []
    start, kind = None, None
    for i, label in enumerate(labels):
        if label == "O":
            prefix, typ = "O", None
        else:
            prefix, typ = label[0], label[2:]
        continues = prefix == "I" and kind == typ and start is not None
        if start is not None and not continues:
            spans.append((start, i - 1, kind))
            start, kind = None, None
        if prefix in ("B", "I") and not continues:
            start, kind = i, typ
    if start is not None:
        spans.append((start, len(labels) - 1, kind))
    return spans


def is_well_formed(labels):
    """True when every ``I-`` label continues a span of the same type."""
    prev = "O"
    for label in labels:
        if label.startswith("I-") and prev[2:] != label[2:]:
            return False
        prev = label
    return True


@dataclass
class EvalReport:
    slot_f1: float
    intent_acc: float
    overall_acc: float
    tp: int
    fp: int
    fn: int
    n: int

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    def to_dict(self):
        return {
            "slot_f1": self.slot_f1, "intent_acc": self.intent_acc,
            "overall_acc": self.overall_acc, "tp": self.tp, "fp": self.fp,
            "fn": self.fn, "n": self.n,
        }


def _slot_seqs(items):
    return [u.slots if isinstance(u, Utterance) else list(u) for u in items]


def span_counts(gold, pred):
    """``(tp, fp, fn)`` over exact span matches for aligned slot sequences."""
    gold, pred = _slot_seqs(gold), _slot_seqs(pred)
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold vs {len(pred)} predicted utterances")
    tp = fp = fn = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ValueError(f"utterance {i}: {len(g)} gold vs {len(p)} predicted labels")
        gs, ps = set(bio_spans(g)), set(bio_spans(p))
        hit = len(gs & ps)
        tp += hit
        fp += len(ps) - hit
        fn += len(gs) - hit
    return tp, fp, fn


def slot_f1(gold, pred):
    tp, fp, fn = span_counts(gold, pred)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def intent_acc(gold, pred):
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold vs {len(pred)} predicted utterances")
    if not gold:
        return 0.0
    return sum(g.intent == p.intent for g, p in zip(gold, pred)) / len(gold)


def overall_acc(gold, pred):
    """Fraction of utterances whose intent and full slot sequence are both right."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold vs {len(pred)} predicted utterances")
    if not gold:
        return 0.0
    return sum(g.intent == p.intent and list(g.slots) == list(p.slots)
               for g, p in zip(gold, pred)) / len(gold)


def evaluate(gold, pred):
    """Compare predicted utterances against gold ones."""
    gold, pred = list(gold), list(pred)
    tp, fp, fn = span_counts(gold, pred)
    return EvalReport(
        slot_f1=slot_f1(gold, pred),
        intent_acc=intent_acc(gold, pred),
        overall_acc=overall_acc(gold, pred),
        tp=tp, fp=fp, fn=fn, n=len(gold),
    )


def batches(items, batch_size, rng=None):
    """Split ``items`` into consecutive batches, shuffled first when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    return [[items[i] for i in order[s:s + batch_size]] for s in range(0, len(items), batch_size)]
