"""Intent classification head and linear-chain CRF slot tagger.

A label path ``y`` of length n scores
``start[y_0] + sum_i O[i, y_i] + sum_{i>0} T[y_{i-1}, y_i]``; there are no
stop transitions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx


@dataclass
class Prediction:
    intent: int
    intent_probs: np.ndarray
    slots: list
    path_score: float


def init_decoder(store, rng, d, n_intents, n_slots, prefix="decoder"):
    if n_intents < 2:
        raise ValueError("need at least two intent labels")
    if n_slots < 1:
        raise ValueError("need at least one slot label")
    store.add(f"{prefix}.W_intent", nx.xavier_uniform(rng, d, n_intents))
    store.add(f"{prefix}.b_intent", np.zeros((1, n_intents)))
    store.add(f"{prefix}.W_slot", nx.xavier_uniform(rng, d, n_slots))
    store.add(f"{prefix}.b_slot", np.zeros((1, n_slots)))
    store.add(f"{prefix}.transitions", np.zeros((n_slots, n_slots)))
    store.add(f"{prefix}.start", np.zeros((1, n_slots)))


def intent_logits(H, W, b):
    """Logits from the column-wise max over the rows of ``H``."""
    return nx.add(nx.matmul(nx.max_rows(H), W), b)


def intent_head(H, W, b):
    """Distribution over intents (1 x |I| node)."""
    return nx.softmax_rows(intent_logits(H, W, b))


def slot_emissions(H, W, b):
    return nx.add(nx.matmul(H, W), b)


def logsumexp(x, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


def _start_vector(start, n_labels):
    if start is None:
        return np.zeros(n_labels)
    return np.asarray(start, dtype=np.float64).reshape(-1)


def _check_crf(emissions, transitions):
    O = np.asarray(emissions, dtype=np.float64)
    T = np.asarray(transitions, dtype=np.float64)
    if O.ndim != 2 or O.shape[0] < 1:
        raise nx.DimensionError("crf: emissions must be n x L with n >= 1", O.shape)
    if T.shape != (O.shape[1], O.shape[1]):
        raise nx.DimensionError("crf: transitions", O.shape, T.shape)
    return O, T


def _forward(O, T, start):
    n, L = O.shape
    alpha = np.empty((n, L))
    alpha[0] = start + O[0]
    for t in range(1, n):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + T, axis=0) + O[t]
    return alpha


def _backward(O, T):
    n, L = O.shape
    beta = np.zeros((n, L))
    for t in range(n - 2, -1, -1):
        beta[t] = logsumexp(T + (O[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def crf_log_partition(emissions, transitions, start=None):
    """Log of the summed exponentiated scores of every label path."""
    O, T = _check_crf(emissions, transitions)
    alpha = _forward(O, T, _start_vector(start, O.shape[1]))
    return float(logsumexp(alpha[-1]))


def path_score(emissions, transitions, labels, start=None):
    O, T = _check_crf(emissions, transitions)
    labels = _check_labels(labels, O.shape)
    s = _start_vector(start, O.shape[1])[labels[0]] + O[np.arange(len(labels)), labels].sum()
    return float(s + T[labels[:-1], labels[1:]].sum())


def _check_labels(labels, shape):
    labels = np.asarray(labels, dtype=np.intp)
    n, L = shape
    if labels.shape != (n,):
        raise nx.DimensionError("crf: gold labels", labels.shape, shape)
    if labels.size and (labels.min() < 0 or labels.max() >= L):
        raise IndexError(f"crf: label out of range for {L} labels")
    return labels


def crf_marginals(emissions, transitions, start=None):
    """Per-position and pairwise label posteriors: ``(unary n x L, pairwise (n-1) x L x L)``."""
    O, T = _check_crf(emissions, transitions)
    alpha = _forward(O, T, _start_vector(start, O.shape[1]))
    beta = _backward(O, T)
    logz = logsumexp(alpha[-1])
    unary = np.exp(alpha + beta - logz)
    pair = np.exp(alpha[:-1, :, None] + T[None] + (O[1:] + beta[1:])[:, None, :] - logz)
    return unary, pair


def crf_nll(emissions, transitions, gold, start=None):
    """Negative log-likelihood of ``gold`` (plain-array version).

    Clamped at zero so rounding cannot produce a tiny negative loss.
    """
    nll = crf_log_partition(emissions, transitions, start) - path_score(
        emissions, transitions, gold, start)
    return max(nll, 0.0)


def crf_nll_node(O, T, start, gold):
    """Tape op for the CRF negative log-likelihood of ``gold`` (returns 1 x 1).

    The gradient is the expected feature count minus the gold count, computed
    from forward-backward marginals.
    """
    Ov, Tv = _check_crf(O.value, T.value)
    gold = _check_labels(gold, Ov.shape)
    sv = start.value.reshape(-1)
    if sv.shape != (Ov.shape[1],):
        raise nx.DimensionError("crf: start", start.shape, Ov.shape)
    unary, pair = crf_marginals(Ov, Tv, sv)
    loss = crf_log_partition(Ov, Tv, sv) - path_score(Ov, Tv, gold, sv)
    n = len(gold)

    def vjp(g):
        g = g[0, 0]
        dO = unary.copy()
        dO[np.arange(n), gold] -= 1.0
        dT = pair.sum(axis=0)
        np.add.at(dT, (gold[:-1], gold[1:]), -1.0)
        ds = unary[0].copy()
        ds[gold[0]] -= 1.0
        return g * dO, g * dT, g * ds[None, :]

    return O.tape.emit("crf_nll", np.array([[max(loss, 0.0)]]), (O, T, start), vjp)


def viterbi(emissions, transitions, start=None):
    """Highest-scoring label path and its score.

    Ties go to the smaller label index, both in back-pointers and at the end.
    """
    O, T = _check_crf(emissions, transitions)
    n, L = O.shape
    score = _start_vector(start, L) + O[0]
    back = np.zeros((n, L), dtype=np.intp)
    for t in range(1, n):
        cand = score[:, None] + T
        back[t] = cand.argmax(axis=0)
        score = cand[back[t], np.arange(L)] + O[t]
    best = int(score.argmax())
    path = [best]
    for t in range(n - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    path.reverse()
    return path, float(score.max())


def joint_loss(logits, gold_intent, crf_loss, weight=1.0):
    """Intent cross-entropy plus ``weight`` times the CRF loss (1 x 1 node)."""
    if weight < 0:
        raise ValueError("loss weight must be non-negative")
    ce = nx.cross_entropy(logits, gold_intent)
    if weight == 0:
        return ce
    return nx.add(ce, nx.scale(crf_loss, weight))
