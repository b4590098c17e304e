"""Self-attentive embedder: token embeddings, a shared BiLSTM and label attention."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from . import numerics as nx

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1


class Vocab:
    """Token <-> index map with PAD at 0 and UNK at 1."""

    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def encode(self, tokens):
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos


def load_word_vectors(path):
    """Read a whitespace-separated ``token v1 v2 ...`` file into a dict of arrays."""
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad vector entry ({exc})") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            vectors[parts[0]] = vec
    return vectors


def init_params(store, rng, vocab_size, d_emb, d, n_intents, n_slots, prefix="embedder"):
    store.add(f"{prefix}.embedding", rng.normal(0.0, 1.0 / math.sqrt(d_emb), (vocab_size, d_emb)))
    for direction in ("fwd", "bwd"):
        p = f"{prefix}.lstm.{direction}"
        store.add(f"{p}.W_x", nx.xavier_uniform(rng, d_emb, 4 * d))
        store.add(f"{p}.W_h", nx.xavier_uniform(rng, d, 4 * d))
        store.add(f"{p}.b", np.zeros((1, 4 * d)))
    store.add(f"{prefix}.proj.W", nx.xavier_uniform(rng, 2 * d, d))
    store.add(f"{prefix}.proj.b", np.zeros((1, d)))
    # label tables are embedding lookups: unit-variance rows give non-uniform
    # label attention from the first step
    store.add(f"{prefix}.intent_labels", rng.normal(0.0, 1.0, (n_intents, d)))
    store.add(f"{prefix}.slot_labels", rng.normal(0.0, 1.0, (n_slots, d)))


def apply_word_vectors(store, vocab, vectors, prefix="embedder"):
    """Overwrite embedding rows for tokens present in ``vectors``; returns the hit count."""
    table = store.value(f"{prefix}.embedding").copy()
    hits = 0
    for tok, idx in vocab.stoi.items():
        vec = vectors.get(tok)
        if vec is None:
            continue
        if vec.size != table.shape[1]:
            raise nx.DimensionError("word vectors", (1, vec.size), table.shape)
        table[idx] = vec
        hits += 1
    store.set(f"{prefix}.embedding", table)
    return hits


def embed_tokens(ids, table):
    """Rows of the embedding ``table`` (a Node) for token indices ``ids``."""
    return nx.take_rows(table, ids)


def lstm(x, W_x, W_h, b, reverse=False):
    """Run a single-direction LSTM over the rows of ``x``; returns n x d states.

    Gate layout along the 4d columns is (input, forget, candidate, output).
    Zero initial hidden and cell state.  With ``reverse`` the sequence is read
    last-to-first and the states are returned in original row order.  The
    whole recurrence is one tape op with a hand-written backward pass;
    :func:`lstm_composed` builds the same function from primitive ops.
    """
    tape = nx._tape_of(x, W_x, W_h, b)
    n, d_in = x.shape
    d = W_h.shape[0]
    if W_x.shape != (d_in, 4 * d) or W_h.shape != (d, 4 * d) or b.shape != (1, 4 * d):
        raise nx.DimensionError("lstm", x.shape, W_x.shape, W_h.shape, b.shape)
    xv, Wx, Wh = x.value, W_x.value, W_h.value
    pre = xv @ Wx + b.value
    order = list(range(n - 1, -1, -1)) if reverse else list(range(n))
    H = np.zeros((n, d))
    C = np.zeros((n, d))
    gates = np.zeros((n, 4 * d))
    prev_h = np.zeros((n, d))
    prev_c = np.zeros((n, d))
    h = np.zeros(d)
    c = np.zeros(d)
    for t in order:
        z = pre[t] + h @ Wh
        i, f, o = expit(z[:d]), expit(z[d:2 * d]), expit(z[3 * d:])
        g = np.tanh(z[2 * d:3 * d])
        prev_h[t], prev_c[t] = h, c
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, g, o])
        H[t], C[t] = h, c

    def vjp(G):
        dpre = np.zeros((n, 4 * d))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros(d)
        dc_next = np.zeros(d)
        for t in reversed(order):
            i, f, g, o = (gates[t, k * d:(k + 1) * d] for k in range(4))
            tc = np.tanh(C[t])
            dh = G[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * prev_c[t] * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ])
            dpre[t] = dz
            dWh += np.outer(prev_h[t], dz)
            dh_next = Wh @ dz
            dc_next = dc * f
        return dpre @ Wx.T, xv.T @ dpre, dWh, dpre.sum(axis=0, keepdims=True)

    return tape.emit("lstm", H, (x, W_x, W_h, b), vjp)


def lstm_composed(x, W_x, W_h, b, reverse=False):
    """:func:`lstm` expressed through primitive tape ops (slow; used as a check)."""
    n = x.shape[0]
    d = W_h.shape[0]
    tape = x.tape
    pre = nx.add(nx.matmul(x, W_x), b)
    h = tape.constant(np.zeros((1, d)))
    c = tape.constant(np.zeros((1, d)))
    states = [None] * n
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        z = nx.add(nx.take_rows(pre, [t]), nx.matmul(h, W_h))
        i = nx.activation(nx.slice_cols(z, 0, d), "sigmoid")
        f = nx.activation(nx.slice_cols(z, d, 2 * d), "sigmoid")
        g = nx.activation(nx.slice_cols(z, 2 * d, 3 * d), "tanh")
        o = nx.activation(nx.slice_cols(z, 3 * d, 4 * d), "sigmoid")
        c = nx.add(nx.hadamard(f, c), nx.hadamard(i, g))
        h = nx.hadamard(o, nx.activation(c, "tanh"))
        states[t] = h
    return nx.concat_rows(*states)


def bilstm_states(x, fwd, bwd):
    """Concatenated [forward | backward] states (n x 2d); ``fwd``/``bwd`` are (W_x, W_h, b)."""
    return nx.concat_cols(lstm(x, *fwd), lstm(x, *bwd, reverse=True))


def bilstm(x, fwd, bwd, proj_W, proj_b):
    """BiLSTM states projected back to the hidden size d."""
    if x.shape[0] < 1:
        raise nx.DimensionError("bilstm: empty sequence", x.shape)
    return nx.add(nx.matmul(bilstm_states(x, fwd, bwd), proj_W), proj_b)


def label_attention(H, labels, return_weights=False):
    """Scaled dot-product attention from hidden states onto label embeddings.

    ``A = softmax(H labels^T / sqrt(d))`` and the output is ``A labels``.
    """
    if H.shape[1] != labels.shape[1]:
        raise nx.DimensionError("label_attention", H.shape, labels.shape)
    d = H.shape[1]
    weights = nx.softmax_rows(nx.scale(nx.matmul(H, nx.transpose(labels)), 1.0 / math.sqrt(d)))
    out = nx.matmul(weights, labels)
    return (out, weights) if return_weights else out


def embed_utterance(tape, store, ids, prefix="embedder"):
    """Full embedder pass for one utterance: returns (H, H_I, H_S)."""
    p = lambda name: tape.param(store, f"{prefix}.{name}")  # noqa: E731
    x = embed_tokens(ids, p("embedding"))
    fwd = (p("lstm.fwd.W_x"), p("lstm.fwd.W_h"), p("lstm.fwd.b"))
    bwd = (p("lstm.bwd.W_x"), p("lstm.bwd.W_h"), p("lstm.bwd.b"))
    H = bilstm(x, fwd, bwd, p("proj.W"), p("proj.b"))
    return H, label_attention(H, p("intent_labels")), label_attention(H, p("slot_labels"))

