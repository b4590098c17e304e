"""BiLinear attention block.

Low-rank bilinear pooling of each (query, key) pair drives two attention
distributions: a contextual softmax over key positions and a channel gate
obtained by squeeze-excitation over the transformed pooled keys.  The gated,
contextually weighted sum of bilinear (query, value) pairs is the block output.

Weight matrices follow the column-vector convention ``W @ x``; with row-major
inputs this is computed as ``X @ W.T``.

Layout used by :func:`f_bilinear`: the pairwise tensors for ``n_q`` queries
and ``n_kv`` keys are stored as ``(n_q * n_kv) x d`` matrices whose row
``t * n_kv + i`` holds the (query t, key i) entry.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import numerics as nx

POOL_ACTIVATIONS = ("relu", "elu", "exp")
CHANNEL_MODES = ("query", "shared")
BLOCK_WEIGHTS = ("W_k", "W_qk", "W_Bk", "W_b", "W_e", "W_v", "W_qv")


@dataclass
class BlockParams:
    W_k: nx.Node
    W_qk: nx.Node
    W_Bk: nx.Node
    W_b: nx.Node
    W_e: nx.Node
    W_v: nx.Node
    W_qv: nx.Node
    act: str = "elu"
    channel: str = "query"

    def __post_init__(self):
        if self.act not in POOL_ACTIVATIONS:
            raise ValueError(f"pooling activation must be one of {POOL_ACTIVATIONS}, got {self.act!r}")
        if self.channel not in CHANNEL_MODES:
            raise ValueError(f"channel mode must be one of {CHANNEL_MODES}, got {self.channel!r}")
        d = self.W_k.shape[0]
        for name in BLOCK_WEIGHTS:
            want = (1, d) if name == "W_b" else (d, d)
            if getattr(self, name).shape != want:
                raise nx.DimensionError(f"BlockParams.{name}", getattr(self, name).shape, want)

    @property
    def d(self):
        return self.W_k.shape[0]

    @classmethod
    def bind(cls, tape, store, prefix, act="elu", channel="query"):
        return cls(*(tape.param(store, f"{prefix}.{w}") for w in BLOCK_WEIGHTS),
                   act=act, channel=channel)


def init_block(store, rng, prefix, d):
    for name in BLOCK_WEIGHTS:
        rows = 1 if name == "W_b" else d
        store.add(f"{prefix}.{name}", nx.xavier_uniform(rng, rows, d))


@dataclass
class BlockTrace:
    """Intermediate quantities of one :func:`f_bilinear` call (plain arrays).

    ``contextual`` is n_q x n_kv, ``channel`` is n_q x d; ``bilinear`` and
    ``transformed`` are n_q x n_kv x d.
    """

    contextual: np.ndarray
    channel: np.ndarray
    bilinear: np.ndarray
    transformed: np.ndarray

    def to_dict(self):
        return {"contextual": self.contextual.tolist(), "channel": self.channel.tolist()}


@lru_cache(maxsize=256)
def _pair_layout(n_q, n_kv):
    q_rows = np.repeat(np.arange(n_q), n_kv)
    kv_rows = np.tile(np.arange(n_kv), n_q)
    # segment-mean operator: row t averages pair rows t*n_kv .. t*n_kv + n_kv - 1
    seg = np.kron(np.eye(n_q), np.full((1, n_kv), 1.0 / n_kv))
    for arr in (q_rows, kv_rows, seg):
        arr.flags.writeable = False
    return q_rows, kv_rows, seg


def _linear(X, W):
    return nx.matmul(X, nx.transpose(W))


def bilinear_pool(a, b, Wa, Wb, act):
    """``act(Wa a) * act(Wb b)`` row by row; ``a`` and ``b`` have matching rows."""
    if act not in POOL_ACTIVATIONS:
        raise ValueError(f"pooling activation must be one of {POOL_ACTIVATIONS}, got {act!r}")
    return nx.hadamard(nx.activation(_linear(a, Wa), act), nx.activation(_linear(b, Wb), act))


def _repeat_query(q, n):
    if q.shape[0] != 1:
        raise nx.DimensionError("query must be a single 1 x d row", q.shape)
    return nx.take_rows(q, np.zeros(n, dtype=np.intp))


def contextual_attention(q, K, params):
    """Softmax weights over the rows of ``K`` for a single query row ``q``.

    Returns ``(beta_s, B_prime)`` with ``beta_s`` 1 x n and ``B_prime`` the
    ReLU-transformed pooled keys (n x d).
    """
    n = K.shape[0]
    if n < 1:
        raise nx.DimensionError("contextual_attention: no keys", K.shape)
    Bk = bilinear_pool(K, _repeat_query(q, n), params.W_k, params.W_qk, params.act)
    B_prime = nx.activation(_linear(Bk, params.W_Bk), "relu")
    logits = nx.transpose(_linear(B_prime, params.W_b))
    return nx.softmax_rows(logits), B_prime


def channel_attention(B_prime, W_e):
    """Sigmoid gate over channels from the mean of ``B_prime`` rows (1 x d)."""
    return nx.activation(_linear(nx.mean_rows(B_prime), W_e), "sigmoid")


def attend(q, K, V, params):
    """Attended value for one query: ``beta_c * sum_i beta_s[i] * B_v[i]``.

    Returns ``(v_hat, trace)`` where ``trace`` holds the 1 x n contextual
    weights and the 1 x d channel weights as arrays.
    """
    if K.shape != V.shape:
        raise nx.DimensionError("attend: K and V", K.shape, V.shape)
    beta_s, B_prime = contextual_attention(q, K, params)
    beta_c = channel_attention(B_prime, params.W_e)
    Bv = bilinear_pool(V, _repeat_query(q, V.shape[0]), params.W_v, params.W_qv, params.act)
    v_hat = nx.hadamard(beta_c, nx.matmul(beta_s, Bv))
    return v_hat, {"contextual": beta_s.value, "channel": beta_c.value}


def f_bilinear(K, V, Q, params):
    """Apply :func:`attend` for every row of ``Q``; returns ``(V_hat, BlockTrace)``.

    Vectorised over queries.  In ``shared`` channel mode one gate is computed
    from all queries' transformed pooled keys and applied to every row.
    """
    if K.shape != V.shape:
        raise nx.DimensionError("f_bilinear: K and V", K.shape, V.shape)
    if Q.shape[1] != K.shape[1]:
        raise nx.DimensionError("f_bilinear: Q and K", Q.shape, K.shape)
    n_q, n_kv, d = Q.shape[0], K.shape[0], K.shape[1]
    if n_q < 1 or n_kv < 1:
        raise nx.DimensionError("f_bilinear: empty input", Q.shape, K.shape)
    act = params.act
    q_rows, kv_rows, seg = _pair_layout(n_q, n_kv)

    Kp = nx.activation(_linear(K, params.W_k), act)
    Qk = nx.activation(_linear(Q, params.W_qk), act)
    Bk = nx.hadamard(nx.take_rows(Kp, kv_rows), nx.take_rows(Qk, q_rows))
    B_prime = nx.activation(_linear(Bk, params.W_Bk), "relu")
    logits = nx.reshape(_linear(B_prime, params.W_b), n_q, n_kv)
    beta_s = nx.softmax_rows(logits)

    if params.channel == "query":
        squeezed = nx.matmul(seg, B_prime)
    else:
        squeezed = nx.take_rows(nx.mean_rows(B_prime), np.zeros(n_q, dtype=np.intp))
    beta_c = nx.activation(_linear(squeezed, params.W_e), "sigmoid")

    Vp = nx.activation(_linear(V, params.W_v), act)
    Qv = nx.activation(_linear(Q, params.W_qv), act)
    Bv = nx.hadamard(nx.take_rows(Vp, kv_rows), nx.take_rows(Qv, q_rows))
    weighted = nx.row_scale(Bv, nx.reshape(beta_s, n_q * n_kv, 1))
    V_hat = nx.hadamard(beta_c, nx.scale(nx.matmul(seg, weighted), n_kv))

    trace = BlockTrace(
        contextual=beta_s.value.copy(),
        channel=beta_c.value.copy(),
        bilinear=Bk.value.reshape(n_q, n_kv, d).copy(),
        transformed=B_prime.value.reshape(n_q, n_kv, d).copy(),
    )
    return V_hat, trace
