"""Higher-order attention encoder and the dynamic feature fusion layer.

Each encoder layer projects both streams to queries, keys and values and
lets each stream query the other one through a BiLinear attention block,
followed by a residual connection and layer normalisation.  The fusion layer
gates the last layer's outputs against their queries, mixes the two streams
and updates each one through a shared feed-forward network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .bilinear import BlockParams, f_bilinear, init_block

STREAMS = ("intent", "slot")


@dataclass
class StreamParams:
    W_Q: nx.Node
    W_K: nx.Node
    W_V: nx.Node
    block: BlockParams
    ln_gain: nx.Node
    ln_bias: nx.Node


@dataclass
class LayerParams:
    intent: StreamParams
    slot: StreamParams


@dataclass
class FusionParams:
    W_I: nx.Node
    b_I: nx.Node
    W_S: nx.Node
    b_S: nx.Node
    ffn_W1: nx.Node
    ffn_b1: nx.Node
    ffn_W2: nx.Node
    ffn_b2: nx.Node
    ln_I_gain: nx.Node
    ln_I_bias: nx.Node
    ln_S_gain: nx.Node
    ln_S_bias: nx.Node


def init_encoder(store, rng, d, n_layers, prefix="encoder"):
    if n_layers < 1:
        raise ValueError("encoder needs at least one layer")
    for layer in range(n_layers):
        for stream in STREAMS:
            p = f"{prefix}.layer{layer}.{stream}"
            for w in ("W_Q", "W_K", "W_V"):
                store.add(f"{p}.{w}", nx.xavier_uniform(rng, d, d))
            init_block(store, rng, f"{p}.block", d)
            store.add(f"{p}.ln.gain", np.ones((1, d)))
            store.add(f"{p}.ln.bias", np.zeros((1, d)))


def init_fusion(store, rng, d, d_ff=None, prefix="fusion"):
    d_ff = d_ff or 2 * d
    store.add(f"{prefix}.W_I", nx.xavier_uniform(rng, 2 * d, d))
    store.add(f"{prefix}.b_I", np.zeros((1, d)))
    store.add(f"{prefix}.W_S", nx.xavier_uniform(rng, 2 * d, d))
    store.add(f"{prefix}.b_S", np.zeros((1, d)))
    store.add(f"{prefix}.ffn.W1", nx.xavier_uniform(rng, d, d_ff))
    store.add(f"{prefix}.ffn.b1", np.zeros((1, d_ff)))
    store.add(f"{prefix}.ffn.W2", nx.xavier_uniform(rng, d_ff, d))
    store.add(f"{prefix}.ffn.b2", np.zeros((1, d)))
    for s in ("I", "S"):
        store.add(f"{prefix}.ln_{s}.gain", np.ones((1, d)))
        store.add(f"{prefix}.ln_{s}.bias", np.zeros((1, d)))


def bind_layers(tape, store, n_layers, act="elu", channel="query", prefix="encoder"):
    layers = []
    for layer in range(n_layers):
        streams = {}
        for stream in STREAMS:
            p = f"{prefix}.layer{layer}.{stream}"
            streams[stream] = StreamParams(
                W_Q=tape.param(store, f"{p}.W_Q"),
                W_K=tape.param(store, f"{p}.W_K"),
                W_V=tape.param(store, f"{p}.W_V"),
                block=BlockParams.bind(tape, store, f"{p}.block", act=act, channel=channel),
                ln_gain=tape.param(store, f"{p}.ln.gain"),
                ln_bias=tape.param(store, f"{p}.ln.bias"),
            )
        layers.append(LayerParams(**streams))
    return layers


def bind_fusion(tape, store, prefix="fusion"):
    p = lambda name: tape.param(store, f"{prefix}.{name}")  # noqa: E731
    return FusionParams(
        W_I=p("W_I"), b_I=p("b_I"), W_S=p("W_S"), b_S=p("b_S"),
        ffn_W1=p("ffn.W1"), ffn_b1=p("ffn.b1"), ffn_W2=p("ffn.W2"), ffn_b2=p("ffn.b2"),
        ln_I_gain=p("ln_I.gain"), ln_I_bias=p("ln_I.bias"),
        ln_S_gain=p("ln_S.gain"), ln_S_bias=p("ln_S.bias"),
    )


def encoder_layer(H_I, H_S, layer):
    """One cross-stream sublayer.

    The intent stream attends with (K_S, V_S, Q_I), the slot stream with
    (K_I, V_I, Q_S).  Returns ``(H_I', H_S', Q_I, Q_S, traces)`` where
    ``traces`` maps stream name to its :class:`BlockTrace`.
    """
    if H_I.shape != H_S.shape:
        raise nx.DimensionError("encoder_layer: streams", H_I.shape, H_S.shape)
    pi, ps = layer.intent, layer.slot
    Q_I, K_I, V_I = (nx.matmul(H_I, W) for W in (pi.W_Q, pi.W_K, pi.W_V))
    Q_S, K_S, V_S = (nx.matmul(H_S, W) for W in (ps.W_Q, ps.W_K, ps.W_V))
    att_I, trace_I = f_bilinear(K_S, V_S, Q_I, pi.block)
    att_S, trace_S = f_bilinear(K_I, V_I, Q_S, ps.block)
    out_I = nx.layer_norm(nx.add(H_I, att_I), pi.ln_gain, pi.ln_bias)
    out_S = nx.layer_norm(nx.add(H_S, att_S), ps.ln_gain, ps.ln_bias)
    return out_I, out_S, Q_I, Q_S, {"intent": trace_I, "slot": trace_S}


def run_encoder(H_I, H_S, layers):
    """Apply ``layers`` in sequence; the last layer's queries are kept for fusion.

    Returns ``(H_I, H_S, Q_I, Q_S, traces)`` with one trace dict per layer.
    """
    if not layers:
        raise ValueError("encoder needs at least one layer")
    traces = []
    for layer in layers:
        H_I, H_S, Q_I, Q_S, trace = encoder_layer(H_I, H_S, layer)
        traces.append(trace)
    return H_I, H_S, Q_I, Q_S, traces


def ffn(x, fp):
    hidden = nx.activation(nx.add(nx.matmul(x, fp.ffn_W1), fp.ffn_b1), "relu")
    return nx.add(nx.matmul(hidden, fp.ffn_W2), fp.ffn_b2)


def fusion_gates(Q_I, H_I, Q_S, H_S, fp):
    alpha_I = nx.activation(nx.add(nx.matmul(nx.concat_cols(Q_I, H_I), fp.W_I), fp.b_I), "sigmoid")
    alpha_S = nx.activation(nx.add(nx.matmul(nx.concat_cols(Q_S, H_S), fp.W_S), fp.b_S), "sigmoid")
    return alpha_I, alpha_S


def dynamic_fuse(Q_I, H_I, Q_S, H_S, fp):
    """Gate, mix and update both streams; returns ``(H_I_hat, H_S_hat)``."""
    shape = H_I.shape
    for m in (Q_I, Q_S, H_S):
        if m.shape != shape:
            raise nx.DimensionError("dynamic_fuse", shape, m.shape)
    alpha_I, alpha_S = fusion_gates(Q_I, H_I, Q_S, H_S, fp)
    H_IS = nx.add(nx.hadamard(alpha_I, H_I), nx.hadamard(alpha_S, H_S))
    update = ffn(H_IS, fp)
    H_I_hat = nx.layer_norm(nx.add(update, H_I), fp.ln_I_gain, fp.ln_I_bias)
    H_S_hat = nx.layer_norm(nx.add(update, H_S), fp.ln_S_gain, fp.ln_S_bias)
    return H_I_hat, H_S_hat
