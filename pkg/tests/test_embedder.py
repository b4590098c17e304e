import numpy as np
import pytest
from scipy.special import expit

from han import numerics as nx
from han.embedder import (
    PAD_ID, UNK_ID, Vocab, apply_word_vectors, bilstm, bilstm_states, embed_tokens, embed_utterance,
    init_params, label_attention, load_word_vectors, lstm, lstm_composed,
)
from han.gradcheck import check_gradients


def oracle_lstm(x, W_x, W_h, b):
    """Forward LSTM written out step by step."""
    d = W_h.shape[0]
    h, c = np.zeros(d), np.zeros(d)
    out = []
    for row in x:
        z = row @ W_x + h @ W_h + b[0]
        i, f, g, o = expit(z[:d]), expit(z[d:2 * d]), np.tanh(z[2 * d:3 * d]), expit(z[3 * d:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


def random_lstm(rng, d_in, d):
    return rng.normal(size=(d_in, 4 * d)) * 0.5, rng.normal(size=(d, 4 * d)) * 0.5, rng.normal(size=(1, 4 * d)) * 0.1


def test_vocab_reserved_indices():
    v = Vocab(["play", "song", "play"])
    assert v.encode(["<pad>", "<unk>", "play", "song", "never"]) == [PAD_ID, UNK_ID, 2, 3, UNK_ID]
    assert v.decode([2, 3]) == ["play", "song"]
    assert len(v) == 4


def test_embed_tokens_rows():
    table = np.arange(12.0).reshape(4, 3)
    tape = nx.Tape()
    out = embed_tokens([0, 2, 2, 1, 3], tape.constant(table)).value
    assert out.shape[0] == 5
    np.testing.assert_array_equal(out[0], table[0])
    np.testing.assert_array_equal(out[1:3], table[[2, 2]])


def test_embed_tokens_out_of_range():
    with pytest.raises(IndexError):
        embed_tokens([4], nx.Tape().constant(np.zeros((4, 3))))


def test_word_vectors_loaded_into_table(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("the 0.5 -1.25 2.0\nsong 1 2 3\nunused 9 9 9\n", encoding="utf-8")
    # parse the fixture independently of the loader
    want = {line.split()[0]: np.array(list(map(float, line.split()[1:])))
            for line in path.read_text().splitlines()}
    vectors = load_word_vectors(path)
    store = nx.ParamStore()
    vocab = Vocab(["the", "song", "play"])
    init_params(store, np.random.default_rng(0), len(vocab), 3, 2, 2, 3)
    assert apply_word_vectors(store, vocab, vectors) == 2
    table = store.value("embedder.embedding")
    np.testing.assert_array_equal(table[vocab.stoi["the"]], want["the"])
    np.testing.assert_array_equal(table[vocab.stoi["song"]], want["song"])


def test_word_vectors_ragged_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("a 1 2\nb 1 2 3\n")
    with pytest.raises(ValueError, match=":2:"):
        load_word_vectors(path)


def test_lstm_matches_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 3))
    W_x, W_h, b = random_lstm(rng, 3, 4)
    tape = nx.Tape()
    H = lstm(tape.constant(x), tape.constant(W_x), tape.constant(W_h), tape.constant(b)).value
    np.testing.assert_allclose(H, oracle_lstm(x, W_x, W_h, b), atol=1e-14)
    R = lstm(tape.constant(x), tape.constant(W_x), tape.constant(W_h), tape.constant(b), reverse=True).value
    np.testing.assert_allclose(R, oracle_lstm(x[::-1], W_x, W_h, b)[::-1], atol=1e-14)


def test_fused_lstm_matches_composed_values_and_gradients():
    rng = np.random.default_rng(2)
    store = nx.ParamStore()
    store.add("x", rng.normal(size=(4, 3)))
    for name, v in zip(("W_x", "W_h", "b"), random_lstm(rng, 3, 2)):
        store.add(name, v)
    w = rng.normal(size=(4, 2))
    grads = {}
    for fn in (lstm, lstm_composed):
        for reverse in (False, True):
            tape = nx.Tape()
            p = [tape.param(store, n) for n in ("x", "W_x", "W_h", "b")]
            out = fn(*p, reverse=reverse)
            nx.backward(tape, nx.sum_all(nx.hadamard(out, w)))
            grads[fn.__name__, reverse] = (out.value, {n: g.copy() for n, g in store.grads.items()})
    for reverse in (False, True):
        fused, composed = grads["lstm", reverse], grads["lstm_composed", reverse]
        np.testing.assert_allclose(fused[0], composed[0], atol=1e-14)
        for name in fused[1]:
            np.testing.assert_allclose(fused[1][name], composed[1][name], atol=1e-12)


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_gradient(reverse):
    rng = np.random.default_rng(3)
    store = nx.ParamStore()
    store.add("x", rng.normal(size=(3, 2)))
    for name, v in zip(("W_x", "W_h", "b"), random_lstm(rng, 2, 3)):
        store.add(name, v)
    w = rng.normal(size=(3, 3))

    def loss(tape):
        p = [tape.param(store, n) for n in ("x", "W_x", "W_h", "b")]
        return nx.sum_all(nx.hadamard(lstm(*p, reverse=reverse), w))

    errs = check_gradients(loss, store)
    assert max(errs.values()) < 1e-6, errs


def bilstm_args(tape, rng, d_in, d):
    fwd = tuple(tape.constant(m) for m in random_lstm(rng, d_in, d))
    bwd = tuple(tape.constant(m) for m in random_lstm(rng, d_in, d))
    proj = tape.constant(rng.normal(size=(2 * d, d))), tape.constant(rng.normal(size=(1, d)))
    return fwd, bwd, proj


def test_bilstm_single_step_uses_same_input():
    rng = np.random.default_rng(4)
    tape = nx.Tape()
    fwd, bwd, (W, b) = bilstm_args(tape, rng, 3, 2)
    x = rng.normal(size=(1, 3))
    H = bilstm(tape.constant(x), fwd, bwd, W, b).value
    f = oracle_lstm(x, *(m.value for m in fwd))
    r = oracle_lstm(x, *(m.value for m in bwd))
    np.testing.assert_allclose(H, np.concatenate([f, r], axis=1) @ W.value + b.value, atol=1e-14)


def test_bilstm_zero_weights_give_zero_output():
    tape = nx.Tape()
    zero = lambda *s: tape.constant(np.zeros(s))  # noqa: E731
    fwd = (zero(3, 8), zero(2, 8), zero(1, 8))
    H = bilstm(tape.constant(np.random.default_rng(5).normal(size=(4, 3))), fwd, fwd, zero(4, 2), zero(1, 2))
    np.testing.assert_array_equal(H.value, 0.0)


def test_reversing_input_swaps_directions():
    rng = np.random.default_rng(6)
    tape = nx.Tape()
    x = np.array([[1.0, -0.5], [0.2, 0.9], [-1.3, 0.4]])
    fwd = tuple(tape.constant(m) for m in random_lstm(rng, 2, 3))
    bwd = tuple(tape.constant(m) for m in random_lstm(rng, 2, 3))
    # running forward weights on reversed x equals running them backwards on x
    a = lstm(tape.constant(x[::-1].copy()), *fwd).value
    b = lstm(tape.constant(x), *fwd, reverse=True).value[::-1]
    np.testing.assert_allclose(a, b, atol=1e-15)
    # swapping the direction weights and reversing the input mirrors the concatenated states
    s = bilstm_states(tape.constant(x), fwd, bwd).value
    t = bilstm_states(tape.constant(x[::-1].copy()), bwd, fwd).value[::-1]
    np.testing.assert_allclose(s, np.concatenate([t[:, 3:], t[:, :3]], axis=1), atol=1e-15)


def test_bilstm_is_order_sensitive():
    rng = np.random.default_rng(7)
    tape = nx.Tape()
    fwd, bwd, (W, b) = bilstm_args(tape, rng, 2, 3)
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    a = bilstm(tape.constant(x), fwd, bwd, W, b).value
    b2 = bilstm(tape.constant(x[::-1].copy()), fwd, bwd, W, b).value
    assert np.abs(a - b2[::-1]).max() > 1e-3


def test_bilstm_rejects_empty():
    rng = np.random.default_rng(8)
    tape = nx.Tape()
    fwd, bwd, (W, b) = bilstm_args(tape, rng, 2, 3)
    with pytest.raises(nx.DimensionError):
        bilstm(tape.constant(np.zeros((0, 2))), fwd, bwd, W, b)


def test_label_attention_single_label():
    rng = np.random.default_rng(9)
    tape = nx.Tape()
    label = rng.normal(size=(1, 4))
    out, w = label_attention(tape.constant(rng.normal(size=(3, 4))), tape.constant(label), return_weights=True)
    np.testing.assert_array_equal(w.value, 1.0)
    np.testing.assert_allclose(out.value, np.repeat(label, 3, axis=0), rtol=1e-15)


def test_label_attention_orthogonal_rows_uniform():
    tape = nx.Tape()
    H = tape.constant([[0.0, 0.0, 2.0]])
    labels = tape.constant([[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [1.0, 1.0, 0.0]])
    _, w = label_attention(H, labels, return_weights=True)
    np.testing.assert_allclose(w.value, np.full((1, 3), 1 / 3), rtol=1e-15)


def test_label_attention_hand_case():
    H = np.array([[1.0, 0.0], [0.5, -1.0]])
    L = np.array([[2.0, 1.0], [-1.0, 1.0]])
    tape = nx.Tape()
    out, w = label_attention(tape.constant(H), tape.constant(L), return_weights=True)
    logits = np.array([[2.0, -1.0], [0.0, -1.5]]) / np.sqrt(2)
    A = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(w.value, A, rtol=1e-14)
    np.testing.assert_allclose(out.value, A @ L, rtol=1e-14)
    np.testing.assert_allclose(w.value.sum(axis=1), 1.0, atol=1e-9)


def test_embed_utterance_shapes_and_determinism():
    store = nx.ParamStore()
    init_params(store, np.random.default_rng(10), 9, 5, 4, 3, 7)
    runs = [embed_utterance(nx.Tape(), store, [2, 5, 8]) for _ in range(2)]
    H, H_I, H_S = runs[0]
    assert H.shape == H_I.shape == H_S.shape == (3, 4)
    for a, b in zip(runs[0], runs[1]):
        assert a.value.tobytes() == b.value.tobytes()


def test_embedder_composite_gradient():
    store = nx.ParamStore()
    rng = np.random.default_rng(11)
    init_params(store, rng, 6, 3, 4, 3, 4)
    for name in store.names():
        if name.endswith(".b"):
            store.set(name, rng.normal(size=store.value(name).shape) * 0.1)
    w_I, w_S = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))

    def loss(tape):
        _, H_I, H_S = embed_utterance(tape, store, [2, 4, 5])
        return nx.add(nx.sum_all(nx.hadamard(H_I, w_I)), nx.sum_all(nx.hadamard(H_S, w_S)))

    errs = check_gradients(loss, store)
    assert max(errs.values()) < 1e-3, errs
