import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from han import numerics as nx
from han.gradcheck import check_gradients, relative_error


def const(tape, value):
    return tape.constant(np.asarray(value, dtype=float))


def test_matmul_identity_and_projector():
    tape = nx.Tape()
    m = [[1.0, 2.0], [3.0, 4.0]]
    np.testing.assert_array_equal(nx.matmul(const(tape, np.eye(2)), const(tape, m)).value, m)
    out = nx.matmul(const(tape, [[1, 0], [0, 0]]), const(tape, [[5], [7]]))
    np.testing.assert_array_equal(out.value, [[5], [0]])


def test_matmul_shape_error():
    tape = nx.Tape()
    with pytest.raises(nx.DimensionError, match="matmul"):
        nx.matmul(const(tape, np.ones((2, 3))), const(tape, np.ones((2, 3))))


def test_matmul_gradient_is_ones_times_b_transpose():
    rng = np.random.default_rng(0)
    store = nx.ParamStore()
    store.add("a", rng.normal(size=(3, 4)))
    b = rng.normal(size=(4, 2))

    def loss(tape):
        return nx.sum_all(nx.matmul(tape.param(store, "a"), b))

    tape = nx.Tape()
    nx.backward(tape, loss(tape))
    np.testing.assert_allclose(store.grads["a"], np.ones((3, 2)) @ b.T, rtol=1e-12)
    assert check_gradients(loss, store, step=1e-6)["a"] < 1e-6


def test_hadamard_values_and_shape_check():
    tape = nx.Tape()
    np.testing.assert_array_equal(nx.hadamard(const(tape, [1, 2, 3]), const(tape, [1, 1, 1])).value, [[1, 2, 3]])
    np.testing.assert_array_equal(nx.hadamard(const(tape, [2, -1]), const(tape, [3, 4])).value, [[6, -4]])
    with pytest.raises(nx.DimensionError):
        nx.hadamard(const(tape, [1, 2]), const(tape, [1, 2, 3]))


def test_hadamard_gradient_is_upstream_times_other():
    rng = np.random.default_rng(1)
    store = nx.ParamStore()
    store.add("a", rng.normal(size=(3, 4)))
    b = rng.normal(size=(3, 4))
    up = rng.normal(size=(3, 4))

    def loss(tape):
        return nx.sum_all(nx.hadamard(nx.hadamard(tape.param(store, "a"), b), up))

    tape = nx.Tape()
    nx.backward(tape, loss(tape))
    np.testing.assert_allclose(store.grads["a"], up * b, rtol=1e-12)
    assert check_gradients(loss, store)["a"] < 1e-8


def test_activation_values():
    tape = nx.Tape()
    np.testing.assert_array_equal(nx.activation(const(tape, [-1, 0, 2]), "relu").value, [[0, 0, 2]])
    assert nx.activation(const(tape, [0.0]), "elu").value[0, 0] == 0.0
    assert abs(nx.activation(const(tape, [-30.0]), "elu").value[0, 0] + 1.0) < 1e-12
    assert nx.activation(const(tape, [0.0]), "sigmoid").value[0, 0] == 0.5
    assert nx.activation(const(tape, [0.0]), "exp").value[0, 0] == 1.0
    assert nx.activation(const(tape, [0.0]), "tanh").value[0, 0] == 0.0


def test_exp_overflow_raises_instead_of_inf():
    tape = nx.Tape()
    with pytest.raises(nx.ExpOverflowError):
        nx.activation(const(tape, [701.0]), "exp")
    with pytest.raises(OverflowError):
        nx.activation(const(tape, [1000.0]), "exp")


def test_unknown_activation():
    with pytest.raises(ValueError, match="unknown activation"):
        nx.activation(nx.Tape().constant([1.0]), "gelu")


def test_nonfinite_values_rejected():
    tape = nx.Tape()
    with pytest.raises(nx.NumericsError):
        tape.constant([np.nan, 1.0])
    big = const(tape, [[1e308, 1e308]])
    with np.errstate(over="ignore"), pytest.raises(nx.NumericsError):
        nx.add(big, big)


def test_softmax_rows_cases():
    tape = nx.Tape()
    np.testing.assert_allclose(nx.softmax_rows(const(tape, [1, 1, 1])).value, [[1 / 3] * 3], rtol=1e-15)
    stable = nx.softmax_rows(const(tape, [1000.0, 0.0])).value
    assert np.isfinite(stable).all()
    np.testing.assert_allclose(stable, [[1.0, 0.0]], atol=1e-300)
    np.testing.assert_allclose(nx.softmax_rows(const(tape, [0.0, math.log(3)])).value, [[0.25, 0.75]], rtol=1e-14)


def test_layer_norm_cases():
    tape = nx.Tape()
    ones, zeros = np.ones((1, 4)), np.zeros((1, 4))
    np.testing.assert_array_equal(nx.layer_norm(const(tape, [[2, 2, 2, 2]]), ones, zeros).value, np.zeros((1, 4)))
    out = nx.layer_norm(const(tape, [[1.0, -1.0]]), np.ones((1, 2)), np.zeros((1, 2))).value
    np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-5)


def test_layer_norm_standardises_rows():
    x = np.random.default_rng(2).normal(size=(5, 7)) * 3 + 2
    out = nx.layer_norm(nx.Tape().constant(x), np.ones((1, 7)), np.zeros((1, 7))).value
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)


SHAPE = (3, 4)
UNARY_OPS = {
    "relu": lambda x: nx.activation(x, "relu"),
    "elu": lambda x: nx.activation(x, "elu"),
    "exp": lambda x: nx.activation(x, "exp"),
    "sigmoid": lambda x: nx.activation(x, "sigmoid"),
    "tanh": lambda x: nx.activation(x, "tanh"),
    "softmax_rows": nx.softmax_rows,
    "transpose": nx.transpose,
    "scale": lambda x: nx.scale(x, -2.5),
    "max_rows": nx.max_rows,
    "mean_rows": nx.mean_rows,
    "reshape": lambda x: nx.reshape(x, 2, 6),
    "slice_cols": lambda x: nx.slice_cols(x, 1, 3),
    "take_rows": lambda x: nx.take_rows(x, [2, 0, 2]),
    "cross_entropy": lambda x: nx.cross_entropy(nx.reshape(x, 1, 12), 5),
}


@pytest.mark.parametrize("op", sorted(UNARY_OPS))
def test_unary_gradients_match_finite_differences(op):
    rng = np.random.default_rng(hash(op) % 2**32)
    store = nx.ParamStore()
    store.add("x", rng.uniform(-1, 1, size=SHAPE))
    weights = rng.normal(size=(12,))

    def loss(tape):
        out = UNARY_OPS[op](tape.param(store, "x"))
        w = weights[:out.value.size].reshape(out.shape)
        return nx.sum_all(nx.hadamard(out, w))

    assert check_gradients(loss, store)["x"] < 1e-4


BINARY_OPS = {
    "add": (lambda a, b: nx.add(a, b), SHAPE),
    "add_row": (lambda a, b: nx.add(a, nx.slice_cols(nx.reshape(b, 1, 12), 0, 4)), SHAPE),
    "sub": (lambda a, b: nx.sub(a, b), SHAPE),
    "hadamard": (lambda a, b: nx.hadamard(a, b), SHAPE),
    "matmul": (lambda a, b: nx.matmul(a, nx.transpose(b)), SHAPE),
    "row_scale": (lambda a, b: nx.row_scale(a, nx.slice_cols(b, 0, 1)), SHAPE),
    "concat_cols": (lambda a, b: nx.concat_cols(a, b), SHAPE),
    "concat_rows": (lambda a, b: nx.concat_rows(a, b), SHAPE),
}


@pytest.mark.parametrize("op", sorted(BINARY_OPS))
def test_binary_gradients_match_finite_differences(op):
    fn, shape = BINARY_OPS[op]
    rng = np.random.default_rng(7)
    store = nx.ParamStore()
    store.add("a", rng.uniform(-1, 1, size=shape))
    store.add("b", rng.uniform(-1, 1, size=shape))
    w = rng.normal(size=(24, 24))

    def loss(tape):
        out = fn(tape.param(store, "a"), tape.param(store, "b"))
        return nx.sum_all(nx.hadamard(out, w[:out.shape[0], :out.shape[1]]))

    errs = check_gradients(loss, store)
    assert max(errs.values()) < 1e-4, errs


def test_layer_norm_gradient():
    rng = np.random.default_rng(3)
    store = nx.ParamStore()
    store.add("x", rng.normal(size=SHAPE))
    store.add("gain", rng.normal(size=(1, 4)))
    store.add("bias", rng.normal(size=(1, 4)))
    w = rng.normal(size=SHAPE)

    def loss(tape):
        p = lambda n: tape.param(store, n)  # noqa: E731
        return nx.sum_all(nx.hadamard(nx.layer_norm(p("x"), p("gain"), p("bias")), w))

    errs = check_gradients(loss, store)
    assert max(errs.values()) < 1e-4, errs


def test_backward_sum_of_linear_map():
    rng = np.random.default_rng(4)
    store = nx.ParamStore()
    store.add("W", rng.normal(size=(2, 3)))
    x = rng.normal(size=(3, 1))

    def loss(tape):
        return nx.sum_all(nx.matmul(tape.param(store, "W"), x))

    tape = nx.Tape()
    nx.backward(tape, loss(tape))
    np.testing.assert_allclose(store.grads["W"], np.repeat(x.T, 2, axis=0))


def test_backward_constant_loss_gives_zero_gradient():
    store = nx.ParamStore()
    store.add("W", np.ones((2, 2)))
    store.add("unused", np.ones((3, 1)))
    store.grads["unused"] += 5.0
    tape = nx.Tape()
    W = tape.param(store, "W")
    loss = nx.sum_all(tape.constant(np.ones((2, 2))))
    nx.backward(tape, nx.add(loss, nx.scale(nx.sum_all(W), 0.0)))
    np.testing.assert_array_equal(store.grads["W"], 0.0)
    np.testing.assert_array_equal(store.grads["unused"], 0.0)


def test_backward_requires_scalar():
    tape = nx.Tape()
    with pytest.raises(nx.DimensionError):
        nx.backward(tape, tape.constant(np.ones((2, 1))))


def test_two_layer_network_gradient_check():
    rng = np.random.default_rng(5)
    store = nx.ParamStore()
    store.add("W1", nx.xavier_uniform(rng, 4, 6))
    store.add("b1", rng.normal(size=(1, 6)) * 0.1)
    store.add("W2", nx.xavier_uniform(rng, 6, 3))
    x = rng.normal(size=(5, 4))

    def loss(tape):
        p = lambda n: tape.param(store, n)  # noqa: E731
        h = nx.activation(nx.add(nx.matmul(x, p("W1")), p("b1")), "tanh")
        return nx.cross_entropy(nx.mean_rows(nx.matmul(h, p("W2"))), 1)

    errs = check_gradients(loss, store, step=1e-5)
    assert max(errs.values()) < 1e-3, errs


finite_matrices = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                         elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))


@settings(max_examples=200, deadline=None)
@given(finite_matrices)
def test_softmax_rows_sum_to_one(x):
    y = nx.softmax_rows(nx.Tape().constant(x)).value
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
              elements=st.floats(-100, 100, allow_nan=False)),
       st.floats(-100, 100, allow_nan=False))
def test_layer_norm_shift_invariance(x, c):
    ones, zeros = np.ones((1, x.shape[1])), np.zeros((1, x.shape[1]))
    tape = nx.Tape()
    a = nx.layer_norm(tape.constant(x), ones, zeros).value
    b = nx.layer_norm(tape.constant(x + c), ones, zeros).value
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_matmul_and_hadamard_are_deterministic():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    runs = [(nx.matmul(nx.Tape().constant(a), b).value.tobytes(),
             nx.hadamard(nx.Tape().constant(a), b).value.tobytes()) for _ in range(3)]
    assert len(set(runs)) == 1


def test_relative_error_zero_for_vanishing_gradients():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_param_store_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    store = nx.ParamStore()
    store.add("b.W", rng.normal(size=(3, 2)))
    store.add("a.bias", rng.normal(size=(1, 5)))
    path = tmp_path / "params.json"
    store.save(path)
    loaded = nx.ParamStore.load(path)
    assert loaded.names() == sorted(store.names())
    for name in store.names():
        assert loaded.value(name).tobytes() == store.value(name).tobytes()
    loaded.save(tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()
    doc = json.loads(path.read_text())
    assert doc["format"] == "han-params" and doc["version"] == 1
    assert doc["params"]["b.W"]["shape"] == [3, 2]


def test_param_store_rejects_bad_checkpoint():
    with pytest.raises(ValueError):
        nx.ParamStore.from_dict({"format": "other", "version": 1, "params": {}})
    bad = {"format": "han-params", "version": 1, "params": {"W": {"shape": [2, 2], "values": [1.0]}}}
    with pytest.raises(ValueError, match="values"):
        nx.ParamStore.from_dict(bad)


def test_param_store_duplicate_name():
    store = nx.ParamStore()
    store.add("W", np.zeros((1, 1)))
    with pytest.raises(KeyError):
        store.add("W", np.zeros((1, 1)))


def test_xavier_uniform_bounds():
    w = nx.xavier_uniform(np.random.default_rng(0), 10, 30)
    assert np.abs(w).max() <= math.sqrt(6 / 40)
