"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

import numpy as np

from . import numerics as nx


def relative_error(analytic, numeric):
    """Norm-wise relative error, zero when both gradients vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def analytic_gradients(loss_fn, store):
    tape = nx.Tape()
    loss = loss_fn(tape)
    nx.backward(tape, loss)
    return {name: g.copy() for name, g in store.grads.items()}


def numeric_gradient(loss_fn, store, name, step=1e-5):
    """Central differences of ``loss_fn`` w.r.t. every entry of parameter ``name``."""
    value = store.values[name]
    grad = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        orig = value[idx]
        value[idx] = orig + step
        up = loss_fn(nx.Tape(grad=False)).value[0, 0]
        value[idx] = orig - step
        down = loss_fn(nx.Tape(grad=False)).value[0, 0]
        value[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def check_gradients(loss_fn, store, names=None, step=1e-5):
    """Relative error between tape and finite-difference gradients per parameter.

    ``loss_fn(tape)`` must build a 1 x 1 loss from parameters bound to
    ``store`` on the given tape.
    """
    analytic = analytic_gradients(loss_fn, store)
    names = store.names() if names is None else names
    return {name: relative_error(analytic[name], numeric_gradient(loss_fn, store, name, step))
            for name in names}
