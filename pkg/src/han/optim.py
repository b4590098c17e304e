"""RAdam and Adam over a :class:`~han.numerics.ParamStore`."""
from __future__ import annotations

import math

import numpy as np

from .numerics import NumericsError


class Adam:
    """Adam with bias correction; also holds the state RAdam shares."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def _check(self, store):
        for name, g in store.grads.items():
            if not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient for {name}; step aborted")

    def _moments(self, name, g):
        m = self.m.get(name)
        if m is None:
            m = self.m[name] = np.zeros_like(g)
            self.v[name] = np.zeros_like(g)
        v = self.v[name]
        m *= self.beta1
        m += (1 - self.beta1) * g
        v *= self.beta2
        v += (1 - self.beta2) * g * g
        return m, v

    def step(self, store):
        self._check(store)
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, g in store.grads.items():
            m, v = self._moments(name, g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            store.values[name] = store.values[name] - self.lr * update


class RAdam(Adam):
    """Rectified Adam.

    While the approximated SMA length ``rho_t`` is at most 4 the update is
    plain bias-corrected momentum; afterwards the adaptive step is scaled by
    the variance rectification term.
    """

    @property
    def rho_inf(self):
        return 2.0 / (1.0 - self.beta2) - 1.0

    def rho(self, t):
        b2t = self.beta2 ** t
        return self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)

    def rectification(self, t):
        """``r_t``, or ``None`` when the step falls in the momentum-only regime."""
        rho_t, rho_inf = self.rho(t), self.rho_inf
        if rho_t <= 4.0:
            return None
        return math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf
                         / ((rho_inf - 4) * (rho_inf - 2) * rho_t))

    def step(self, store):
        self._check(store)
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        r = self.rectification(self.t)
        for name, g in store.grads.items():
            m, v = self._moments(name, g)
            m_hat = m / c1
            if r is None:
                update = m_hat
            else:
                update = r * m_hat * math.sqrt(c2) / (np.sqrt(v) + self.eps)
            store.values[name] = store.values[name] - self.lr * update


OPTIMIZERS = {"radam": RAdam, "adam": Adam}
