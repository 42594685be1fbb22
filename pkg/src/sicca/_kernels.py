"""Compiled inner loops for the variance-reduced least-squares steps.

A single step moves ``w`` by ``-step * (c * Q_i (w - anchor) + mu)`` where
``Q_i = [[lam x xᵀ, -x yᵀ], [-y xᵀ, lam y yᵀ]]`` for sample ``i``. Only rank-one
products are used, so a step costs O(d_x + d_y).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _step(w, x, y, anchor, mu, lam, step, c, dx, dy):
    a = 0.0
    for j in range(dx):
        a += x[j] * (w[j] - anchor[j])
    b = 0.0
    for j in range(dy):
        b += y[j] * (w[dx + j] - anchor[dx + j])
    ca = c * (lam * a - b)
    cb = c * (lam * b - a)
    for j in range(dx):
        w[j] -= step * (ca * x[j] + mu[j])
    for j in range(dy):
        w[dx + j] -= step * (cb * y[j] + mu[dx + j])


@njit(cache=True)
def svrg_epoch(X, Y, idx, weights, w, anchor, mu, lam, step):
    """Run ``len(idx)`` sampled steps in place; ``weights[i]`` is 1/(N p_i)."""
    dx = X.shape[1]
    dy = Y.shape[1]
    for k in range(idx.shape[0]):
        i = idx[k]
        _step(w, X[i], Y[i], anchor, mu, lam, step, weights[i], dx, dy)


@njit(cache=True)
def stream_steps(X, Y, w, anchor, mu, lam, step):
    """Run one step per row of (X, Y), in order, in place."""
    dx = X.shape[1]
    dy = Y.shape[1]
    for i in range(X.shape[0]):
        _step(w, X[i], Y[i], anchor, mu, lam, step, 1.0, dx, dy)


def warmup() -> None:
    z = np.zeros((1, 1))
    w = np.zeros(2)
    svrg_epoch(z, z, np.zeros(1, dtype=np.int64), np.ones(1), w, w.copy(), w.copy(), 1.0, 0.0)
    stream_steps(z, z, w, w.copy(), w.copy(), 1.0, 0.0)
