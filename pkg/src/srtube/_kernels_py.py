"""Numpy version of the compiled RK4 kernel (same signature and results)."""

import math

import numpy as np


def _rhs(b, A, x, p):
    X = b[None, :, :] + np.einsum("aij,nj->nai", A, x)
    h = np.einsum("ni,nai->na", p, X)
    dx = h[:, 0, None] * X[:, 0] + h[:, 1, None] * X[:, 1]
    dp = -np.einsum("na,ni,aij->nj", h, p, A)
    return dx, dp


def _project(x, proj):
    if proj == 1:
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    if proj == 2:
        g = x[:, 0] * x[:, 3] - x[:, 1] * x[:, 2] - 1.0
        grad = np.stack([x[:, 3], -x[:, 2], -x[:, 1], x[:, 0]], 1)
        return x - (g / np.sum(grad * grad, 1))[:, None] * grad
    return x


def rk4_affine(b, A, x0, p0, times, step, proj=0):
    b = np.asarray(b, dtype=float)
    A = np.asarray(A, dtype=float)
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    times = np.asarray(times, dtype=float)
    if x.shape[1] > 4:
        raise ValueError("dimension above 4 is not supported")
    if step <= 0:
        raise ValueError("step must be positive")
    n, dim = x.shape
    xs = np.empty((n, len(times), dim))
    ps = np.empty((n, len(times), dim))
    t = 0.0
    for m, target in enumerate(times):
        dt = target - t
        nsub = 0 if dt == 0.0 else max(1, math.ceil(abs(dt) / step - 1e-9))
        for _ in range(nsub):
            hs = dt / nsub
            k1x, k1p = _rhs(b, A, x, p)
            k2x, k2p = _rhs(b, A, x + 0.5 * hs * k1x, p + 0.5 * hs * k1p)
            k3x, k3p = _rhs(b, A, x + 0.5 * hs * k2x, p + 0.5 * hs * k2p)
            k4x, k4p = _rhs(b, A, x + hs * k3x, p + hs * k3p)
            x = x + hs / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            p = p + hs / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            x = _project(x, proj)
        t = target
        xs[:, m] = x
        ps[:, m] = p
    return xs, ps
