"""Pure-Python/numpy versions of the compiled kernels (same API)."""
from __future__ import annotations

import math

import numpy as np


def mixed_linear_apply(A, is_max, dscale, S):
    """``out[b, i] = dscale[i] * agg_j A[i, j] * S[b, j]`` (sum or max per row)."""
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    is_max = np.asarray(is_max, dtype=bool)
    terms = A * S[..., None, :]  # (..., n, m)
    out = np.where(is_max, terms.max(axis=-1, initial=0.0), terms.sum(axis=-1))
    return out * np.asarray(dscale, dtype=float)


def _signals(kind, par, t):
    out = np.empty(len(kind))
    for c, (k, p) in enumerate(zip(kind, par)):
        if k == 0:
            out[c] = p[0]
        elif k == 1:
            out[c] = p[0] if t >= p[1] else 0.0
        else:
            out[c] = min(max(p[0] * math.sin(2.0 * math.pi * p[1] * t), -p[2]), p[2])
    return out


def rk4_network(a, G, is_max, B, sig_kind, sig_par, x0, dt, nsteps, guard=1e150):
    """Classical RK4 for ``x_i' = -a_i x_i + agg(G_ij |x_j|, B_ik |u_k(t)|)``.

    Returns ``(X, U, last)``; ``last`` is the index of the last valid state.
    """
    a = np.asarray(a, dtype=float)
    G = np.asarray(G, dtype=float)
    B = np.asarray(B, dtype=float)
    is_max = np.asarray(is_max, dtype=bool)
    n, m = len(a), B.shape[1]
    W = np.hstack([G, B])

    def rhs(x, u):
        terms = W * np.abs(np.concatenate([x, u]))
        agg = np.where(is_max, terms.max(axis=1, initial=0.0), terms.sum(axis=1))
        return -a * x + agg

    X = np.zeros((nsteps + 1, n))
    U = np.zeros((nsteps + 1, m))
    X[0] = x0
    U[0] = _signals(sig_kind, sig_par, 0.0)
    last = nsteps
    for k in range(nsteps):
        t = k * dt
        u0 = U[k] if k else _signals(sig_kind, sig_par, t)
        um = _signals(sig_kind, sig_par, t + 0.5 * dt)
        u1 = _signals(sig_kind, sig_par, t + dt)
        x = X[k]
        k1 = rhs(x, u0)
        k2 = rhs(x + 0.5 * dt * k1, um)
        k3 = rhs(x + 0.5 * dt * k2, um)
        k4 = rhs(x + dt * k3, u1)
        X[k + 1] = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        U[k + 1] = u1
        if not np.all(np.isfinite(X[k + 1])) or np.any(np.abs(X[k + 1]) > guard):
            last = k
            break
    return X, U, last
