# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: batched linear mixed operator and RK4 for linear-gain networks.

Same API and results as :mod:`iss_smallgain._pykernels`.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, fabs, isfinite, M_PI

cnp.import_array()


def mixed_linear_apply(double[:, ::1] A, int[::1] is_max, double[::1] dscale, S):
    """``out[b, i] = dscale[i] * agg_j A[i, j] * S[b, j]`` (sum or max per row)."""
    cdef double[:, ::1] s = np.ascontiguousarray(S, dtype=np.float64).reshape(-1, A.shape[1])
    cdef Py_ssize_t nb = s.shape[0], n = A.shape[0], m = A.shape[1]
    out = np.zeros((nb, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t b, i, j
    cdef double acc, t
    with nogil:
        for b in range(nb):
            for i in range(n):
                acc = 0.0
                if is_max[i]:
                    for j in range(m):
                        t = A[i, j] * s[b, j]
                        if t > acc:
                            acc = t
                else:
                    for j in range(m):
                        acc = acc + A[i, j] * s[b, j]
                o[b, i] = dscale[i] * acc
    return out.reshape(np.shape(S)[:-1] + (n,))


cdef inline double _signal(int kind, double p0, double p1, double p2, double t) nogil:
    cdef double v
    if kind == 0:
        return p0
    if kind == 1:
        return p0 if t >= p1 else 0.0
    v = p0 * sin(2.0 * M_PI * p1 * t)
    if v > p2:
        return p2
    if v < -p2:
        return -p2
    return v


cdef void _rhs(double[::1] a, double[:, ::1] G, int[::1] is_max, double[:, ::1] B,
               double* x, double* u, double* out) nogil:
    cdef Py_ssize_t n = G.shape[0], m = B.shape[1], i, j
    cdef double acc, t
    for i in range(n):
        acc = 0.0
        if is_max[i]:
            for j in range(n):
                t = G[i, j] * fabs(x[j])
                if t > acc:
                    acc = t
            for j in range(m):
                t = B[i, j] * fabs(u[j])
                if t > acc:
                    acc = t
        else:
            for j in range(n):
                acc = acc + G[i, j] * fabs(x[j])
            for j in range(m):
                acc = acc + B[i, j] * fabs(u[j])
        out[i] = -a[i] * x[i] + acc


def rk4_network(double[::1] a, double[:, ::1] G, int[::1] is_max, double[:, ::1] B,
                int[::1] sig_kind, double[:, ::1] sig_par, double[::1] x0,
                double dt, Py_ssize_t nsteps, double guard=1e150):
    """Classical RK4 for ``x_i' = -a_i x_i + agg(G_ij |x_j|, B_ik |u_k(t)|)``.

    Returns ``(X, U, last)`` where ``last`` is the index of the last finite
    state below ``guard`` (``nsteps`` when the run completed).
    """
    cdef Py_ssize_t n = a.shape[0], m = B.shape[1], k, i, c
    X_arr = np.zeros((nsteps + 1, n))
    U_arr = np.zeros((nsteps + 1, m))
    cdef double[:, ::1] X = X_arr
    cdef double[:, ::1] U = U_arr
    buf = np.zeros((7, max(n, m)))
    cdef double[:, ::1] w = buf
    cdef double t, h2 = 0.5 * dt
    cdef Py_ssize_t last = nsteps
    cdef bint bad
    with nogil:
        for i in range(n):
            X[0, i] = x0[i]
        for c in range(m):
            U[0, c] = _signal(sig_kind[c], sig_par[c, 0], sig_par[c, 1], sig_par[c, 2], 0.0)
        for k in range(nsteps):
            t = k * dt
            # w[0]=u(t), w[1]=u(t+dt/2), w[2]=u(t+dt); w[3..6]=k1..k4 (reuse as stage x)
            for c in range(m):
                w[0, c] = _signal(sig_kind[c], sig_par[c, 0], sig_par[c, 1], sig_par[c, 2], t)
                w[1, c] = _signal(sig_kind[c], sig_par[c, 0], sig_par[c, 1], sig_par[c, 2], t + h2)
                w[2, c] = _signal(sig_kind[c], sig_par[c, 0], sig_par[c, 1], sig_par[c, 2], t + dt)
            _rhs(a, G, is_max, B, &X[k, 0], &w[0, 0], &w[3, 0])
            for i in range(n):
                X[k + 1, i] = X[k, i] + h2 * w[3, i]
            _rhs(a, G, is_max, B, &X[k + 1, 0], &w[1, 0], &w[4, 0])
            for i in range(n):
                X[k + 1, i] = X[k, i] + h2 * w[4, i]
            _rhs(a, G, is_max, B, &X[k + 1, 0], &w[1, 0], &w[5, 0])
            for i in range(n):
                X[k + 1, i] = X[k, i] + dt * w[5, i]
            _rhs(a, G, is_max, B, &X[k + 1, 0], &w[2, 0], &w[6, 0])
            bad = False
            for i in range(n):
                X[k + 1, i] = X[k, i] + dt / 6.0 * (w[3, i] + 2.0 * w[4, i] + 2.0 * w[5, i] + w[6, i])
                if not isfinite(X[k + 1, i]) or fabs(X[k + 1, i]) > guard:
                    bad = True
            for c in range(m):
                U[k + 1, c] = w[2, c]
            if bad:
                last = k
                break
    return X_arr, U_arr, last
