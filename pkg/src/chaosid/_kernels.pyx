# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: RK4 for quadratic flows and the LSTM recurrence.

Every function here has a numpy twin in ``_fallback.py`` with the same
signature and semantics; ``kernels.py`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline void _quad_rhs(const double[:, ::1] A, const double[:, ::1] B,
                           const double[::1] b, double x1, double x2, double x3,
                           double* out) noexcept nogil:
    cdef double q[6]
    cdef int i, j
    cdef double s
    q[0] = x1 * x2
    q[1] = x1 * x3
    q[2] = x2 * x3
    q[3] = x1 * x1
    q[4] = x2 * x2
    q[5] = x3 * x3
    for i in range(3):
        s = A[i, 0] * x1 + A[i, 1] * x2 + A[i, 2] * x3
        for j in range(6):
            s = s + B[i, j] * q[j]
        out[i] = s + b[i]


cdef inline void _quad_rk4_inplace(const double[:, ::1] A, const double[:, ::1] B,
                                   const double[::1] b, double* x, double dt,
                                   int substeps) noexcept nogil:
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double h = 0.5 * dt
    cdef double w = dt / 6.0
    cdef int s, i
    for s in range(substeps):
        _quad_rhs(A, B, b, x[0], x[1], x[2], k1)
        _quad_rhs(A, B, b, x[0] + h * k1[0], x[1] + h * k1[1], x[2] + h * k1[2], k2)
        _quad_rhs(A, B, b, x[0] + h * k2[0], x[1] + h * k2[1], x[2] + h * k2[2], k3)
        _quad_rhs(A, B, b, x[0] + dt * k3[0], x[1] + dt * k3[1], x[2] + dt * k3[2], k4)
        for i in range(3):
            x[i] = x[i] + w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def quad_rk4(double[:, ::1] A, double[:, ::1] B, double[::1] b,
             double[:, ::1] X, double dt, int substeps):
    """Advance each row of ``X`` (N x 3) by ``substeps`` RK4 steps."""
    cdef Py_ssize_t n = X.shape[0]
    out = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] Y = out
    cdef double x[3]
    cdef Py_ssize_t r
    with nogil:
        for r in range(n):
            x[0] = X[r, 0]
            x[1] = X[r, 1]
            x[2] = X[r, 2]
            _quad_rk4_inplace(A, B, b, x, dt, substeps)
            Y[r, 0] = x[0]
            Y[r, 1] = x[1]
            Y[r, 2] = x[2]
    return out


def quad_rk4_orbit(double[:, ::1] A, double[:, ::1] B, double[::1] b,
                   double[::1] x0, double dt, int substeps, Py_ssize_t n_steps):
    """Free run from ``x0``; returns the (n_steps + 1) x 3 orbit including x0.

    Integration stops early once a component leaves the finite range; the
    remaining rows are filled with NaN so the caller can locate the step.
    """
    out = np.full((n_steps + 1, 3), np.nan, dtype=np.float64)
    cdef double[:, ::1] Y = out
    cdef double x[3]
    cdef Py_ssize_t t
    x[0] = x0[0]
    x[1] = x0[1]
    x[2] = x0[2]
    Y[0, 0] = x[0]
    Y[0, 1] = x[1]
    Y[0, 2] = x[2]
    with nogil:
        for t in range(1, n_steps + 1):
            _quad_rk4_inplace(A, B, b, x, dt, substeps)
            Y[t, 0] = x[0]
            Y[t, 1] = x[1]
            Y[t, 2] = x[2]
            if not (-1e300 < x[0] < 1e300 and -1e300 < x[1] < 1e300
                    and -1e300 < x[2] < 1e300):
                break
    return out


cdef inline double _sigmoid(double z) noexcept nogil:
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    cdef double e = exp(z)
    return e / (1.0 + e)


def lstm_recurrence_forward(double[:, ::1] gx, double[:, ::1] Whh, bint reverse):
    """Run the LSTM recurrence over precomputed input projections.

    ``gx`` holds W_ih x_t + b for every step (T x 4h), gate order
    (input, forget, cell, output). Returns hidden states H, cell states C
    and the activated gates G.
    """
    cdef Py_ssize_t T = gx.shape[0]
    cdef Py_ssize_t h4 = gx.shape[1]
    cdef Py_ssize_t h = h4 // 4
    H_arr = np.zeros((T, h), dtype=np.float64)
    C_arr = np.zeros((T, h), dtype=np.float64)
    G_arr = np.zeros((T, h4), dtype=np.float64)
    hprev_arr = np.zeros(h, dtype=np.float64)
    cprev_arr = np.zeros(h, dtype=np.float64)
    z_arr = np.zeros(h4, dtype=np.float64)
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] C = C_arr
    cdef double[:, ::1] G = G_arr
    cdef double[::1] hprev = hprev_arr
    cdef double[::1] cprev = cprev_arr
    cdef double[::1] z = z_arr
    cdef Py_ssize_t step, t, r, k
    cdef double s, ig, fg, gg, og, c
    with nogil:
        for step in range(T):
            t = T - 1 - step if reverse else step
            for r in range(h4):
                s = gx[t, r]
                for k in range(h):
                    s = s + Whh[r, k] * hprev[k]
                z[r] = s
            for k in range(h):
                ig = _sigmoid(z[k])
                fg = _sigmoid(z[h + k])
                gg = tanh(z[2 * h + k])
                og = _sigmoid(z[3 * h + k])
                c = fg * cprev[k] + ig * gg
                G[t, k] = ig
                G[t, h + k] = fg
                G[t, 2 * h + k] = gg
                G[t, 3 * h + k] = og
                C[t, k] = c
                H[t, k] = og * tanh(c)
            for k in range(h):
                cprev[k] = C[t, k]
                hprev[k] = H[t, k]
    return H_arr, C_arr, G_arr


def lstm_recurrence_backward(double[:, ::1] dH, double[:, ::1] G,
                             double[:, ::1] C, double[:, ::1] Whh, bint reverse):
    """Backpropagate through time; returns d loss / d (pre-activation gates)."""
    cdef Py_ssize_t T = G.shape[0]
    cdef Py_ssize_t h4 = G.shape[1]
    cdef Py_ssize_t h = h4 // 4
    dZ_arr = np.zeros((T, h4), dtype=np.float64)
    dh_next_arr = np.zeros(h, dtype=np.float64)
    dc_next_arr = np.zeros(h, dtype=np.float64)
    cdef double[:, ::1] dZ = dZ_arr
    cdef double[::1] dh_next = dh_next_arr
    cdef double[::1] dc_next = dc_next_arr
    cdef Py_ssize_t step, t, tp, r, k
    cdef double dh, tc, ig, fg, gg, og, dc, cprev, s
    with nogil:
        for step in range(T):
            # walk opposite to the forward direction
            t = step if reverse else T - 1 - step
            tp = t + 1 if reverse else t - 1
            for k in range(h):
                dh = dH[t, k] + dh_next[k]
                tc = tanh(C[t, k])
                ig = G[t, k]
                fg = G[t, h + k]
                gg = G[t, 2 * h + k]
                og = G[t, 3 * h + k]
                if 0 <= tp < T:
                    cprev = C[tp, k]
                else:
                    cprev = 0.0
                dc = dc_next[k] + dh * og * (1.0 - tc * tc)
                dZ[t, k] = dc * gg * ig * (1.0 - ig)
                dZ[t, h + k] = dc * cprev * fg * (1.0 - fg)
                dZ[t, 2 * h + k] = dc * ig * (1.0 - gg * gg)
                dZ[t, 3 * h + k] = dh * tc * og * (1.0 - og)
                dc_next[k] = dc * fg
            for k in range(h):
                s = 0.0
                for r in range(h4):
                    s = s + Whh[r, k] * dZ[t, r]
                dh_next[k] = s
    return dZ_arr
