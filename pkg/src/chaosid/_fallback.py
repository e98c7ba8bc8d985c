"""Pure numpy implementations of the kernels in ``_kernels.pyx``.

Used when the compiled extension is missing or ``CHAOSID_PURE_PYTHON`` is set.
"""

import numpy as np


def _quad_rhs(A, B, b, X):
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    q = np.stack([x1 * x2, x1 * x3, x2 * x3, x1 * x1, x2 * x2, x3 * x3], axis=1)
    return X @ A.T + q @ B.T + b


def quad_rk4(A, B, b, X, dt, substeps):
    X = np.array(X, dtype=np.float64)
    h = 0.5 * dt
    w = dt / 6.0
    for _ in range(substeps):
        k1 = _quad_rhs(A, B, b, X)
        k2 = _quad_rhs(A, B, b, X + h * k1)
        k3 = _quad_rhs(A, B, b, X + h * k2)
        k4 = _quad_rhs(A, B, b, X + dt * k3)
        X = X + w * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return X


def quad_rk4_orbit(A, B, b, x0, dt, substeps, n_steps):
    out = np.full((n_steps + 1, 3), np.nan)
    x = np.array(x0, dtype=np.float64).reshape(1, 3)
    out[0] = x[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, n_steps + 1):
            x = quad_rk4(A, B, b, x, dt, substeps)
            out[t] = x[0]
            if not np.all(np.abs(x) < 1e300):
                break
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_recurrence_forward(gx, Whh, reverse):
    T, h4 = gx.shape
    h = h4 // 4
    H = np.zeros((T, h))
    C = np.zeros((T, h))
    G = np.zeros((T, h4))
    hprev = np.zeros(h)
    cprev = np.zeros(h)
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        z = gx[t] + Whh @ hprev
        i = _sigmoid(z[:h])
        f = _sigmoid(z[h:2 * h])
        g = np.tanh(z[2 * h:3 * h])
        o = _sigmoid(z[3 * h:])
        c = f * cprev + i * g
        G[t] = np.concatenate([i, f, g, o])
        C[t] = c
        H[t] = o * np.tanh(c)
        hprev, cprev = H[t], C[t]
    return H, C, G


def lstm_recurrence_backward(dH, G, C, Whh, reverse):
    T, h4 = G.shape
    h = h4 // 4
    dZ = np.zeros((T, h4))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    order = range(T) if reverse else range(T - 1, -1, -1)
    for t in order:
        tp = t + 1 if reverse else t - 1
        cprev = C[tp] if 0 <= tp < T else np.zeros(h)
        i, f, g, o = G[t, :h], G[t, h:2 * h], G[t, 2 * h:3 * h], G[t, 3 * h:]
        dh = dH[t] + dh_next
        tc = np.tanh(C[t])
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dZ[t, :h] = dc * g * i * (1.0 - i)
        dZ[t, h:2 * h] = dc * cprev * f * (1.0 - f)
        dZ[t, 2 * h:3 * h] = dc * i * (1.0 - g * g)
        dZ[t, 3 * h:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = Whh.T @ dZ[t]
    return dZ
