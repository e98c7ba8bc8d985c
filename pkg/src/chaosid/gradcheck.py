"""Central finite-difference gradient checking for tape-built losses."""

import numpy as np

from . import autodiff as ad


def numerical_grad(f, params, step=1e-5):
    """Central differences of scalar ``f(params)`` for every entry of every array."""
    out = {}
    for name, value in params.items():
        g = np.zeros_like(value, dtype=np.float64)
        for idx in np.ndindex(value.shape):
            shifted = {k: v.copy() for k, v in params.items()}
            shifted[name][idx] = value[idx] + step
            up = f(shifted)
            shifted[name][idx] = value[idx] - step
            down = f(shifted)
            g[idx] = (up - down) / (2.0 * step)
        out[name] = g
    return out


def relative_error(a, b, floor=1e-12):
    """||a - b|| / max(||a||, ||b||, floor)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def check(build, params, step=1e-5):
    """Compare tape gradients with finite differences.

    ``build(tape, tensors)`` must return the scalar loss tensor. Returns the
    worst per-parameter relative error.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def value(p):
        tape = ad.Tape()
        return float(build(tape, {k: tape.constant(v) for k, v in p.items()}).value)

    tape = ad.Tape()
    loss = build(tape, {k: tape.param(k, v) for k, v in params.items()})
    analytic = ad.backward(tape, loss)
    numeric = numerical_grad(value, params, step)
    worst = 0.0
    for name in params:
        a = analytic.get(name, np.zeros_like(params[name]))
        worst = max(worst, relative_error(a, numeric[name]))
    return worst
