"""Backend selection for the hot loops.

The compiled extension ``chaosid._kernels`` is preferred; when it cannot be
imported (or ``CHAOSID_PURE_PYTHON=1``) the numpy twins from ``_fallback``
are used instead. Both expose the same four functions.
"""

import os

import numpy as np

from . import _fallback

_NAMES = ("quad_rk4", "quad_rk4_orbit", "lstm_recurrence_forward", "lstm_recurrence_backward")


def _load_compiled():
    if os.environ.get("CHAOSID_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled" / "python"), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def quad_rk4(A, B, b, X, dt, substeps=1):
    """RK4-advance a batch of 3-d states under x' = A x + B q(x) + b."""
    return _impl.quad_rk4(_c(A), _c(B), _c(b), _c(X), float(dt), int(substeps))


def quad_rk4_orbit(A, B, b, x0, dt, substeps, n_steps):
    return _impl.quad_rk4_orbit(_c(A), _c(B), _c(b), _c(x0), float(dt), int(substeps), int(n_steps))


def lstm_recurrence_forward(gx, Whh, reverse=False):
    return _impl.lstm_recurrence_forward(_c(gx), _c(Whh), bool(reverse))


def lstm_recurrence_backward(dH, G, C, Whh, reverse=False):
    return _impl.lstm_recurrence_backward(_c(dH), _c(G), _c(C), _c(Whh), bool(reverse))
