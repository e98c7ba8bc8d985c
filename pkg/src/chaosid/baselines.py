"""Reference identification methods: thresholded sparse regression over a
quadratic dictionary (optionally after Hann smoothing) and analog forecasting.

The direct bilinear-flow fit on observations needs no code of its own; it is
:func:`chaosid.surrogate.fit_m_step` applied to the (interpolated) data.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .surrogate import SurrogateParams, fit_m_step

DICTIONARY = ("1", "x1", "x2", "x3", "x1x2", "x1x3", "x2x3", "x1^2", "x2^2", "x3^2")


def hanning_smooth(series, window=20):
    """Per-column convolution with unit-sum Hann weights; edges renormalise the truncated window."""
    X = np.asarray(series, dtype=np.float64)
    if window < 2:
        raise InvalidInputError("window must be >= 2")
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    if len(X) < 1:
        raise InvalidInputError("series is empty")
    w = np.hanning(window)
    if not w.sum() > 0:
        raise InvalidInputError("window too short for non-zero Hann weights")
    w = w / w.sum()
    # output t collects inputs t - c + k, k = 0..window-1
    c = (window - 1) // 2
    T = len(X)
    num = np.zeros_like(X)
    den = np.zeros(T)
    for k, wk in enumerate(w):
        shift = k - c
        lo, hi = max(0, -shift), min(T, T - shift)
        if lo >= hi:
            continue
        num[lo:hi] += wk * X[lo + shift:hi + shift]
        den[lo:hi] += wk
    out = num / den[:, None]
    return out[:, 0] if squeeze else out


def dictionary_features(X):
    """(T, 10) design matrix in :data:`DICTIONARY` order."""
    X = np.asarray(X, dtype=np.float64)
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    return np.column_stack([np.ones(len(X)), x1, x2, x3, x1 * x2, x1 * x3, x2 * x3,
                            x1 * x1, x2 * x2, x3 * x3])


@dataclass
class SparseModel:
    coefficients: np.ndarray
    threshold: float

    def rhs(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = dictionary_features(x.reshape(-1, 3)) @ self.coefficients.T
        return out[0] if single else out

    def to_surrogate(self):
        c = self.coefficients
        return SurrogateParams(c[:, 1:4], c[:, 4:10], c[:, 0])

    def to_json(self):
        return {"dictionary": list(DICTIONARY), "threshold": self.threshold,
                "coefficients": self.coefficients.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["coefficients"], dtype=np.float64), float(d["threshold"]))


def _lstsq(Theta, Y, ridge):
    rank = np.linalg.matrix_rank(Theta)
    if rank < Theta.shape[1]:
        warnings.warn(f"dictionary is rank deficient ({rank} < {Theta.shape[1]}); using a ridge solve",
                      RuntimeWarning, stacklevel=3)
        G = Theta.T @ Theta
        lam = ridge * max(np.trace(G) / G.shape[0], 1.0)
        return np.linalg.solve(G + lam * np.eye(G.shape[0]), Theta.T @ Y)
    return np.linalg.lstsq(Theta, Y, rcond=None)[0]


def sparse_fit(states, dt, threshold=0.1, max_sweeps=10, ridge=1e-10):
    """Sequentially thresholded least squares on centred-difference derivatives."""
    X = np.asarray(states, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 3:
        raise InvalidInputError(f"states must be (T, 3), got {X.shape}")
    if len(X) < 5:
        raise InvalidInputError("sparse_fit needs at least 5 states")
    dX = np.gradient(X, dt, axis=0)
    Theta = dictionary_features(X)
    if not np.any(Theta[:, 1:]):
        # nothing moves: the only consistent model is the zero field
        return SparseModel(np.zeros((3, 10)), threshold)
    coef = _lstsq(Theta, dX, ridge).T
    for _ in range(max_sweeps):
        small = np.abs(coef) < threshold
        new = np.zeros_like(coef)
        for i in range(3):
            keep = ~small[i]
            if keep.any():
                new[i, keep] = _lstsq(Theta[:, keep], dX[:, i], ridge)
        done = np.array_equal(np.abs(new) < threshold, small)
        coef = new
        if done:
            break
    coef[np.abs(coef) < threshold] = 0.0
    return SparseModel(coef, threshold)


@dataclass
class AnalogCatalog:
    states: np.ndarray
    successors: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.successors = np.asarray(self.successors, dtype=np.float64)
        if self.states.shape != self.successors.shape or self.states.ndim != 2:
            raise InvalidInputError("states and successors must be matching (M, d) arrays")
        if len(self.states) == 0:
            raise InvalidInputError("analog catalog is empty")

    @classmethod
    def from_series(cls, series):
        series = np.asarray(series, dtype=np.float64)
        return cls(series[:-1], series[1:])


def analog_forecast(catalog, x, k=5):
    """Mean successor of the ``k`` nearest catalog states; accepts (d,) or (n, d).

    Equal distances are resolved in favour of the lower catalog index.
    """
    M = len(catalog.states)
    if not 1 <= k <= M:
        raise InvalidInputError(f"k must be in [1, {M}], got {k}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    Q = x.reshape(-1, catalog.states.shape[1])
    out = np.empty_like(Q)
    for i, q in enumerate(Q):
        diff = catalog.states - q
        dist = np.einsum("ij,ij->i", diff, diff)
        nearest = np.argsort(dist, kind="stable")[:k]
        out[i] = catalog.successors[nearest].mean(axis=0)
    return out[0] if single else out


class AnalogModel:
    """One-step map wrapper so analog forecasting plugs into the evaluation routines."""

    def __init__(self, catalog, k=5, delta=0.01):
        self.catalog = catalog
        self.k = k
        self.delta = delta

    def __call__(self, x):
        return analog_forecast(self.catalog, x, self.k)


def fit_binn(obs_states, theta_init, flow_cfg, n_steps, optimizer=None, lr_schedule=None):
    """Direct bilinear-flow fit on (interpolated) observations, no state inference."""
    return fit_m_step(theta_init, flow_cfg, obs_states, n_steps, optimizer, lr_schedule=lr_schedule)
