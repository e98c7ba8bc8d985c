"""Bilinear residual flow x' = A x + B q(x) + b, its RK4 one-step map and the M-step loss.

Two evaluation paths exist: plain numpy / compiled kernels for inference
(ensemble forecasts, free runs) and the autodiff tape for training.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .dynamics import Lorenz63Params, OdeSystem, lorenz63_quadratic
from .errors import DivergenceError, InvalidInputError
from .optim import RMSprop

FEATURE_LABELS = ("x1x2", "x1x3", "x2x3", "x1^2", "x2^2", "x3^2")
PARAM_NAMES = ("A", "B", "b")


@dataclass
class SurrogateParams:
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.array(self.A, dtype=np.float64).reshape(3, 3)
        self.B = np.array(self.B, dtype=np.float64).reshape(3, 6)
        self.b = np.array(self.b, dtype=np.float64).reshape(3)

    @classmethod
    def zeros(cls):
        return cls(np.zeros((3, 3)), np.zeros((3, 6)), np.zeros(3))

    @classmethod
    def lorenz63(cls, params=Lorenz63Params()):
        """Parameters that reproduce the Lorenz-63 vector field exactly."""
        return cls(*lorenz63_quadratic(params))

    @classmethod
    def random(cls, rng, scale=0.01):
        """A, B uniform on [-scale, scale], b = 0: the flow starts close to zero."""
        A = rng.uniform(-scale, scale, size=(3, 3))
        B = rng.uniform(-scale, scale, size=(3, 6))
        return cls(A, B, np.zeros(3))

    def as_dict(self):
        return {"A": self.A, "B": self.B, "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["B"], d["b"])

    def max_abs_diff(self, other):
        return max(float(np.max(np.abs(getattr(self, k) - getattr(other, k)))) for k in PARAM_NAMES)

    def system(self):
        return OdeSystem(3, lambda x: flow_rhs(self, x), quadratic=(self.A, self.B, self.b))


@dataclass(frozen=True)
class FlowConfig:
    """``substeps`` RK4 steps of size ``dt`` make up one model step of length ``delta``."""

    dt: float = 0.01
    substeps: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise InvalidInputError(f"substeps must be a positive integer, got {self.substeps}")

    @property
    def delta(self):
        return self.dt * self.substeps


def bilinear_features(x):
    """(x1 x2, x1 x3, x2 x3, x1^2, x2^2, x3^2) along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([x1 * x2, x1 * x3, x2 * x3, x1 * x1, x2 * x2, x3 * x3], axis=-1)


def flow_rhs(theta, x):
    x = np.asarray(x, dtype=np.float64)
    return x @ theta.A.T + bilinear_features(x) @ theta.B.T + theta.b


def forecast_step(theta, cfg, x):
    """f_theta: ``cfg.substeps`` RK4 steps of the flow; accepts (3,) or (N, 3)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(-1, 3)
    with np.errstate(over="ignore", invalid="ignore"):
        Y = kernels.quad_rk4(theta.A, theta.B, theta.b, X, cfg.dt, cfg.substeps)
    bad = ~np.all(np.isfinite(Y), axis=1)
    if bad.any():
        raise DivergenceError("surrogate forecast produced non-finite values", index=int(np.flatnonzero(bad)[0]))
    return Y[0] if single else Y


class SurrogateModel:
    """Callable one-step map x -> f_theta(x) bundling parameters and flow config."""

    def __init__(self, theta, cfg=FlowConfig()):
        self.theta = theta
        self.cfg = cfg

    @property
    def delta(self):
        return self.cfg.delta

    def __call__(self, x):
        return forecast_step(self.theta, self.cfg, x)

    def orbit(self, x0, n_steps):
        """Free run of ``n_steps`` model steps; rows after a blow-up are NaN."""
        t = self.theta
        return kernels.quad_rk4_orbit(t.A, t.B, t.b, x0, self.cfg.dt, self.cfg.substeps, n_steps)


# -- tape versions -----------------------------------------------------------

def flow_rhs_tape(P, X):
    """Tape counterpart of :func:`flow_rhs` for a batch tensor X (n, 3)."""
    x1, x2, x3 = X[:, 0:1], X[:, 1:2], X[:, 2:3]
    q = ad.concat([x1 * x2, x1 * x3, x2 * x3, x1 * x1, x2 * x2, x3 * x3], axis=1)
    return X @ P["A"].T + q @ P["B"].T + P["b"]


def forecast_tape(P, cfg, X):
    dt = cfg.dt
    for _ in range(cfg.substeps):
        k1 = flow_rhs_tape(P, X)
        k2 = flow_rhs_tape(P, X + k1 * (0.5 * dt))
        k3 = flow_rhs_tape(P, X + k2 * (0.5 * dt))
        k4 = flow_rhs_tape(P, X + k3 * dt)
        X = X + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    return X


def dynamics_residual_tape(P, cfg, X):
    """sum_t ||f(x_t) - x_{t+1}||^2 over a (T, 3) state tensor."""
    return ad.sqnorm(forecast_tape(P, cfg, X[:-1]) - X[1:])


def _check_states(states):
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != 3:
        raise InvalidInputError(f"states must be a (T, 3) array, got {states.shape}")
    if len(states) < 2:
        raise InvalidInputError("loss_m needs at least two states")
    return states


def loss_m(theta, cfg, states):
    """sum_{t=1}^{T-1} ||f_theta(x_t) - x_{t+1}||^2 (squared Euclidean norm)."""
    states = _check_states(states)
    with np.errstate(over="ignore", invalid="ignore"):
        pred = kernels.quad_rk4(theta.A, theta.B, theta.b, states[:-1], cfg.dt, cfg.substeps)
        r = pred - states[1:]
        return float(np.dot(r.ravel(), r.ravel()))


def loss_m_and_grad(theta, cfg, states):
    states = _check_states(states)
    tape = ad.Tape()
    P = {k: tape.param(k, v) for k, v in theta.as_dict().items()}
    loss = dynamics_residual_tape(P, cfg, tape.constant(states))
    return float(loss.value), ad.backward(tape, loss)


@dataclass
class Preconditioner:
    """Affine change of coordinates for the M-step optimiser.

    [A B] = diag(scale) v W and b = scale * c - [A B] mean, where ``W`` whitens
    the regression features z = (x, q(x)) and ``scale`` is the spread of the
    finite-difference velocities. Gradient steps on (v, c) then see decorrelated,
    unit-scale directions; the model and the loss are unchanged.
    """

    mean: np.ndarray
    W: np.ndarray
    W_inv: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.zeros(9), np.eye(9), np.eye(9), np.ones(3))

    @classmethod
    def from_states(cls, states, delta, rcond=1e-12):
        states = np.asarray(states, dtype=np.float64)
        Z = np.hstack([states[:-1], bilinear_features(states[:-1])])
        if len(Z) < 2:
            return cls.identity()
        w, V = np.linalg.eigh(np.cov(Z.T))
        if not w[-1] > 0 or w[0] < rcond * w[-1]:
            # degenerate data: whitening would blow up the null directions
            return cls.identity()
        scale = np.std(np.diff(states, axis=0), axis=0) / delta
        scale = np.where(scale > 0, scale, 1.0)
        return cls(Z.mean(axis=0), (V / np.sqrt(w)) @ V.T, (V * np.sqrt(w)) @ V.T, scale)

    def to_internal(self, theta):
        AB = np.hstack([theta.A, theta.B])
        return {"v": (AB @ self.W_inv) / self.scale[:, None],
                "c": ((theta.b + AB @ self.mean) / self.scale)[:, None]}

    def to_params(self, p):
        AB = self.scale[:, None] * (p["v"] @ self.W)
        return SurrogateParams(AB[:, :3], AB[:, 3:], self.scale * p["c"][:, 0] - AB @ self.mean)

    def params_tape(self, tape, p):
        S = tape.constant(np.diag(self.scale))
        AB = S @ tape.param("v", p["v"]) @ tape.constant(self.W)
        b = (S @ tape.param("c", p["c"]) - AB @ tape.constant(self.mean[:, None]))[:, 0]
        return {"A": AB[:, 0:3], "B": AB[:, 3:9], "b": b}


def fit_m_step(theta, cfg, states, n_steps, optimizer=None, precondition=True, lr_schedule=None,
               keep_best=True):
    """``n_steps`` RMSprop steps on :func:`loss_m`; returns (theta, per-step losses).

    With ``precondition`` the optimiser works in the whitened coordinates of
    :class:`Preconditioner` on the mean residual (pass an instance to fix the
    basis, otherwise it is fitted to ``states``), so the epsilon of RMSprop
    stays negligible near an optimum. ``lr_schedule(k)``, if given, sets the
    learning rate of step k. With ``keep_best`` the iterate with the lowest
    loss_m is returned, so the result never scores worse than ``theta``.
    ``losses[k]`` is loss_m before the k-th update.
    """
    if n_steps < 0:
        raise InvalidInputError("n_steps must be >= 0")
    states = _check_states(states)
    if optimizer is None:
        optimizer = RMSprop()
    if isinstance(precondition, Preconditioner):
        pre = precondition
    else:
        pre = Preconditioner.from_states(states, cfg.delta) if precondition else None
    weight = 1.0 / states[1:].size if pre else 1.0
    p = pre.to_internal(theta) if pre else theta.as_dict()
    losses = []
    best_value, best_p = np.inf, p
    for k in range(n_steps):
        tape = ad.Tape()
        if pre:
            P = pre.params_tape(tape, p)
        else:
            P = {name: tape.param(name, v) for name, v in p.items()}
        loss = dynamics_residual_tape(P, cfg, tape.constant(states))
        value = float(loss.value)
        if not np.isfinite(value):
            raise DivergenceError("loss_m is not finite", step=k)
        losses.append(value)
        if value < best_value:
            best_value, best_p = value, p
        if lr_schedule is not None:
            optimizer.lr = float(lr_schedule(k))
        p = optimizer.step(p, ad.backward(tape, loss * weight))

    def params(q):
        return pre.to_params(q) if pre else SurrogateParams.from_dict(q)

    result = params(p)
    if keep_best and n_steps > 0:
        # select with one loss function so "no worse than theta" holds exactly
        candidates = [result, params(best_p), theta]
        scores = [loss_m(c, cfg, states) for c in candidates]
        finite = [i for i, v in enumerate(scores) if np.isfinite(v)]
        result = candidates[min(finite, key=lambda i: scores[i])]
    return result, losses


def geometric_schedule(lr_start, lr_end, n_total):
    """k -> lr_start * (lr_end / lr_start) ** (k / (n_total - 1))."""
    if not (lr_start > 0 and lr_end > 0):
        raise InvalidInputError("learning rates must be positive")
    ratio = lr_end / lr_start
    span = max(n_total - 1, 1)
    return lambda k: lr_start * ratio ** (min(k, span) / span)


def checkpoint_dict(theta, cfg):
    """Flat JSON-ready mapping, matrices in row-major order."""
    return {
        "A": theta.A.ravel().tolist(),
        "B": theta.B.ravel().tolist(),
        "b": theta.b.tolist(),
        "dt": cfg.dt,
        "substeps": cfg.substeps,
    }


def from_checkpoint_dict(d):
    return SurrogateParams(d["A"], d["B"], d["b"]), FlowConfig(float(d["dt"]), int(d["substeps"]))
