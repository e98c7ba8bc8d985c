"""Ground-truth ODE systems, RK4 integration and trajectory generation."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import DivergenceError, InvalidInputError, NumericOverflowError

DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class Lorenz63Params:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def fixed_points(self):
        """The origin and the two symmetric equilibria (+-c, +-c, rho - 1)."""
        c = np.sqrt(self.beta * (self.rho - 1.0))
        return np.array([[0.0, 0.0, 0.0], [c, c, self.rho - 1.0], [-c, -c, self.rho - 1.0]])


@dataclass(frozen=True)
class OdeSystem:
    """A vector field ``rhs`` on R^dimension.

    ``quadratic`` optionally holds (A, B, b) such that
    rhs(x) = A x + B q(x) + b with the monomials q of ``surrogate.bilinear_features``;
    when present, integration runs on the compiled quadratic-flow kernel.
    """

    dimension: int
    rhs: Callable[[np.ndarray], np.ndarray]
    quadratic: Optional[tuple] = field(default=None, compare=False)

    def __call__(self, x):
        return self.rhs(x)


@dataclass
class Trajectory:
    t0: float
    dt: float
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or len(self.states) < 1:
            raise InvalidInputError("trajectory states must be a non-empty (n, d) array")
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.states)):
            raise InvalidInputError("trajectory states must be finite")

    def __len__(self):
        return len(self.states)

    @property
    def dimension(self):
        return self.states.shape[1]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.states))

    def subsample(self, stride):
        return Trajectory(self.t0, self.dt * stride, self.states[::stride].copy())


def lorenz63_rhs(x, params=Lorenz63Params()):
    """Lorenz-63 vector field; accepts a single state or a stack (..., 3)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (3,):
        raise InvalidInputError(f"Lorenz-63 state must have 3 components, got shape {x.shape}")
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [
            params.sigma * (x2 - x1),
            params.rho * x1 - x2 - x1 * x3,
            x1 * x2 - params.beta * x3,
        ],
        axis=-1,
    )


def lorenz63_quadratic(params=Lorenz63Params()):
    """(A, B, b) of Lorenz-63 in the quadratic-flow form used by the surrogate."""
    A = np.array(
        [
            [-params.sigma, params.sigma, 0.0],
            [params.rho, -1.0, 0.0],
            [0.0, 0.0, -params.beta],
        ]
    )
    B = np.zeros((3, 6))
    B[1, 1] = -1.0  # x1 x3
    B[2, 0] = 1.0  # x1 x2
    return A, B, np.zeros(3)


def lorenz63_system(params=Lorenz63Params()):
    return OdeSystem(3, lambda x: lorenz63_rhs(x, params), quadratic=lorenz63_quadratic(params))


def rk4_step(rhs, x, dt, step=None):
    """One classical Runge-Kutta step of size ``dt``."""
    if dt < 0:
        raise InvalidInputError(f"dt must be non-negative, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    if dt == 0:
        return x.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("RK4 step produced non-finite values", step=step)
    return out


def _first_divergent_row(states):
    with np.errstate(invalid="ignore"):
        bad = ~np.all(np.abs(states) <= DIVERGENCE_BOUND, axis=1)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def simulate(system, x0, dt, n_steps, spinup=0):
    """Integrate ``spinup + n_steps`` RK4 steps and keep the last ``n_steps + 1`` states.

    ``system`` is an :class:`OdeSystem` or a bare vector-field callable.
    Raises :class:`DivergenceError` (with the step index counted from x0) as soon
    as any component exceeds 1e6 in magnitude.
    """
    if n_steps < 0 or spinup < 0:
        raise InvalidInputError("n_steps and spinup must be non-negative")
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise InvalidInputError("initial state must be finite")
    total = spinup + n_steps

    quad = getattr(system, "quadratic", None)
    if quad is not None:
        A, B, b = quad
        orbit = kernels.quad_rk4_orbit(A, B, b, x0, dt, 1, total)
        bad = _first_divergent_row(orbit)
        if bad is not None:
            raise DivergenceError("trajectory diverged", step=bad)
    else:
        rhs = system.rhs if isinstance(system, OdeSystem) else system
        orbit = np.empty((total + 1, x0.size))
        orbit[0] = x0
        x = x0
        for t in range(1, total + 1):
            try:
                x = rk4_step(rhs, x, dt, step=t)
            except NumericOverflowError as exc:
                raise DivergenceError("trajectory diverged", step=t) from exc
            if np.any(np.abs(x) > DIVERGENCE_BOUND):
                raise DivergenceError("trajectory diverged", step=t)
            orbit[t] = x
    return Trajectory(t0=spinup * dt, dt=dt, states=orbit[spinup:].copy())
