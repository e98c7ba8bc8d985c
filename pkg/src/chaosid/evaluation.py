"""Short-term forecast error and first Lyapunov exponent of a learned one-step map.

A "model" here is any callable mapping an (N, d) batch of states to the states
one model step (length ``delta``) later.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import DIVERGENCE_BOUND, Trajectory
from .errors import DivergenceError, InvalidInputError
from . import io


@dataclass
class ForecastReport:
    rmse: dict
    n_initials: int
    n_failed: int
    delta: float

    @property
    def rmse_h(self):
        return self.rmse.get(1, float("nan"))

    @property
    def rmse_4h(self):
        return self.rmse.get(4, float("nan"))


@dataclass
class LyapunovReport:
    lambda1: float
    n_steps: int
    renorm_interval: int
    n_reperturbed: int = 0
    log_growth: list = field(default_factory=list, repr=False)


def _healthy(X):
    with np.errstate(invalid="ignore"):
        return np.all(np.abs(X) <= DIVERGENCE_BOUND, axis=1)


def _step_active(model, X, alive):
    """Advance the rows flagged in ``alive``; rows that blow up are switched off."""
    out = np.full_like(X, np.nan)
    while alive.any():
        rows = np.flatnonzero(alive)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                Y = np.asarray(model(X[rows]), dtype=np.float64)
        except DivergenceError as exc:
            if exc.index is None:
                raise
            alive[rows[exc.index]] = False
            continue
        ok = _healthy(Y)
        out[rows[ok]] = Y[ok]
        alive[rows[~ok]] = False
        break
    return out


def forecast_rmse(model, truth, n_initials=1000, horizons=(1, 4), delta=None):
    """RMS Euclidean forecast error at each horizon over evenly spaced start states.

    Starts whose forecast leaves the finite range are counted in ``n_failed``
    and excluded from every horizon's average.
    """
    states = truth.states if isinstance(truth, Trajectory) else np.asarray(truth, dtype=np.float64)
    if delta is None:
        delta = truth.dt if isinstance(truth, Trajectory) else float("nan")
    max_h = max(horizons)
    if n_initials < 1 or len(states) - 1 < max_h:
        raise InvalidInputError("truth trajectory too short for the requested horizons")
    starts = np.round(np.linspace(0, len(states) - 1 - max_h, n_initials)).astype(int)
    X = states[starts].copy()
    alive = np.ones(len(starts), dtype=bool)
    preds = {}
    for step in range(1, max_h + 1):
        X = _step_active(model, X, alive)
        if step in horizons:
            preds[step] = X.copy()
    rmse = {}
    for h in horizons:
        err = preds[h][alive] - states[starts[alive] + h]
        rmse[h] = float(np.sqrt(np.mean(np.sum(err * err, axis=1)))) if alive.any() else float("nan")
    return ForecastReport(rmse=rmse, n_initials=len(starts), n_failed=int((~alive).sum()),
                          delta=float(delta))


def lyapunov_lambda1(model, x0, n_steps=10000, delta=0.01, renorm_interval=10, d0=1e-8):
    """Two-trajectory Benettin estimate of the largest Lyapunov exponent.

    A companion orbit starts ``d0`` away along (1, ..., 1)/sqrt(d) and is pulled
    back to distance ``d0`` every ``renorm_interval`` steps;
    lambda1 = sum(log(d_i / d0)) / (n_steps * delta).
    """
    if n_steps < renorm_interval or renorm_interval < 1:
        raise InvalidInputError("need n_steps >= renorm_interval >= 1")
    x = np.asarray(x0, dtype=np.float64).ravel()
    u = np.ones_like(x) / np.sqrt(x.size)
    pair = np.stack([x, x + d0 * u])
    total = 0.0
    growth = []
    reperturbed = 0
    for step in range(1, n_steps + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                pair = np.asarray(model(pair), dtype=np.float64)
        except DivergenceError as exc:
            raise DivergenceError("orbit diverged", step=step) from exc
        if not _healthy(pair).all():
            raise DivergenceError("orbit diverged", step=step)
        if step % renorm_interval == 0 or step == n_steps:
            sep = pair[1] - pair[0]
            dist = float(np.sqrt(sep @ sep))
            if dist == 0.0:
                reperturbed += 1
                pair[1] = pair[0] + d0 * u
                continue
            g = np.log(dist / d0)
            total += g
            growth.append(g)
            pair[1] = pair[0] + sep * (d0 / dist)
    return LyapunovReport(lambda1=total / (n_steps * delta), n_steps=n_steps,
                          renorm_interval=renorm_interval, n_reperturbed=reperturbed,
                          log_growth=growth)


def free_run(model, x0, n_steps, spinup=0):
    """Iterate ``model`` from ``x0``; returns the n_steps + 1 states after the spinup."""
    orbit_fn = getattr(model, "orbit", None)
    total = spinup + n_steps
    if orbit_fn is not None:
        orbit = orbit_fn(x0, total)
        bad = np.flatnonzero(~_healthy(orbit))
        if bad.size:
            raise DivergenceError("free run diverged", step=int(bad[0]))
        return orbit[spinup:]
    x = np.asarray(x0, dtype=np.float64).reshape(1, -1)
    orbit = np.empty((total + 1, x.shape[1]))
    orbit[0] = x[0]
    for t in range(1, total + 1):
        try:
            x = np.asarray(model(x), dtype=np.float64).reshape(1, -1)
        except DivergenceError as exc:
            raise DivergenceError("free run diverged", step=t) from exc
        if not _healthy(x).all():
            raise DivergenceError("free run diverged", step=t)
        orbit[t] = x[0]
    return orbit[spinup:]


def attractor_export(model, x0, n_steps, path, delta=0.01, spinup=0, config_hash=None):
    """Write the free-run orbit as ``t,x1,x2,x3`` CSV; returns the trajectory."""
    orbit = free_run(model, x0, n_steps, spinup=spinup)
    traj = Trajectory(t0=spinup * delta, dt=delta, states=orbit)
    io.write_trajectory_csv(traj, path, config_hash=config_hash)
    return traj
