"""Ensemble Kalman filter / smoother and the EnKS-EM loop.

The smoother is the ensemble Rauch-Tung-Striebel form: a perturbed-observation
EnKF forward pass, then a backward sweep that corrects every analysis member
with the cross-time covariance between analysis at t and forecast at t + 1.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidInputError
from .observation import linear_interpolate
from .optim import RMSprop
from .surrogate import SurrogateModel, fit_m_step, geometric_schedule, loss_m

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnksConfig:
    n_members: int = 50
    model_noise_var: float = 1e-3
    obs_noise_var: float = 1.0
    inflation: float = 1.0
    seed: int = 0
    init_var: float = 4.0
    jitter: float = 1e-8
    # re-estimate the model noise from the M-step residual each EM iteration;
    # model_noise_var then acts as a floor and the first E-step uses the larger
    # of obs_noise_var and the observed increment variance
    adaptive_model_noise: bool = False
    # rescale every ensemble draw to zero sample mean and unit sample variance
    exact_moments: bool = True

    def __post_init__(self):
        if self.n_members < 2:
            raise InvalidInputError("an ensemble needs at least 2 members")
        if self.model_noise_var < 0:
            raise InvalidInputError("model_noise_var must be >= 0")
        if not self.obs_noise_var > 0:
            raise InvalidInputError("obs_noise_var must be > 0")
        if self.inflation < 1:
            raise InvalidInputError("inflation must be >= 1")


@dataclass
class SmootherResult:
    means: np.ndarray
    spreads: np.ndarray


@dataclass
class EmResult:
    theta: object
    smoothing: SmootherResult
    history: list = field(default_factory=list)

    @property
    def losses(self):
        return [row["loss_m"] for row in self.history]


def _solve_regularized(M, rhs, jitter, what):
    """M^{-1} rhs, adding ``jitter * I`` to M if it is numerically singular."""
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        warnings.warn(f"{what} is singular; regularizing with {jitter:g} * I", RuntimeWarning, stacklevel=3)
        M = M + jitter * np.eye(len(M))
    return np.linalg.solve(M, rhs)


def normal_draws(rng, shape, exact=False):
    """Standard normal (N, d) draws; ``exact`` fixes each column's sample mean to 0 and variance to 1."""
    z = rng.standard_normal(shape)
    if exact and shape[0] > 1:
        z = z - z.mean(axis=0)
        sd = z.std(axis=0, ddof=1)
        z = z / np.where(sd > 0, sd, 1.0)
    return z


def enkf_forecast(ens, model, model_noise_var, inflation, rng, exact=False):
    """Propagate every member, add N(0, Q I) noise, inflate anomalies about the mean."""
    ens = np.asarray(ens, dtype=np.float64)
    try:
        out = np.array(model(ens), dtype=np.float64)
    except DivergenceError as exc:
        raise DivergenceError("ensemble member diverged", index=exc.index) from exc
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        raise DivergenceError("ensemble member diverged", index=int(np.flatnonzero(bad)[0]))
    if model_noise_var > 0:
        out += np.sqrt(model_noise_var) * normal_draws(rng, out.shape, exact)
    if inflation != 1.0:
        mean = out.mean(axis=0)
        out = mean + inflation * (out - mean)
    return out


def enkf_analysis(ens, y, mask, obs_noise_var, rng, jitter=1e-8, exact=False):
    """Perturbed-observation update on the observed components only (H selects rows)."""
    ens = np.asarray(ens, dtype=np.float64)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return ens.copy()
    N = len(ens)
    anomalies = ens - ens.mean(axis=0)
    HA = anomalies[:, idx]
    P_xy = anomalies.T @ HA / (N - 1)
    P_yy = HA.T @ HA / (N - 1) + obs_noise_var * np.eye(idx.size)
    noise = normal_draws(rng, (N, idx.size), exact)
    perturbed = np.asarray(y, dtype=np.float64)[idx] + np.sqrt(obs_noise_var) * noise
    innovations = perturbed - ens[:, idx]
    weights = _solve_regularized(P_yy, innovations.T, jitter, "innovation covariance")
    return ens + (P_xy @ weights).T


def enks_smooth(obs, model, cfg, rng=None):
    """Fixed-interval ensemble smoother; returns per-time member means and spreads.

    ``model`` maps an (N, d) ensemble to its one-step forecast, e.g. a
    :class:`~chaosid.surrogate.SurrogateModel`.
    """
    T, d = obs.values.shape
    if T < 1:
        raise InvalidInputError("observation series is empty")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    N = cfg.n_members
    start = linear_interpolate(obs)[0]
    ens = start + np.sqrt(cfg.init_var) * normal_draws(rng, (N, d), cfg.exact_moments)

    forecasts = np.empty((T, N, d))
    analyses = np.empty((T, N, d))
    for t in range(T):
        if t > 0:
            try:
                ens = enkf_forecast(ens, model, cfg.model_noise_var, cfg.inflation, rng, cfg.exact_moments)
            except DivergenceError as exc:
                raise DivergenceError("ensemble forecast diverged", step=t, index=exc.index) from exc
        forecasts[t] = ens
        ens = enkf_analysis(ens, obs.values[t], obs.mask[t], cfg.obs_noise_var, rng, cfg.jitter,
                            cfg.exact_moments)
        analyses[t] = ens

    smoothed = analyses.copy()
    if T > 1:
        Aa = analyses[:-1] - analyses[:-1].mean(axis=1, keepdims=True)
        Af = forecasts[1:] - forecasts[1:].mean(axis=1, keepdims=True)
        C_af = np.einsum("tni,tnj->tij", Aa, Af) / (N - 1)
        C_ff = np.einsum("tni,tnj->tij", Af, Af) / (N - 1)
        gains = _smoother_gains(C_af, C_ff, cfg.jitter)
        for t in range(T - 2, -1, -1):
            smoothed[t] = analyses[t] + (smoothed[t + 1] - forecasts[t + 1]) @ gains[t].T
    return SmootherResult(means=smoothed.mean(axis=1), spreads=smoothed.std(axis=1, ddof=1))


def _smoother_gains(C_af, C_ff, jitter):
    # J_t = C_af C_ff^{-1}; C_ff is symmetric so solve on the transposed system
    try:
        np.linalg.cholesky(C_ff)
    except np.linalg.LinAlgError:
        warnings.warn(f"forecast covariance is singular; regularizing with {jitter:g} * I",
                      RuntimeWarning, stacklevel=3)
        C_ff = C_ff + jitter * np.eye(C_ff.shape[-1])
    return np.swapaxes(np.linalg.solve(C_ff, np.swapaxes(C_af, 1, 2)), 1, 2)


def increment_variance(obs):
    """Mean per-coordinate variance of y[t+1] - y[t] over pairs observed at both times."""
    inc = np.diff(obs.values, axis=0)
    per_dim = []
    for col in inc.T:
        col = col[np.isfinite(col)]
        if col.size >= 2:
            per_dim.append(col.var())
    return float(np.mean(per_dim)) if per_dim else 0.0


def enks_em(obs, theta_init, flow_cfg, cfg, n_em_iters=20, n_m_steps=200, lr=3e-4, lr_final=None,
            precondition=True, callback=None):
    """Alternate EnKS smoothing (E-step) with RMSprop refits of the surrogate (M-step).

    The learning rate decays geometrically from ``lr`` to ``lr_final`` over all
    M-step updates (constant when ``lr_final`` is None). Each history row records
    the iteration, the model noise variance used by the E-step, loss_m on the
    fresh posterior means before the M-step and ``loss_m`` after it.
    """
    if n_em_iters < 1:
        raise InvalidInputError("n_em_iters must be >= 1")
    if n_m_steps < 1:
        raise InvalidInputError("n_m_steps must be >= 1")
    theta = theta_init
    optimizer = RMSprop(lr=lr)
    total = n_em_iters * n_m_steps
    schedule = None if lr_final is None else geometric_schedule(lr, lr_final, total)
    T, d = obs.values.shape
    if cfg.adaptive_model_noise:
        # the first E-step must not trust a random model more than persistence
        q_var = max(cfg.obs_noise_var, cfg.model_noise_var, increment_variance(obs))
    else:
        q_var = cfg.model_noise_var
    history = []
    smoothing = None
    for it in range(n_em_iters):
        rng = np.random.default_rng([cfg.seed, it])
        e_cfg = replace(cfg, model_noise_var=q_var)
        smoothing = enks_smooth(obs, SurrogateModel(theta, flow_cfg), e_cfg, rng=rng)
        x_star = smoothing.means
        before = loss_m(theta, flow_cfg, x_star)
        it_schedule = None if schedule is None else (lambda k, off=it * n_m_steps: schedule(off + k))
        try:
            theta, _ = fit_m_step(theta, flow_cfg, x_star, n_m_steps, optimizer,
                                  precondition=precondition, lr_schedule=it_schedule)
        except DivergenceError as exc:
            raise DivergenceError("M-step diverged", step=exc.step, index=it) from exc
        after = loss_m(theta, flow_cfg, x_star)
        if not np.isfinite(after):
            raise DivergenceError("loss_m is not finite", index=it)
        row = {"iter": it, "model_noise_var": q_var, "loss_before": before, "loss_m": after}
        history.append(row)
        log.info("EnKS-EM iter %d: Q %.3g, loss_m %.6g -> %.6g", it, q_var, before, after)
        if callback is not None:
            callback(row, theta, smoothing)
        if cfg.adaptive_model_noise and T > 1:
            # maximum-likelihood isotropic variance of the one-step residual
            q_var = max(cfg.model_noise_var, after / ((T - 1) * d))
    return EmResult(theta=theta, smoothing=smoothing, history=history)
