"""Observation scenarios: Gaussian noise, regular and irregular masking, interpolation.

Masked-out entries of :class:`ObservationSeries.values` hold NaN, but consumers
must go through ``mask``; the sentinel is only there so exported files show gaps.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnrecoverableComponentError


@dataclass(frozen=True)
class NoiseSpec:
    variance: float
    seed: int = 0

    def __post_init__(self):
        if not self.variance >= 0:
            raise InvalidInputError(f"noise variance must be >= 0, got {self.variance}")


@dataclass
class ObservationSeries:
    t0: float
    dt: float
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise InvalidInputError(
                f"values {self.values.shape} and mask {self.mask.shape} must be matching (T, d) arrays"
            )
        if not np.all(np.isfinite(self.values[self.mask])):
            raise InvalidInputError("observed entries must be finite")
        self.values = np.where(self.mask, self.values, np.nan)

    def __len__(self):
        return len(self.values)

    @property
    def dimension(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.values))

    def filled(self, fill=0.0):
        """Values with masked entries replaced by ``fill`` (safe for arithmetic)."""
        return np.where(self.mask, self.values, fill)


def apply_noise(traj, spec, mask=None):
    """Add i.i.d. N(0, variance) noise to every state component (H = identity).

    Noise is drawn for all T x d entries in row-major order before ``mask`` is
    applied, so one seed gives the same observed values in every scenario.
    """
    states = traj.states
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(states.shape)
    values = states + np.sqrt(spec.variance) * noise
    if mask is None:
        mask = np.ones(states.shape, dtype=bool)
    return ObservationSeries(traj.t0, traj.dt, values, mask)


def apply_mask(obs, mask):
    """Hide the entries where ``mask`` is False (intersected with the existing mask)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != obs.mask.shape:
        raise InvalidInputError(f"mask shape {mask.shape} does not match series {obs.mask.shape}")
    return ObservationSeries(obs.t0, obs.dt, obs.values, obs.mask & mask)


def mask_regular(T, period, d=3):
    """Rows with t % period == 0 fully observed, all others fully missing."""
    if period < 1:
        raise InvalidInputError(f"period must be >= 1, got {period}")
    rows = np.arange(T) % period == 0
    return np.repeat(rows[:, None], d, axis=1)


def mask_irregular(T, d, rate, seed):
    """Independent Bernoulli(rate) flag for every (time, component)."""
    if not 0.0 <= rate <= 1.0:
        raise InvalidInputError(f"rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    return rng.random((T, d)) < rate


def decimate(obs, period):
    """Keep every ``period``-th row; the regular-sampling scenario as a coarser series."""
    if period < 1:
        raise InvalidInputError(f"period must be >= 1, got {period}")
    return ObservationSeries(obs.t0, obs.dt * period, obs.values[::period], obs.mask[::period])


def linear_interpolate(obs):
    """Per-component linear interpolation in time between observed entries.

    Before the first and after the last observation the nearest observed value
    is held. Raises :class:`UnrecoverableComponentError` for a component that is
    never observed.
    """
    T, d = obs.values.shape
    t = np.arange(T, dtype=np.float64)
    out = np.empty((T, d))
    for j in range(d):
        seen = obs.mask[:, j]
        if not seen.any():
            raise UnrecoverableComponentError(j)
        # np.interp already clamps to the end values outside the sample range
        out[:, j] = np.interp(t, t[seen], obs.values[seen, j])
    return out
