"""Learn chaotic dynamics from noisy, partially observed trajectories."""

from .dynamics import Lorenz63Params, OdeSystem, Trajectory, lorenz63_rhs, lorenz63_system, rk4_step, simulate
from .enks import EnksConfig, enks_em, enks_smooth
from .errors import (ChaosIdError, DivergenceError, InvalidInputError, NumericError,
                     NumericOverflowError, ShapeError, UnrecoverableComponentError)
from .evaluation import forecast_rmse, lyapunov_lambda1
from .kernels import BACKEND
from .observation import NoiseSpec, ObservationSeries, apply_noise, linear_interpolate, mask_irregular, mask_regular
from .surrogate import FlowConfig, SurrogateModel, SurrogateParams, forecast_step, loss_m
from .voden import VodenConfig, voden_train

__version__ = "0.1.0"
