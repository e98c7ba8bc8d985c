import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chaosid import io
from chaosid.dynamics import Trajectory, lorenz63_rhs, rk4_step
from chaosid.errors import DivergenceError, InvalidInputError
from chaosid.evaluation import attractor_export, forecast_rmse, free_run, lyapunov_lambda1
from chaosid.surrogate import FlowConfig, SurrogateModel, SurrogateParams


def true_step(X):
    return rk4_step(lorenz63_rhs, X, 0.01)


def test_true_model_has_zero_forecast_error(lorenz_truth):
    rep = forecast_rmse(true_step, lorenz_truth, 200)
    assert rep.rmse_h < 1e-9 and rep.rmse_4h < 1e-9
    assert rep.n_failed == 0 and rep.delta == 0.01


def test_persistence_matches_hand_computation(lorenz_truth):
    states = lorenz_truth.states
    rep = forecast_rmse(lambda X: X.copy(), lorenz_truth, 50)
    starts = np.round(np.linspace(0, len(states) - 5, 50)).astype(int)
    for h, value in ((1, rep.rmse_h), (4, rep.rmse_4h)):
        err = states[starts + h] - states[starts]
        assert value == pytest.approx(np.sqrt(np.mean(np.sum(err ** 2, axis=1))), rel=1e-12)


def test_divergent_starts_are_excluded(lorenz_truth):
    def model(X):
        out = X.copy()
        out[X[:, 0] > 0] = np.inf
        return out

    rep = forecast_rmse(model, lorenz_truth, 100)
    assert 0 < rep.n_failed < 100
    assert rep.rmse_h == pytest.approx(forecast_rmse(lambda X: X.copy(), lorenz_truth, 100).rmse_h, rel=0.5)


def test_divergence_error_with_row_index_is_contained(lorenz_truth):
    def model(X):
        bad = np.flatnonzero(X[:, 0] > 10)
        if bad.size:
            raise DivergenceError("boom", index=int(bad[0]))
        return X.copy()

    rep = forecast_rmse(model, lorenz_truth, 100)
    assert rep.n_failed > 0 and np.isfinite(rep.rmse_h)


def test_forecast_rejects_short_truth():
    with pytest.raises(InvalidInputError):
        forecast_rmse(lambda X: X, Trajectory(0.0, 0.01, np.zeros((3, 3))), 10)


def test_true_lyapunov_exponent(lorenz_truth):
    model = SurrogateModel(SurrogateParams.lorenz63(), FlowConfig())
    start = time.perf_counter()
    rep = lyapunov_lambda1(model, lorenz_truth.states[0], 10000, 0.01)
    assert time.perf_counter() - start < 1.0
    assert rep.lambda1 == pytest.approx(0.91, abs=0.05)


@given(st.floats(0.3, 0.99), st.integers(1, 20))
def test_linear_contraction_exponent_is_exact(a, interval):
    # the reference orbit sits at the fixed point 0, so every separation shrinks by a per step
    rep = lyapunov_lambda1(lambda X: a * X, np.zeros(3), 40 * interval, 0.1, interval, d0=1e-3)
    assert rep.lambda1 == pytest.approx(np.log(a) / 0.1, rel=1e-9)


def test_diagonal_map_picks_dominant_rate():
    rates = np.array([1.02, 0.6, 0.3])
    n = 5000
    rep = lyapunov_lambda1(lambda X: X * rates, np.zeros(3), n, 0.01, 10, d0=1e-6)
    # renormalising a linear map telescopes: total growth is log |D^n u| with u = (1, 1, 1) / sqrt(3)
    log_sq = 2 * n * np.log(rates) - np.log(3.0)
    expected = 0.5 * np.logaddexp.reduce(log_sq) / (n * 0.01)
    assert rep.lambda1 == pytest.approx(expected, rel=1e-9)


def test_identity_map_has_zero_exponent():
    rep = lyapunov_lambda1(lambda X: X.copy(), np.ones(3), 100, 0.01)
    assert abs(rep.lambda1) < 1e-6


def test_collapsing_map_reperturbs():
    rep = lyapunov_lambda1(lambda X: np.zeros_like(X), np.ones(3), 100, 0.01)
    assert rep.n_reperturbed == 10


def test_lyapunov_raises_on_divergent_orbit():
    with pytest.raises(DivergenceError):
        lyapunov_lambda1(lambda X: 10 * X, np.ones(3), 100, 0.01)


def test_free_run_matches_orbit(lorenz_truth):
    model = SurrogateModel(SurrogateParams.lorenz63(), FlowConfig())
    x0 = lorenz_truth.states[0]
    orbit = free_run(model, x0, 200, spinup=10)
    np.testing.assert_allclose(orbit, lorenz_truth.states[10:211], atol=1e-9)
    generic = free_run(true_step, x0, 200, spinup=10)
    np.testing.assert_allclose(generic, orbit, atol=1e-9)


def test_free_run_divergence():
    with pytest.raises(DivergenceError):
        free_run(lambda X: 10 * X, np.ones(3), 100)


def test_attractor_export_round_trip(tmp_path, lorenz_truth):
    model = SurrogateModel(SurrogateParams.lorenz63(), FlowConfig())
    path = tmp_path / "attractor.csv"
    traj = attractor_export(model, lorenz_truth.states[0], 50, path, config_hash="abc123")
    back = io.read_trajectory_csv(path)
    np.testing.assert_array_equal(back.states, traj.states)
    assert io.read_config_hash(path) == "abc123"
