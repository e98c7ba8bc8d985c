import warnings

import numpy as np
import pytest

from chaosid.dynamics import Trajectory
from chaosid.enks import (EnksConfig, enkf_analysis, enkf_forecast, enks_em, enks_smooth, increment_variance,
                         normal_draws)
from chaosid.errors import DivergenceError, InvalidInputError
from chaosid.observation import NoiseSpec, ObservationSeries, apply_noise, mask_regular
from chaosid.surrogate import FlowConfig, SurrogateModel, SurrogateParams

from oracles import ScalarAR, ar_series as _ar_series, rts_smoother


def test_forecast_without_noise_is_model(rng):
    ens = np.repeat(rng.normal(size=(1, 3)), 5, axis=0)
    theta = SurrogateParams.lorenz63()
    out = enkf_forecast(ens, SurrogateModel(theta), 0.0, 1.0, rng)
    np.testing.assert_allclose(out, SurrogateModel(theta)(ens))
    assert np.ptp(out, axis=0).max() == 0.0


def test_forecast_noise_variance():
    rng = np.random.default_rng(0)
    out = enkf_forecast(np.zeros((10000, 3)), ScalarAR(1.0), 0.04, 1.0, rng)
    assert 0.036 <= out.var(axis=0, ddof=1).mean() <= 0.044


def test_inflation_scales_anomalies(rng):
    ens = rng.normal(size=(30, 3))
    out = enkf_forecast(ens, ScalarAR(1.0), 0.0, 1.1, rng)
    np.testing.assert_allclose(out.std(axis=0), 1.1 * ens.std(axis=0), rtol=1e-12)
    np.testing.assert_allclose(out.mean(axis=0), ens.mean(axis=0), atol=1e-12)


def test_forecast_divergence_reports_member():
    class Explodes:
        def __call__(self, X):
            raise DivergenceError("boom", index=3)

    with pytest.raises(DivergenceError) as info:
        enkf_forecast(np.zeros((5, 3)), Explodes(), 0.0, 1.0, np.random.default_rng(0))
    assert info.value.index == 3


def test_analysis_all_masked_is_noop(rng):
    ens = rng.normal(size=(10, 3))
    out = enkf_analysis(ens, np.zeros(3), np.zeros(3, dtype=bool), 1.0, rng)
    np.testing.assert_array_equal(out, ens)


def test_analysis_scalar_kalman_mean():
    rng = np.random.default_rng(1)
    P, R, xbar, y = 2.0, 0.5, 1.0, 3.0
    ens = xbar + np.sqrt(P) * rng.standard_normal((10000, 1))
    out = enkf_analysis(ens, np.array([y]), np.array([True]), R, rng)
    pbar, psample = ens.mean(), ens.var(ddof=1)
    expected = (R * pbar + psample * y) / (psample + R)
    assert out.mean() == pytest.approx(expected, rel=0.02)
    assert out.mean() == pytest.approx((R * xbar + P * y) / (P + R), rel=0.02)


def test_analysis_huge_r_keeps_prior(rng):
    ens = rng.normal(size=(200, 3))
    out = enkf_analysis(ens, np.full(3, 5.0), np.ones(3, dtype=bool), 1e9, rng)
    assert np.max(np.abs(out.mean(axis=0) - ens.mean(axis=0))) < 1e-3


def test_analysis_never_inflates_variance():
    rng = np.random.default_rng(4)
    ens = rng.normal(size=(5000, 1)) * 3.0
    out = enkf_analysis(ens, np.array([0.5]), np.array([True]), 1.0, rng)
    assert out.var() <= ens.var() * 1.05


def test_singular_covariance_warns(rng):
    ens = np.ones((10, 3))
    with pytest.warns(RuntimeWarning):
        out = enkf_analysis(ens, np.zeros(3), np.ones(3, dtype=bool), 0.0, rng, jitter=1e-8)
    assert np.all(np.isfinite(out))


def test_smoother_matches_exact_rts():
    a, q, r = 0.9, 0.5, 1.0
    obs = _ar_series(200, a, q, r, seed=3)
    cfg = EnksConfig(n_members=500, model_noise_var=q, obs_noise_var=r, init_var=4.0, seed=3)
    res = enks_smooth(obs, ScalarAR(a), cfg)
    exact = rts_smoother(obs.values[:, 0], a, q, r, obs.values[0, 0], 4.0)
    # a single 500-member run carries Monte-Carlo noise of order 1/sqrt(500)
    assert np.mean(np.abs(res.means[:, 0] - exact)) < 0.05


def test_smoother_unbiased_over_seeds():
    a, q, r = 0.9, 0.5, 1.0
    obs = _ar_series(100, a, q, r, seed=9)
    exact = rts_smoother(obs.values[:, 0], a, q, r, obs.values[0, 0], 4.0)
    diffs = []
    for seed in range(20):
        cfg = EnksConfig(n_members=500, model_noise_var=q, obs_noise_var=r, init_var=4.0, seed=seed)
        diffs.append(np.mean(enks_smooth(obs, ScalarAR(a), cfg).means[:, 0] - exact))
    diffs = np.array(diffs)
    se = diffs.std(ddof=1) / np.sqrt(len(diffs))
    assert abs(diffs.mean()) < 3 * se + 1e-12


def test_smoother_collapses_to_clean_data(lorenz_truth):
    traj = Trajectory(0.0, 0.01, lorenz_truth.states[:300])
    obs = apply_noise(traj, NoiseSpec(0.0, 0))
    cfg = EnksConfig(n_members=50, model_noise_var=1e-3, obs_noise_var=1e-8, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = enks_smooth(obs, SurrogateModel(SurrogateParams.lorenz63()), cfg)
    assert np.max(np.abs(res.means - obs.values)) < 1e-3


def test_smoother_is_seed_deterministic(lorenz_truth):
    traj = Trajectory(0.0, 0.01, lorenz_truth.states[:200])
    obs = apply_noise(traj, NoiseSpec(1.0, 2), mask=mask_regular(200, 4))
    cfg = EnksConfig(n_members=20, obs_noise_var=1.0, seed=5)
    model = SurrogateModel(SurrogateParams.lorenz63())
    a, b = enks_smooth(obs, model, cfg), enks_smooth(obs, model, cfg)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.spreads, b.spreads)
    assert np.all(a.spreads >= 0)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        EnksConfig(n_members=1)
    with pytest.raises(InvalidInputError):
        EnksConfig(obs_noise_var=0.0)
    with pytest.raises(InvalidInputError):
        EnksConfig(inflation=0.9)


def test_em_rejects_zero_budget(lorenz_truth):
    obs = apply_noise(Trajectory(0.0, 0.01, lorenz_truth.states[:20]), NoiseSpec(1.0, 0))
    with pytest.raises(InvalidInputError):
        enks_em(obs, SurrogateParams.zeros(), FlowConfig(), EnksConfig(), n_em_iters=1, n_m_steps=0)
    with pytest.raises(InvalidInputError):
        enks_em(obs, SurrogateParams.zeros(), FlowConfig(), EnksConfig(), n_em_iters=0, n_m_steps=1)


def test_em_from_truth_stays_put(lorenz_truth):
    traj = Trajectory(0.0, 0.01, lorenz_truth.states[:2000])
    obs = apply_noise(traj, NoiseSpec(0.0, 0))
    cfg = EnksConfig(n_members=30, obs_noise_var=1e-4, seed=0)
    theta_star = SurrogateParams.lorenz63()
    res = enks_em(obs, theta_star, FlowConfig(), cfg, n_em_iters=3, n_m_steps=20, lr=3e-4)
    first = res.history[0]
    assert first["loss_m"] <= first["loss_before"]
    assert res.theta.max_abs_diff(theta_star) < 0.05
    assert len(res.losses) == 3


def test_em_is_seed_deterministic(lorenz_truth):
    traj = Trajectory(0.0, 0.01, lorenz_truth.states[:300])
    obs = apply_noise(traj, NoiseSpec(0.5, 1))
    cfg = EnksConfig(n_members=10, obs_noise_var=0.5, adaptive_model_noise=True, seed=2)
    theta0 = SurrogateParams.random(np.random.default_rng(0))
    a = enks_em(obs, theta0, FlowConfig(), cfg, 2, 5, 1e-2, 1e-3)
    b = enks_em(obs, theta0, FlowConfig(), cfg, 2, 5, 1e-2, 1e-3)
    assert a.history == b.history
    assert a.theta.max_abs_diff(b.theta) == 0.0


def test_em_adaptive_noise_floor(lorenz_truth):
    traj = Trajectory(0.0, 0.01, lorenz_truth.states[:300])
    obs = apply_noise(traj, NoiseSpec(0.5, 1))
    cfg = EnksConfig(n_members=10, obs_noise_var=0.5, model_noise_var=1e-3, adaptive_model_noise=True)
    res = enks_em(obs, SurrogateParams.lorenz63(), FlowConfig(), cfg, 3, 5, 1e-4)
    qs = [row["model_noise_var"] for row in res.history]
    assert qs[0] == max(0.5, increment_variance(obs))
    assert all(q >= 1e-3 for q in qs)


def test_increment_variance_matches_hand_computation(rng):
    values = rng.normal(size=(50, 3))
    mask = rng.random((50, 3)) > 0.3
    obs = ObservationSeries(0.0, 0.01, values, mask)
    per_dim = []
    for j in range(3):
        pairs = [values[t + 1, j] - values[t, j] for t in range(49) if mask[t, j] and mask[t + 1, j]]
        per_dim.append(np.var(pairs))
    assert increment_variance(obs) == pytest.approx(np.mean(per_dim), rel=1e-12)


def test_increment_variance_without_pairs_is_zero():
    mask = np.zeros((6, 3), dtype=bool)
    mask[::2] = True
    assert increment_variance(ObservationSeries(0.0, 0.01, np.ones((6, 3)), mask)) == 0.0


def test_exact_draws_have_exact_moments(rng):
    z = normal_draws(rng, (40, 3), exact=True)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-14)
    np.testing.assert_allclose(z.std(axis=0, ddof=1), 1.0, rtol=1e-13)


def test_plain_draws_match_generator():
    a = normal_draws(np.random.default_rng(5), (10, 2))
    np.testing.assert_array_equal(a, np.random.default_rng(5).standard_normal((10, 2)))


def test_exact_analysis_mean_is_kalman_mean_given_ensemble(rng):
    # with zero-mean perturbations the analysis mean is the sample-gain Kalman update of the forecast mean
    ens = rng.normal(size=(100, 1)) * 2.0 + 1.0
    out = enkf_analysis(ens, np.array([0.5]), np.array([True]), 1.0, rng, exact=True)
    p = ens.var(ddof=1)
    expected = ens.mean() + p / (p + 1.0) * (0.5 - ens.mean())
    assert out.mean() == pytest.approx(expected, rel=1e-12)
