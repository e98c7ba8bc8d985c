import numpy as np
import pytest
from hypothesis import given, strategies as st

from chaosid import autodiff as ad
from chaosid import gradcheck
from chaosid.dynamics import lorenz63_rhs, lorenz63_system, rk4_step, simulate
from chaosid.errors import DivergenceError, InvalidInputError
from chaosid.optim import RMSprop
from chaosid.surrogate import (FlowConfig, Preconditioner, SurrogateModel, SurrogateParams,
                               bilinear_features, checkpoint_dict, dynamics_residual_tape, fit_m_step,
                               flow_rhs, forecast_step, from_checkpoint_dict, geometric_schedule,
                               loss_m, loss_m_and_grad)

THETA_STAR = SurrogateParams.lorenz63()
coords = st.floats(-30, 30, allow_nan=False)


def test_features_zero():
    np.testing.assert_array_equal(bilinear_features(np.zeros(3)), np.zeros(6))


def test_features_order():
    np.testing.assert_array_equal(bilinear_features(np.array([1.0, 2.0, 3.0])), [2, 3, 6, 1, 4, 9])


@given(coords, coords, coords)
def test_features_swap_permutation(a, b, c):
    f = bilinear_features(np.array([a, b, c]))
    g = bilinear_features(np.array([b, a, c]))
    # swapping x1 and x2 exchanges (x1x3, x2x3) and (x1^2, x2^2)
    np.testing.assert_array_equal(g, f[[0, 2, 1, 4, 3, 5]])


def test_zero_params_give_zero_field(rng):
    np.testing.assert_array_equal(flow_rhs(SurrogateParams.zeros(), rng.normal(size=(5, 3))), 0.0)


def test_true_params_reproduce_lorenz(rng):
    X = rng.uniform(-25, 25, size=(100, 3))
    assert np.max(np.abs(flow_rhs(THETA_STAR, X) - lorenz63_rhs(X))) < 1e-12


def test_linear_only(rng):
    A = rng.normal(size=(3, 3))
    X = rng.normal(size=(4, 3))
    np.testing.assert_allclose(flow_rhs(SurrogateParams(A, np.zeros((3, 6)), np.zeros(3)), X), X @ A.T)


@given(st.integers(0, 10 ** 6))
def test_flow_is_exactly_quadratic(seed):
    rng = np.random.default_rng(seed)
    theta = SurrogateParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 6)), rng.normal(size=3))
    x = rng.normal(size=3)
    u = rng.normal(size=3)
    h = 0.5
    # second differences along a line are constant for a quadratic
    seconds = [flow_rhs(theta, x + (k + 1) * h * u) - 2 * flow_rhs(theta, x + k * h * u)
               + flow_rhs(theta, x + (k - 1) * h * u) for k in range(4)]
    for s in seconds[1:]:
        np.testing.assert_allclose(s, seconds[0], rtol=1e-9, atol=1e-9)


def test_zero_params_forecast_is_identity(rng):
    X = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(forecast_step(SurrogateParams.zeros(), FlowConfig(), X), X)


def test_forecast_matches_reference_rk4(rng):
    X = rng.uniform(-20, 20, size=(50, 3))
    ours = forecast_step(THETA_STAR, FlowConfig(0.01, 1), X)
    ref = np.array([rk4_step(lorenz63_rhs, x, 0.01) for x in X])
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_substep_composition(rng):
    X = rng.uniform(-20, 20, size=(10, 3))
    two = forecast_step(THETA_STAR, FlowConfig(0.01, 2), X)
    chained = forecast_step(THETA_STAR, FlowConfig(0.01, 1), forecast_step(THETA_STAR, FlowConfig(0.01, 1), X))
    np.testing.assert_allclose(two, chained, rtol=0, atol=1e-13)


def test_forecast_single_vector():
    x = np.array([1.0, 2.0, 3.0])
    assert forecast_step(THETA_STAR, FlowConfig(), x).shape == (3,)


def test_forecast_divergence_reports_row():
    theta = SurrogateParams(np.eye(3) * 1e3, np.ones((3, 6)) * 1e3, np.zeros(3))
    X = np.array([[0.0, 0.0, 0.0], [1e100, 1e100, 1e100]])
    with pytest.raises(DivergenceError) as info:
        forecast_step(theta, FlowConfig(0.1, 1), X)
    assert info.value.index == 1


def test_tape_forecast_matches_numpy(rng):
    X = rng.uniform(-20, 20, size=(8, 3))
    cfg = FlowConfig(0.01, 3)
    t = ad.Tape()
    from chaosid.surrogate import forecast_tape
    P = {k: t.constant(v) for k, v in THETA_STAR.as_dict().items()}
    np.testing.assert_allclose(forecast_tape(P, cfg, t.constant(X)).value, forecast_step(THETA_STAR, cfg, X),
                               rtol=1e-13, atol=1e-12)


def test_flow_config_validation():
    with pytest.raises(InvalidInputError):
        FlowConfig(0.0, 1)
    with pytest.raises(InvalidInputError):
        FlowConfig(0.01, 0)
    assert FlowConfig(0.01, 8).delta == pytest.approx(0.08)


def test_loss_on_self_generated_states():
    rng = np.random.default_rng(3)
    theta = SurrogateParams.random(rng, scale=0.5)
    cfg = FlowConfig(0.01, 2)
    states = SurrogateModel(theta, cfg).orbit(np.array([1.0, 2.0, 3.0]), 50)
    assert loss_m(theta, cfg, states) < 1e-20


def test_loss_on_clean_truth(lorenz_truth):
    states = lorenz_truth.states[:1000]
    assert loss_m(THETA_STAR, FlowConfig(), states) / len(states) < 1e-10


def test_loss_unit_displacement():
    assert loss_m(SurrogateParams.zeros(), FlowConfig(), np.array([[0.0, 0, 0], [1.0, 0, 0]])) == 1.0


def test_loss_needs_two_states():
    with pytest.raises(InvalidInputError):
        loss_m(THETA_STAR, FlowConfig(), np.zeros((1, 3)))


def test_loss_tape_and_kernel_agree(lorenz_truth):
    theta = SurrogateParams.random(np.random.default_rng(1), 0.5)
    value, _ = loss_m_and_grad(theta, FlowConfig(0.01, 2), lorenz_truth.states[:200])
    assert value == pytest.approx(loss_m(theta, FlowConfig(0.01, 2), lorenz_truth.states[:200]), rel=1e-12)


@pytest.mark.parametrize("substeps", [1, 3])
def test_loss_m_gradcheck(substeps, lorenz_truth):
    rng = np.random.default_rng(substeps)
    theta = SurrogateParams(THETA_STAR.A + rng.normal(size=(3, 3)) * 0.3,
                            THETA_STAR.B + rng.normal(size=(3, 6)) * 0.05, rng.normal(size=3))
    states = lorenz_truth.states[:40:2]
    cfg = FlowConfig(0.01, substeps)
    err = gradcheck.check(lambda t, P: dynamics_residual_tape(P, cfg, t.constant(states)), theta.as_dict())
    assert err < 1e-5


def test_rmsprop_near_stationary_at_truth(lorenz_truth):
    states = lorenz_truth.states[:2000]
    for pre in (False, True):
        theta, _ = fit_m_step(THETA_STAR, FlowConfig(), states, 1, RMSprop(), precondition=pre,
                              keep_best=False)
        assert theta.max_abs_diff(THETA_STAR) < 1e-6


def test_preconditioner_round_trip(lorenz_truth, rng):
    pre = Preconditioner.from_states(lorenz_truth.states[:3000], 0.01)
    theta = SurrogateParams.random(rng, 1.0)
    theta.b = rng.normal(size=3)
    back = pre.to_params(pre.to_internal(theta))
    assert back.max_abs_diff(theta) < 1e-9


def test_preconditioner_degenerate_data_is_identity():
    pre = Preconditioner.from_states(np.zeros((10, 3)), 0.01)
    np.testing.assert_array_equal(pre.W, np.eye(9))


def test_preconditioned_tape_gradient(lorenz_truth, rng):
    states = lorenz_truth.states[:30]
    pre = Preconditioner.from_states(lorenz_truth.states[:3000], 0.01)
    internal = pre.to_internal(SurrogateParams.random(rng, 0.5))
    cfg = FlowConfig()

    def build(t, p):
        # params_tape registers its own parameters, so route through constants here
        S = t.constant(np.diag(pre.scale))
        AB = S @ p["v"] @ t.constant(pre.W)
        b = (S @ p["c"] - AB @ t.constant(pre.mean[:, None]))[:, 0]
        return dynamics_residual_tape({"A": AB[:, 0:3], "B": AB[:, 3:9], "b": b}, cfg, t.constant(states))

    assert gradcheck.check(build, internal) < 1e-5


def test_m_step_reduces_loss(lorenz_truth):
    states = lorenz_truth.states[:2000]
    theta0 = SurrogateParams.random(np.random.default_rng(0))
    for pre in (False, True):
        theta, losses = fit_m_step(theta0, FlowConfig(), states, 50, RMSprop(lr=1e-2), precondition=pre)
        assert len(losses) == 50
        assert loss_m(theta, FlowConfig(), states) < losses[0]


def test_preconditioned_m_step_recovers_truth(lorenz_truth):
    states = lorenz_truth.states
    sched = geometric_schedule(1e-2, 1e-4, 1000)
    theta, _ = fit_m_step(SurrogateParams.random(np.random.default_rng(0)), FlowConfig(), states, 1000,
                          RMSprop(lr=1e-2), lr_schedule=sched)
    assert theta.max_abs_diff(THETA_STAR) < 0.1


def test_m_step_accepts_fixed_basis(lorenz_truth):
    states = lorenz_truth.states[:2000]
    theta0 = SurrogateParams.random(np.random.default_rng(0))
    own = Preconditioner.from_states(states, 0.01)
    a, la = fit_m_step(theta0, FlowConfig(), states, 20, RMSprop(lr=1e-2), precondition=True)
    b, lb = fit_m_step(theta0, FlowConfig(), states, 20, RMSprop(lr=1e-2), precondition=own)
    # passing the basis fitted to the same states is the default path
    assert la == lb and a.max_abs_diff(b) == 0.0
    # a basis from noisy data still gives a descent method on the clean loss
    noisy = states + np.random.default_rng(1).normal(scale=2.0, size=states.shape)
    other = Preconditioner.from_states(noisy, 0.01)
    c, _ = fit_m_step(theta0, FlowConfig(), states, 50, RMSprop(lr=1e-2), precondition=other)
    assert loss_m(c, FlowConfig(), states) < la[0]


def test_geometric_schedule_endpoints():
    s = geometric_schedule(1e-2, 1e-4, 11)
    assert s(0) == pytest.approx(1e-2)
    assert s(10) == pytest.approx(1e-4)
    assert s(5) == pytest.approx(1e-3)


def test_m_step_rejects_negative_budget():
    with pytest.raises(InvalidInputError):
        fit_m_step(THETA_STAR, FlowConfig(), np.zeros((3, 3)), -1)


def test_checkpoint_round_trip(rng):
    theta = SurrogateParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 6)), rng.normal(size=3))
    d = checkpoint_dict(theta, FlowConfig(0.01, 8))
    assert len(d["A"]) == 9 and len(d["B"]) == 18 and len(d["b"]) == 3
    back, cfg = from_checkpoint_dict(d)
    assert back.max_abs_diff(theta) == 0.0 and cfg == FlowConfig(0.01, 8)
    assert d["B"][:6] == theta.B[0].tolist()  # row-major


def test_orbit_matches_simulate():
    orbit = SurrogateModel(THETA_STAR).orbit(np.array([8.0, 0.0, 30.0]), 100)
    ref = simulate(lorenz63_system(), [8.0, 0.0, 30.0], 0.01, 100).states
    np.testing.assert_allclose(orbit, ref, rtol=0, atol=1e-12)
