# -- encoding: UTF-8 --
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kalman_magnetometry import dynamics, estimators
from kalman_magnetometry.core import (
    INFINITE, PhysicalParams, SeedSpec, TimeGrid, gamma_from_cycles,
)
from kalman_magnetometry.exceptions import (
    GridError, ModelValidityWarning, ParameterError, StabilityError,
)


@pytest.fixture
def plan(params):
    return estimators.FilterPlan(params, TimeGrid.auto(params))


def run_kalman_steps(p, record):
    state = estimators.kalman_init(p)
    b_tilde = [state.b_tilde]
    for dt, d_xi in zip(record.grid.steps, record.d_xi):
        state = estimators.kalman_step(state, estimators.system_matrices(p, state.t), d_xi, dt)
        b_tilde.append(state.b_tilde)
    return state, np.asarray(b_tilde)


def test_system_matrices_should_hold_the_linear_model(params):
    mats = estimators.system_matrices(params, 0.0)
    np.testing.assert_allclose(mats.b, [params.j_total / 2, 0.0])
    np.testing.assert_allclose(mats.c, [[1.0, 0.0]])
    assert mats.d == pytest.approx(params.record_noise_scale)
    drift, sigma = mats.transition(1e-15)
    assert drift == pytest.approx(params.gamma * params.j_total * 1e-15, rel=1e-9)
    assert sigma == pytest.approx(0.5 * params.j_total / mats.d, rel=1e-6)


def test_first_gain_should_be_the_record_precision_times_the_spin_variance(params, plan):
    expected = params.record_precision * params.j_total / 2
    assert plan.gain[0, 0] == pytest.approx(expected, rel=1e-3)
    assert plan.gain[0, 1] == 0.0


@pytest.mark.parametrize('prior', [1e-10, 1e-6, INFINITE])
def test_first_gain_component_should_never_be_negative(params, prior):
    p = params.with_(prior_b_variance=prior)
    assert np.all(estimators.gain_sequence(p, TimeGrid.auto(p))[:, 0] >= 0)


def test_large_prior_should_agree_with_the_infinite_prior_within_ten_steps(params):
    grid = TimeGrid.uniform(params.t_total, 1e-8)
    large = estimators.FilterPlan(params.with_(prior_b_variance=1e6), grid)
    diffuse = estimators.FilterPlan(params.with_(prior_b_variance=INFINITE), grid)
    np.testing.assert_allclose(large.v22[10:], diffuse.v22[10:], rtol=1e-6)
    record = dynamics.simulate_trajectory(params, grid, SeedSpec(5, 0))
    b_large = estimators.filter_trace(record, params, large).b_tilde
    b_diffuse = estimators.filter_trace(record, params, diffuse).b_tilde
    np.testing.assert_allclose(b_large[10:], b_diffuse[10:], rtol=1e-5, atol=1e-9)


def test_kalman_init_should_start_from_the_prior(params):
    state = estimators.kalman_init(params)
    assert state.b_tilde == 0.0
    assert state.b_variance == params.prior_b_variance
    assert not state.info_form

    diffuse = estimators.kalman_init(params.with_(prior_b_variance=INFINITE))
    assert diffuse.info_form
    assert diffuse.b_variance == math.inf


def test_kalman_step_should_match_the_precomputed_plan(params):
    grid = TimeGrid.auto(params)
    record = dynamics.simulate_trajectory(params, grid, SeedSpec(9, 0))
    state, b_tilde = run_kalman_steps(params, record)
    plan = estimators.FilterPlan(params, grid)
    trace = estimators.filter_trace(record, params, plan)
    np.testing.assert_allclose(b_tilde, trace.b_tilde, rtol=1e-6, atol=1e-12)
    assert state.b_variance == pytest.approx(plan.v22[-1], rel=1e-6)
    assert state.t == pytest.approx(grid.t_total, rel=1e-9)


def test_kalman_step_with_misaligned_matrices_should_raise(params):
    state = estimators.kalman_init(params)
    with pytest.raises(GridError):
        estimators.kalman_step(state, estimators.system_matrices(params, 1e-6), 0.0, 1e-9)


@pytest.mark.parametrize('v', [(1.0, 2.0, 1.0), (-1.0, 0.0, 1.0)])
def test_check_covariance_should_reject_indefinite_matrices(v):
    with pytest.raises(StabilityError):
        estimators.check_covariance(*v)


def test_filter_plan_variance_should_never_increase(plan):
    assert plan.v22[0] == pytest.approx(1e-10)
    assert np.all(np.diff(plan.v22) <= 1e-12 * plan.v22[:-1])


def test_filter_plan_with_infinite_prior_should_be_finite_after_two_steps(params):
    p = params.with_(prior_b_variance=INFINITE)
    plan = estimators.FilterPlan(p, TimeGrid.auto(p))
    assert plan.diffuse_steps == 2
    assert np.all(np.isinf(plan.v22[:2]))
    assert np.all(np.isfinite(plan.v22[2:]))
    assert np.all(np.isfinite(plan.gain))


def test_filter_on_noiseless_record_should_shrink_toward_the_prior(params, plan):
    record = dynamics.simulate_trajectory(params, plan.grid, SeedSpec(1, 0), zero_noise=True)
    trace = estimators.filter_trace(record, params, plan)
    expected = params.b_true * (1.0 - plan.v22 / params.prior_b_variance)
    np.testing.assert_allclose(trace.b_tilde, expected, rtol=1e-5, atol=1e-10 * params.b_true)


def test_filter_with_infinite_prior_should_recover_a_noiseless_field_exactly(params):
    p = params.with_(prior_b_variance=INFINITE)
    grid = TimeGrid.auto(p)
    record = dynamics.simulate_trajectory(p, grid, SeedSpec(1, 0), zero_noise=True)
    trace = estimators.filter_trace(record, p)
    np.testing.assert_allclose(trace.b_tilde[2:], p.b_true, rtol=1e-6)


def test_kalman_bank_should_match_single_record_traces(params, plan):
    seeds = [SeedSpec(3, i) for i in range(4)]
    checkpoints = [3, 100, plan.grid.n_steps]
    bank = estimators.KalmanBank(plan, len(seeds), checkpoints)
    for start, _, d_xi, _, _ in dynamics.iter_record_blocks(params, plan.grid, seeds):
        bank.consume(start, d_xi)
    for i, seed in enumerate(seeds):
        record = dynamics.simulate_trajectory(params, plan.grid, seed)
        trace = estimators.filter_trace(record, params, plan)
        np.testing.assert_allclose(bank.estimates[i], trace.b_tilde[checkpoints], rtol=1e-12)


def test_gain_sequence_should_have_one_row_per_step(params):
    grid = TimeGrid.uniform(1e-6, 1e-8)
    assert estimators.gain_sequence(params, grid).shape == (grid.n_steps, 2)


def test_filter_trace_should_serialize_covariance_columns(params, plan):
    record = dynamics.simulate_trajectory(params, plan.grid, SeedSpec(1, 2))
    rows = list(estimators.filter_trace(record, params, plan).rows())
    assert len(rows) == len(plan.grid)
    assert estimators.FilterTrace.header == ["t", "jz_tilde", "b_tilde", "v11", "v12", "v22"]


def test_riccati_integrate_should_follow_the_discrete_filter(params, plan):
    late = plan.grid.times > 1e-5
    solution = estimators.riccati_integrate(params, plan.grid.times[late])
    np.testing.assert_allclose(solution.v22, plan.v22[late], rtol=0.05)


def test_riccati_integrate_with_zero_prior_should_vanish(params):
    solution = estimators.riccati_integrate(params.with_(prior_b_variance=0.0), [0.0, 1e-6])
    assert np.all(solution.v22 == 0.0)


def test_riccati_integrate_should_start_from_the_prior(params):
    solution = estimators.riccati_integrate(params, [0.0, 1e-15])
    assert solution.v22[0] == pytest.approx(params.prior_b_variance)
    assert solution.v11[0] == 0.0


def test_riccati_integrate_should_reproduce_the_closed_form(fig2_params):
    p = fig2_params.with_(prior_b_variance=INFINITE)
    times = np.geomspace(1e-8, 2e-3, 60)
    numeric = np.sqrt(estimators.riccati_integrate(p, times).v22)
    analytic = estimators.riccati_analytic(p, times)
    np.testing.assert_allclose(numeric, analytic, rtol=1e-6)


def test_infinite_prior_threshold_should_bound_the_finite_one(fig2_params):
    times = np.geomspace(1e-9, 1e-3, 20)
    finite = estimators.riccati_integrate(fig2_params, times).v22
    infinite = estimators.riccati_integrate(fig2_params.with_(prior_b_variance=INFINITE),
                                            times).v22
    assert np.all(infinite >= finite * (1 - 1e-9))


def test_large_prior_should_approach_the_infinite_prior(fig2_params):
    times = np.geomspace(1e-7, 1e-3, 10)
    large = estimators.riccati_integrate(fig2_params.with_(prior_b_variance=1e-2), times).v22
    infinite = estimators.riccati_integrate(fig2_params.with_(prior_b_variance=INFINITE),
                                            times).v22
    np.testing.assert_allclose(large, infinite, rtol=1e-6)


@given(x=st.floats(0.05, 5.0))
def test_closed_form_series_should_agree_with_the_exponentials(x):
    phi1, phi0 = estimators._decay_combinations(np.array([x]))
    direct1 = -(x + 4) * math.exp(-x) + 8 * math.exp(-x / 2) + x - 4
    direct0 = -math.exp(-x) + 4 * math.exp(-x / 2) + x - 3
    assert phi1[0] == pytest.approx(direct1, rel=1e-6)
    assert phi0[0] == pytest.approx(direct0, rel=1e-6)


def test_closed_form_should_approach_the_asymptotic_threshold(fig2_params):
    t = 0.01 / fig2_params.meas_strength
    assert estimators.riccati_analytic(fig2_params, t) == pytest.approx(
        estimators.detection_threshold_asymptotic(fig2_params, t), rel=0.01)


def test_closed_form_with_non_positive_time_should_raise(fig2_params):
    with pytest.raises(ParameterError):
        estimators.riccati_analytic(fig2_params, [0.0, 1e-6])


def test_asymptotic_threshold_should_match_the_one_millisecond_magnitude(fig2_params):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        value = estimators.detection_threshold_asymptotic(fig2_params, 1e-3)
    assert value == pytest.approx(6.89e-12, rel=0.01)
    assert 3e-12 <= value <= 3e-11


def test_asymptotic_threshold_too_early_should_warn(fig2_params):
    t = 1.0 / (fig2_params.j_total * fig2_params.meas_strength)
    with pytest.warns(ModelValidityWarning):
        estimators.detection_threshold_asymptotic(fig2_params, t)


def test_shotnoise_limit_should_scale_as_inverse_sqrt_j(fig2_params):
    a = estimators.shotnoise_limit(fig2_params, 1e-3)
    b = estimators.shotnoise_limit(fig2_params.with_(j_total=4 * fig2_params.j_total), 1e-3)
    assert a / b == pytest.approx(2.0)
    expected = 1.0 / (fig2_params.gamma * math.sqrt(fig2_params.j_total * 2e-5 * 1e-3))
    assert a == pytest.approx(expected)


@pytest.mark.parametrize('source', estimators.SOURCES)
def test_threshold_curve_should_cover_the_positive_times(fig2_params, source):
    times = np.array([0.0, 1e-7, 1e-6, 1e-5])
    curve = estimators.threshold_curve(fig2_params, times, source)
    assert curve.source == source
    np.testing.assert_array_equal(curve.times, times[1:])
    assert np.all(curve.delta_b > 0)
    assert all(row[2] == source for row in curve.rows())


def test_threshold_curve_with_unknown_source_should_raise(fig2_params):
    with pytest.raises(ParameterError):
        estimators.threshold_curve(fig2_params, [1e-6], "guess")


@pytest.mark.parametrize('regressor', estimators.REGRESSORS)
def test_regression_on_noiseless_record_should_recover_the_field(params, regressor):
    p = params.with_(t_total=2e-7) if regressor == "time" else params
    grid = TimeGrid.auto(p)
    record = dynamics.simulate_trajectory(p, grid, SeedSpec(1, 0), zero_noise=True)
    estimate = estimators.regression_estimate(record, p, regressor=regressor)
    rel = 1e-6 if regressor == "bloch" else 0.01
    assert estimate == pytest.approx(p.b_true, rel=rel)


def synthetic_record(grid, rate):
    """A record whose increments are exactly ``rate(t) * dt``."""
    zeros = np.zeros(len(grid))
    d_xi = rate(grid.times[:-1]) * grid.steps
    return dynamics.TrajectoryRecord(grid=grid, mean_jz=zeros, var_jz=zeros, bloch=zeros,
                                     d_xi=d_xi, y=d_xi / grid.steps, noise=np.zeros(len(d_xi)))


def test_regression_on_an_exact_line_should_return_the_field(params):
    p = params.with_(t_total=2e-6)
    grid = TimeGrid.uniform(p.t_total, 1e-8)
    slope = p.gamma * p.b_true * p.j_total
    record = synthetic_record(grid, lambda t: slope * t)
    assert estimators.regression_estimate(record, p) == pytest.approx(p.b_true, rel=1e-10)


def test_regression_should_absorb_a_constant_offset_in_the_intercept(params):
    p = params.with_(t_total=2e-6)
    grid = TimeGrid.uniform(p.t_total, 1e-8)
    record = synthetic_record(grid, lambda t: np.full_like(t, 3.0))
    assert estimators.regression_estimate(record, p) == pytest.approx(0.0, abs=1e-15)


def test_regression_over_a_decayed_bloch_vector_should_warn(params):
    record = dynamics.simulate_trajectory(params, TimeGrid.auto(params), SeedSpec(1, 0))
    with pytest.warns(ModelValidityWarning):
        estimators.regression_estimate(record, params, regressor="time")


def test_regression_with_too_few_samples_should_raise(params):
    grid = TimeGrid.uniform(1e-7, 1e-8)
    record = dynamics.simulate_trajectory(params.with_(t_total=1e-7), grid, SeedSpec(1, 0))
    with pytest.raises(ParameterError):
        estimators.regression_estimate(record, params, t_end=2e-8)


def test_regressor_values_with_unknown_name_should_raise(params):
    with pytest.raises(ParameterError):
        estimators.regressor_values(params, [0.0], "quadratic")


def test_regression_accumulator_should_match_the_direct_fit(params):
    grid = TimeGrid.auto(params)
    seeds = [SeedSpec(8, i) for i in range(3)]
    checkpoints = np.array([10, 800, grid.n_steps])
    sink = estimators.RegressionAccumulator(params, grid, len(seeds), checkpoints, "bloch")
    for start, _, d_xi, _, _ in dynamics.iter_record_blocks(params, grid, seeds):
        sink.consume(start, d_xi)
    for i, seed in enumerate(seeds):
        record = dynamics.simulate_trajectory(params, grid, seed)
        direct = [estimators.regression_estimate(record, params, grid.times[k], "bloch")
                  for k in checkpoints]
        np.testing.assert_allclose(sink.estimates[i], direct, rtol=1e-6)


def test_regression_accumulator_with_early_checkpoint_should_raise(params):
    with pytest.raises(ParameterError):
        estimators.RegressionAccumulator(params, TimeGrid.auto(params), 1, [2], "bloch")


@given(j=st.floats(1.0, 1e6), m=st.floats(1e3, 1e6), eta=st.floats(0.1, 1.0),
       prior=st.sampled_from([1e-12, 1e-8, INFINITE]))
def test_filter_covariance_should_stay_positive_semidefinite(j, m, eta, prior):
    p = PhysicalParams(j_total=j, gamma=gamma_from_cycles(1.0), b_true=0.0, meas_strength=m,
                       efficiency=eta, prior_b_variance=prior, t_total=1.0 / m)
    plan = estimators.FilterPlan(p, TimeGrid.auto(p, dt=1e-2 / m))
    finite = np.isfinite(plan.v22)
    v11, v12, v22 = plan.v11[finite], plan.v12[finite], plan.v22[finite]
    assert np.all(estimators._min_eigenvalue(v11, v12, v22) >= -1e-9 * (v11 + v22))
