# -- encoding: UTF-8 --
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kalman_magnetometry import sme_oracle
from kalman_magnetometry.core import (
    INFINITE, PhysicalParams, SeedSpec, TimeGrid, gamma_from_cycles,
)
from kalman_magnetometry.exceptions import ParameterError, StabilityError

SPINS = [0.5, 1.0, 1.5, 2.0, 5.0]


def make_params(**changes):
    values = dict(j_total=0.5, gamma=gamma_from_cycles(1.0), b_true=0.0, meas_strength=1e5,
                  efficiency=1.0, prior_b_variance=INFINITE, t_total=1e-6)
    values.update(changes)
    return PhysicalParams(**values)


@pytest.mark.parametrize('j', SPINS)
def test_spin_operators_should_satisfy_the_commutation_relations(j):
    ops = sme_oracle.build_spin_operators(j)
    commutator = ops.jx @ ops.jy - ops.jy @ ops.jx
    np.testing.assert_allclose(commutator, 1j * ops.jz, atol=1e-12)
    commutator = ops.jy @ ops.jz - ops.jz @ ops.jy
    np.testing.assert_allclose(commutator, 1j * ops.jx, atol=1e-12)


@pytest.mark.parametrize('j', SPINS)
def test_spin_operators_should_satisfy_the_casimir_invariant(j):
    ops = sme_oracle.build_spin_operators(j)
    casimir = ops.jx @ ops.jx + ops.jy @ ops.jy + ops.jz @ ops.jz
    np.testing.assert_allclose(casimir, j * (j + 1) * np.eye(ops.dim), atol=1e-12)
    assert ops.dim == int(2 * j + 1)


def test_spin_one_operators_should_have_the_ladder_elements():
    ops = sme_oracle.build_spin_operators(1.0)
    np.testing.assert_allclose(np.diag(ops.jz).real, [1.0, 0.0, -1.0])
    assert ops.jx[0, 1] == pytest.approx(1 / math.sqrt(2))


@pytest.mark.parametrize('j', [0.3, -0.5])
def test_spin_operators_with_invalid_spin_should_raise(j):
    with pytest.raises(ParameterError):
        sme_oracle.build_spin_operators(j)


@pytest.mark.parametrize('j', SPINS)
def test_coherent_state_should_point_along_x(j):
    ops = sme_oracle.build_spin_operators(j)
    rho = sme_oracle.coherent_spin_state_x(ops).rho
    assert np.real(np.trace(rho @ ops.jx)) == pytest.approx(j)
    mean, var = sme_oracle.oracle_moments(rho, ops)
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert var == pytest.approx(j / 2)


@pytest.mark.parametrize('rho', [
    np.array([[0.5, 0.1], [0.0, 0.5]]),
    np.array([[0.6, 0.0], [0.0, 0.6]]),
    np.array([[1.5, 0.0], [0.0, -0.5]]),
])
def test_density_matrix_with_broken_invariant_should_raise(rho):
    with pytest.raises(StabilityError):
        sme_oracle.DensityMatrix(rho.astype(complex))


@given(j=st.sampled_from([0.5, 1.0, 1.5, 2.0, 3.0, 5.0]), m=st.floats(1e3, 1e6),
       eta=st.floats(0.1, 1.0), b=st.floats(-1e-3, 1e-3), seed=st.integers(0, 2 ** 32))
def test_sme_step_should_keep_a_valid_density_matrix(j, m, eta, b, seed):
    p = make_params(j_total=j, meas_strength=m, efficiency=eta, b_true=b)
    ops = sme_oracle.build_spin_operators(j)
    rho = sme_oracle.coherent_spin_state_x(ops).rho
    dt = sme_oracle.recommended_dt(p)
    for dW in SeedSpec(seed, 0).generator().standard_normal(200) * math.sqrt(dt):
        rho = sme_oracle.sme_step(rho, ops, p, dt, dW)
    sme_oracle.DensityMatrix(rho)


@pytest.mark.parametrize('j', [0.5, 1.0, 2.0, 5.0, 10.0])
def test_sme_step_should_keep_a_pure_state_positive(j):
    p = make_params(j_total=j, b_true=1e-3)
    ops = sme_oracle.build_spin_operators(j)
    rho = sme_oracle.coherent_spin_state_x(ops).rho
    dt = sme_oracle.recommended_dt(p)
    rho = sme_oracle.sme_step(rho, ops, p, dt, 0.0)
    assert np.min(np.linalg.eigvalsh(rho)) > -1e-12
    for dW in SeedSpec(6, 0).generator().standard_normal(500) * math.sqrt(dt):
        rho = sme_oracle.sme_step(rho, ops, p, dt, dW)
        assert np.min(np.linalg.eigvalsh(rho)) > -1e-12


def test_sme_step_should_follow_the_ito_increment_over_short_steps():
    p = make_params(j_total=1.0, b_true=1e-3, efficiency=0.7)
    ops = sme_oracle.build_spin_operators(1.0)
    rho = sme_oracle.coherent_spin_state_x(ops).rho
    dt = 1e-4 * sme_oracle.recommended_dt(p)
    dW = 0.5 * math.sqrt(dt)
    jz, jy = ops.jz, ops.jy
    mean = np.trace(jz @ rho).real
    ito = (1j * p.gamma * p.b_true * (jy @ rho - rho @ jy) * dt
           + p.meas_strength * (jz @ rho @ jz - 0.5 * (jz @ jz @ rho + rho @ jz @ jz)) * dt
           + math.sqrt(p.meas_strength * p.efficiency)
           * (jz @ rho + rho @ jz - 2 * mean * rho) * dW)
    step = sme_oracle.sme_step(rho, ops, p, dt, dW) - rho
    np.testing.assert_allclose(step, ito, atol=1e-2 * np.max(np.abs(ito)))


def test_field_should_rotate_the_spin_toward_positive_jz():
    p = make_params(b_true=1e-3)
    grid = sme_oracle.oracle_grid(p, 1e-7)
    run = sme_oracle.integrate_sme(p, grid)
    assert run.mean_jz[-1] > 0
    expected = p.gamma * p.b_true * 0.5 * 1e-7
    assert run.mean_jz[-1] == pytest.approx(expected, rel=0.05)


@pytest.mark.parametrize('j', [0.5, 2.0])
def test_unconditioned_evolution_should_keep_the_jz_distribution(j):
    p = make_params(j_total=j)
    grid = sme_oracle.oracle_grid(p, 1e-6)
    run = sme_oracle.integrate_sme(p, grid)
    np.testing.assert_allclose(run.mean_jz, 0.0, atol=1e-12)
    np.testing.assert_allclose(run.var_jz, j / 2, rtol=1e-3)


def test_recommended_dt_should_shrink_with_dimension():
    assert sme_oracle.recommended_dt(make_params(j_total=0.5)) == pytest.approx(1 / (100e5 * 4))
    assert sme_oracle.recommended_dt(make_params(j_total=10.0)) == pytest.approx(
        1 / (100e5 * 441))


def test_integrate_sme_beyond_the_dense_limit_should_raise():
    p = make_params(j_total=60.0)
    with pytest.raises(ParameterError):
        sme_oracle.integrate_sme(p, TimeGrid.uniform(1e-9, 1e-9), np.zeros(1))


@pytest.mark.parametrize('j', [0.5, 1.0, 2.0, 5.0])
def test_dephasing_should_follow_the_analytic_law(j):
    assert sme_oracle.dephasing_check(make_params(j_total=j)) <= 0.01


def test_oracle_comparison_should_serialize_deviation_columns():
    p = make_params(j_total=1.0, t_total=2e-8)
    comparison = sme_oracle.compare_to_gaussian(p, sme_oracle.oracle_grid(p), SeedSpec(1, 0))
    rows = list(comparison.rows())
    assert len(rows) == len(comparison.times)
    assert comparison.header == ["t", "d_mean", "d_var"]
    assert comparison.d_mean[0] == pytest.approx(0.0, abs=1e-12)
    assert comparison.mean_threshold == pytest.approx(0.05 * math.sqrt(0.5))


@pytest.mark.slow
def test_gaussian_model_should_match_the_master_equation_at_j_ten():
    p = make_params(j_total=10.0, t_total=1e-6)
    comparison = sme_oracle.compare_to_gaussian(p, sme_oracle.oracle_grid(p), SeedSpec(20031, 0))
    assert comparison.passed


@pytest.mark.slow
def test_gaussian_model_agreement_should_improve_with_j():
    scores = []
    for j in (2.0, 5.0, 10.0, 20.0):
        p = make_params(j_total=j, t_total=1e-6)
        grid = sme_oracle.oracle_grid(p)
        deviations = [
            sme_oracle.compare_to_gaussian(p, grid, SeedSpec(20031, i)).max_mean_deviation
            for i in range(4)]
        scores.append(np.mean(deviations) / math.sqrt(j / 2))
    assert all(a >= b for a, b in zip(scores, scores[1:]))
