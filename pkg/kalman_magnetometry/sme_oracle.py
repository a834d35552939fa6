# coding: utf-8
"""Brute-force stochastic master equation on the (2J+1)-dimensional spin space.

Used only at small J to check the Gaussian model in :mod:`.dynamics` against
the full conditional state, driven by the very same Wiener increments.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .core import TimeGrid
from .exceptions import ParameterError, StabilityError

logger = logging.getLogger(__name__)

MAX_ORACLE_J = 50
MEAN_TOLERANCE = 0.05

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SpinOperators:
    j: float
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray

    @property
    def dim(self):
        return self.jz.shape[0]

    @property
    def m_values(self):
        return np.real(np.diag(self.jz))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    rho: np.ndarray

    def __post_init__(self):
        check_density_matrix(self.rho)


def _two_j(j):
    two_j = 2.0 * j
    if two_j < 0 or abs(two_j - round(two_j)) > 1e-12:
        raise ParameterError([("j", "spin must be a non-negative half-integer")])
    return int(round(two_j))


def build_spin_operators(j):
    """Jx, Jy, Jz in the Jz eigenbasis ordered m = j, j-1, ..., -j."""
    dim = _two_j(j) + 1
    j = 0.5 * (dim - 1)
    m = j - np.arange(dim)
    # <m+1| J+ |m> sits one row above the diagonal
    raising = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    lowering = raising.conj().T
    return SpinOperators(
        j=j,
        jx=0.5 * (raising + lowering),
        jy=-0.5j * (raising - lowering),
        jz=np.diag(m).astype(complex),
    )


def check_density_matrix(rho):
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise StabilityError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > TRACE_TOL:
        raise StabilityError("density matrix trace drifted from 1")
    if np.min(np.linalg.eigvalsh(rho)) < -POSITIVITY_TOL:
        raise StabilityError("density matrix lost positivity; reduce dt")
    return rho


def coherent_spin_state_x(ops):
    """|J>_x <J|, the highest-weight eigenvector of Jx."""
    _, vectors = np.linalg.eigh(ops.jx)
    psi = vectors[:, -1]
    return DensityMatrix(np.outer(psi, psi.conj()))


def oracle_moments(rho, ops):
    rho = getattr(rho, "rho", rho)
    mean = np.real(np.trace(rho @ ops.jz))
    second = np.real(np.trace(rho @ ops.jz @ ops.jz))
    return float(mean), float(second - mean * mean)


def recommended_dt(p):
    return 1.0 / (100.0 * p.meas_strength * (2.0 * p.j_total + 1.0) ** 2)


def oracle_grid(p, t_total=None):
    return TimeGrid.uniform(p.t_total if t_total is None else t_total, recommended_dt(p))


def _kraus_update(rho, ops, p, dt, dy, efficiency):
    """rho' = K rho K^+ + (1 - eta) M dt Jz rho Jz, Hermitized and renormalized.

    K = 1 - (i H + M Jz^2 / 2) dt + sqrt(M eta) Jz dy with H = -gamma B Jy.
    Both terms are positive maps, so rho' stays a density matrix for any dt.
    """
    jz = ops.jz
    kraus = (np.eye(ops.dim) - (-1j * p.gamma * p.b_true * ops.jy
                                + 0.5 * p.meas_strength * (jz @ jz)) * dt
             + math.sqrt(p.meas_strength * efficiency) * dy * jz)
    updated = kraus @ rho @ kraus.conj().T
    if efficiency < 1.0:
        updated = updated + (1.0 - efficiency) * p.meas_strength * dt * (jz @ rho @ jz)
    updated = 0.5 * (updated + updated.conj().T)
    return updated / np.trace(updated).real


def sme_step(rho, ops, p, dt, dW, check=True):
    """One step of the homodyne stochastic master equation.

    d rho = i gamma B [Jy, rho] dt + M D[Jz] rho dt + sqrt(M eta) H[Jz] rho dW.
    The step is taken in Kraus form on the record increment
    dy = 2 sqrt(M eta) <Jz> dt + dW, which agrees with the Ito equation to
    first order and keeps rho positive. The Larmor term's sense makes <Jz>
    grow as +gamma B <Jx> from the +x coherent state.
    """
    rho = getattr(rho, "rho", rho)
    mean = np.trace(ops.jz @ rho).real
    dy = 2.0 * math.sqrt(p.meas_strength * p.efficiency) * mean * dt + dW
    updated = _kraus_update(rho, ops, p, dt, dy, p.efficiency)
    if check:
        check_density_matrix(updated)
    return updated


def lindblad_step(rho, ops, p, dt, check=True):
    """One step of the record-averaged (unconditioned) master equation."""
    rho = getattr(rho, "rho", rho)
    updated = _kraus_update(rho, ops, p, dt, 0.0, 0.0)
    if check:
        check_density_matrix(updated)
    return updated


@dataclass(frozen=True, eq=False)
class SmeRun:
    times: np.ndarray
    mean_jz: np.ndarray
    var_jz: np.ndarray
    rho: np.ndarray


def integrate_sme(p, grid, noise=None, ops=None, rho0=None):
    """Integrate the master equation over ``grid``.

    ``noise`` holds one Wiener increment per step; without it the
    record-averaged equation is integrated instead.
    """
    if p.j_total > MAX_ORACLE_J:
        raise ParameterError([("j_total", "the dense oracle is limited to J <= {}".format(
            MAX_ORACLE_J))])
    ops = ops or build_spin_operators(p.j_total)
    rho = (rho0 or coherent_spin_state_x(ops)).rho
    means = np.empty(grid.n_steps + 1)
    variances = np.empty(grid.n_steps + 1)
    means[0], variances[0] = oracle_moments(rho, ops)
    for k, dt in enumerate(grid.steps):
        if noise is None:
            rho = lindblad_step(rho, ops, p, dt)
        else:
            rho = sme_step(rho, ops, p, dt, noise[k])
        means[k + 1], variances[k + 1] = oracle_moments(rho, ops)
    return SmeRun(times=grid.times, mean_jz=means, var_jz=variances, rho=rho)


@dataclass(frozen=True, eq=False)
class OracleComparison:
    j_total: float
    times: np.ndarray
    d_mean: np.ndarray
    d_var: np.ndarray

    @property
    def max_mean_deviation(self):
        return float(np.max(self.d_mean))

    @property
    def max_var_deviation(self):
        return float(np.max(self.d_var))

    @property
    def mean_threshold(self):
        return MEAN_TOLERANCE * math.sqrt(0.5 * self.j_total)

    @property
    def relative_var_deviation(self):
        return self.max_var_deviation / (0.5 * self.j_total)

    @property
    def passed(self):
        return self.max_mean_deviation <= self.mean_threshold

    def rows(self):
        return zip(self.times, self.d_mean, self.d_var)

    header = ["t", "d_mean", "d_var"]


def compare_to_gaussian(p, grid, seed, zero_noise=False):
    """Pathwise deviations between the master equation and the Gaussian model.

    The Gaussian trajectory is simulated first and its stored increments are
    replayed into the master equation.
    """
    if p.j_total > 20:
        logger.warning("oracle comparison at J=%s is slow and outside the validated range",
                       p.j_total)
    record = dynamics.simulate_trajectory(p, grid, seed, zero_noise=zero_noise)
    run = integrate_sme(p, grid, record.noise)
    return OracleComparison(
        j_total=p.j_total,
        times=grid.times,
        d_mean=np.abs(run.mean_jz - record.mean_jz),
        d_var=np.abs(run.var_jz - record.var_jz),
    )


def dephasing_check(p, t=None):
    """Largest relative error of the off-diagonal decay against exp(-M (m-m')^2 t / 2).

    Runs the unconditioned equation (no record, no field). The default ``t``
    lets the fastest coherence decay by e^-3; coherences already below that
    level are not scored.
    """
    ops = build_spin_operators(p.j_total)
    span = 2.0 * ops.j
    if t is None:
        t = 6.0 / (p.meas_strength * max(span, 1.0) ** 2)
    quiet = p.with_(b_true=0.0)
    grid = TimeGrid.uniform(t, recommended_dt(p))
    rho0 = coherent_spin_state_x(ops)
    rho = integrate_sme(quiet, grid, ops=ops, rho0=rho0).rho
    m = ops.m_values
    gap = (m[:, None] - m[None, :]) ** 2
    expected = np.exp(-0.5 * p.meas_strength * gap * grid.t_total)
    start = rho0.rho
    scored = (np.abs(start) > 1e-12) & (expected >= math.exp(-3.0) * (1 - 1e-9)) & (gap > 0)
    if not np.any(scored):
        return 0.0
    ratio = np.abs(rho[scored]) / (np.abs(start[scored]) * expected[scored])
    return float(np.max(np.abs(ratio - 1.0)))
