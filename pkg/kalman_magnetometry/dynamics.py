# coding: utf-8
"""Conditional Gaussian spin trajectories and the homodyne measurement record.

The conditional variance of Jz is deterministic and has a closed form, so
only the mean is stepped (Euler-Maruyama with the variance taken at the step
midpoint). The same Wiener increment drives the mean and the photocurrent of
its step.
"""
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import TimeGrid
from .exceptions import ModelValidityWarning, ParameterError

logger = logging.getLogger(__name__)

#: steps of noise drawn per generator call; fixed so that a trajectory's
#: noise does not depend on how trajectories are batched
NOISE_BLOCK = 4096

SMALL_ANGLE_LIMIT = 0.1


def conditional_variance(p, t):
    """<dJz^2>(t) = (J/2) / (1 + 2 eta M J t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterError([("t", "time must be non-negative")])
    value = 0.5 * p.j_total / (1.0 + p.squeezing_rate * t)
    return float(value) if value.ndim == 0 else value


def bloch_length(p, t):
    value = p.j_total * np.exp(-0.5 * p.meas_strength * np.asarray(t, dtype=float))
    return float(value) if value.ndim == 0 else value


def drift_integral(p, t0, t1):
    """Integral of gamma J exp(-M s / 2) over [t0, t1] (multiply by B for the drift)."""
    half_m = 0.5 * p.meas_strength
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    value = p.gamma * p.j_total * np.exp(-half_m * t0) * -np.expm1(-half_m * (t1 - t0)) / half_m
    return float(value) if value.ndim == 0 else value


def diffusion_coefficient(p, t_mid):
    """2 sqrt(M eta) <dJz^2> evaluated at the step midpoint."""
    return 2.0 * math.sqrt(p.meas_strength * p.efficiency) * conditional_variance(p, t_mid)


def warn_if_large_angle(p):
    angle = abs(p.larmor_frequency) * p.t_total
    if angle > SMALL_ANGLE_LIMIT:
        warnings.warn(
            "omega_L * t_total = {:.3g} exceeds {}; the Gaussian model assumes a small "
            "precession angle".format(angle, SMALL_ANGLE_LIMIT), ModelValidityWarning)


@dataclass(frozen=True)
class ConditionalState:
    t: float
    mean_jz: float
    var_jz: float
    bloch_length: float


def step_mean(state, p, dt, dW):
    """Advance <Jz>_c over one step of length ``dt`` driven by ``dW``."""
    t_mid = state.t + 0.5 * dt
    return (state.mean_jz + p.b_true * drift_integral(p, state.t, state.t + dt)
            + diffusion_coefficient(p, t_mid) * dW)


def photocurrent_increment(mean_jz, p, dt, dW):
    """Return ``(y, d_xi)`` for one step.

    ``y dt = 2 eta sqrt(M) <Jz>_c dt + sqrt(eta) dW`` and
    ``d_xi = y dt / (2 eta sqrt(M)) = <Jz>_c dt + dW / (2 sqrt(M eta))``.
    """
    d_xi = mean_jz * dt + p.record_noise_scale * dW
    y = d_xi * 2.0 * p.efficiency * math.sqrt(p.meas_strength) / dt
    return y, d_xi


def reconstruct_noise(record, p):
    """Invert the photocurrent map: dW = (d_xi - <Jz>_c dt) / D."""
    return (record.d_xi - record.mean_jz[..., :-1] * record.grid.steps) / p.record_noise_scale


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One simulated trajectory.

    ``mean_jz``, ``var_jz`` and ``bloch`` hold one value per grid point;
    ``d_xi``, ``y`` and ``noise`` one value per step.
    """
    grid: TimeGrid
    mean_jz: np.ndarray
    var_jz: np.ndarray
    bloch: np.ndarray
    d_xi: np.ndarray
    y: np.ndarray
    noise: np.ndarray

    @property
    def states(self):
        return [ConditionalState(float(t), float(m), float(v), float(b))
                for t, m, v, b in zip(self.grid.times, self.mean_jz, self.var_jz, self.bloch)]

    def rows(self):
        times = self.grid.times
        for k in range(len(times)):
            if k < len(self.d_xi):
                y, d_xi = self.y[k], self.d_xi[k]
            else:
                y = d_xi = ""
            yield [times[k], self.mean_jz[k], self.var_jz[k], self.bloch[k], y, d_xi]

    header = ["t", "mean_jz", "var_jz", "bloch_length", "y", "d_xi"]


class StepCoefficients(object):
    """Per-step constants of the discretized model, shared by every trajectory."""

    def __init__(self, p, grid):
        times = grid.times
        self.steps = grid.steps
        self.starts = times[:-1]
        self.drift = drift_integral(p, times[:-1], times[1:])
        self.diffusion = diffusion_coefficient(p, times[:-1] + 0.5 * grid.steps)
        self.sqrt_steps = np.sqrt(grid.steps)


def iter_record_blocks(p, grid, seeds, zero_noise=False, block=NOISE_BLOCK, coefficients=None):
    """Simulate a batch of trajectories, yielding the record block by block.

    Yields ``(start, mean_jz, d_xi, dW, carry)`` where ``mean_jz`` holds the
    mean at the start of each step of the block, shape
    ``(len(seeds), length)``, and ``carry`` the mean at the end of the block.
    """
    coef = coefficients or StepCoefficients(p, grid)
    generators = [seed.generator() for seed in seeds]
    n_batch = len(generators)
    carry = np.zeros(n_batch)
    for start in range(0, grid.n_steps, block):
        stop = min(start + block, grid.n_steps)
        length = stop - start
        if zero_noise:
            dW = np.zeros((n_batch, length))
        else:
            dW = np.stack([g.standard_normal(block)[:length] for g in generators])
            dW *= coef.sqrt_steps[start:stop]
        increments = p.b_true * coef.drift[start:stop] + coef.diffusion[start:stop] * dW
        path = np.cumsum(np.concatenate((carry[:, None], increments), axis=1), axis=1)
        mean_jz = path[:, :-1]
        d_xi = mean_jz * coef.steps[start:stop] + p.record_noise_scale * dW
        carry = path[:, -1]
        yield start, mean_jz, d_xi, dW, carry


def simulate_batch(p, grid, seeds, zero_noise=False):
    """Full records for a batch; returns ``(mean_jz, d_xi, dW)`` arrays."""
    warn_if_large_angle(p)
    n_batch = len(seeds)
    mean_jz = np.empty((n_batch, grid.n_steps + 1))
    d_xi = np.empty((n_batch, grid.n_steps))
    noise = np.empty((n_batch, grid.n_steps))
    for start, m, dx, dW, carry in iter_record_blocks(p, grid, seeds, zero_noise=zero_noise):
        stop = start + m.shape[1]
        mean_jz[:, start:stop] = m
        d_xi[:, start:stop] = dx
        noise[:, start:stop] = dW
        mean_jz[:, stop] = carry
    return mean_jz, d_xi, noise


def simulate_trajectory(p, grid, seed, zero_noise=False):
    """Simulate one conditional trajectory and its measurement record."""
    mean_jz, d_xi, noise = simulate_batch(p, grid, [seed], zero_noise=zero_noise)
    times = grid.times
    y = d_xi[0] * 2.0 * p.efficiency * math.sqrt(p.meas_strength) / grid.steps
    logger.debug("simulated %d steps for stream %s", grid.n_steps, seed.stream_index)
    return TrajectoryRecord(
        grid=grid,
        mean_jz=mean_jz[0],
        var_jz=conditional_variance(p, times),
        bloch=bloch_length(p, times),
        d_xi=d_xi[0],
        y=y,
        noise=noise[0],
    )


def default_cutoff(p):
    """Display cutoff in Hz.

    The value 2 pi sqrt(J) / t_total is read as an angular -3 dB frequency,
    i.e. sqrt(J) / t_total in Hz.
    """
    return math.sqrt(p.j_total) / p.t_total


def lowpass_filter(y, cutoff, steps, p=None):
    """Causal single-pole low-pass filter with its -3 dB point at ``cutoff`` Hz.

    ``steps`` is the sample spacing: a scalar, or one value per sample for a
    non-uniform grid. Without a ``cutoff`` the display default for ``p`` is
    used. The filter starts in steady state on the first sample, so a
    constant input passes unchanged.
    """
    if cutoff is None:
        if p is None:
            raise ParameterError([("cutoff", "a cutoff or the run parameters are required")])
        cutoff = default_cutoff(p)
    if not cutoff > 0:
        raise ParameterError([("cutoff", "cutoff frequency must be positive")])
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        return y.copy()
    omega = 2.0 * math.pi * cutoff
    steps = np.broadcast_to(np.asarray(steps, dtype=float), y.shape)
    if np.allclose(steps, steps[0], rtol=1e-9):
        alpha = -math.expm1(-omega * steps[0])
        b, a = [alpha], [1.0, alpha - 1.0]
        filtered, _ = signal.lfilter(b, a, y, zi=signal.lfilter_zi(b, a) * y[0])
        return filtered
    decay = np.exp(-omega * steps)
    filtered = np.empty_like(y)
    filtered[0] = y[0]
    for k in range(1, len(y)):
        filtered[k] = decay[k] * filtered[k - 1] + (1.0 - decay[k]) * y[k]
    return filtered
