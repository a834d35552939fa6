# coding: utf-8
"""Field estimators: the quantum Kalman filter, its covariance, and baselines.

The filter is the exact discrete-time Kalman filter of the discretized model
in :mod:`.dynamics`, so on simulated records it is optimal to rounding error.
Its gains do not depend on the data and are computed once per
(params, grid) by :class:`FilterPlan`; :class:`KalmanBank` then runs the
state recursion for a whole batch of records at once.
"""
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import dynamics
from .exceptions import (
    GridError, ModelValidityWarning, ParameterError, StabilityError, ValidityError,
)

logger = logging.getLogger(__name__)

PSD_TOL = 1e-12

SOURCES = ("riccati_numeric", "riccati_analytic", "asymptotic", "shotnoise")
REGRESSORS = ("time", "bloch")

#: M * t_end above which the plain line fit is biased by the Bloch decay
REGRESSION_DECAY_LIMIT = 0.5


def _scalar_or_array(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


# -- system description -------------------------------------------------------

@dataclass(frozen=True)
class SystemMatrices:
    """B(t), C and D of the filtering equations at time ``t``.

    A(t) enters only through :meth:`transition`, its exact integral over a step.
    """
    params: object
    t: float

    @property
    def b(self):
        return np.array([dynamics.conditional_variance(self.params, self.t), 0.0])

    c = np.array([[1.0, 0.0]])

    @property
    def d(self):
        return self.params.record_noise_scale

    def transition(self, dt):
        """``(drift, sigma)`` of the step ``[t, t + dt]``.

        The state moves by ``[[1, drift], [0, 1]]`` and picks up
        ``(sigma * dW, 0)`` from the record noise ``dW``.
        """
        p = self.params
        return (dynamics.drift_integral(p, self.t, self.t + dt),
                dynamics.diffusion_coefficient(p, self.t + 0.5 * dt))


def system_matrices(p, t):
    return SystemMatrices(params=p, t=float(t))


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Filter state after the record up to ``t``.

    ``v`` is the finite part of the covariance. While the prior on B has not
    yet been informed by the record, ``diffuse`` holds the direction ``u`` of
    the infinite part (covariance ``v + kappa u u^T`` with kappa -> inf).
    """
    t: float
    x_tilde: np.ndarray
    v: np.ndarray
    diffuse: tuple = None

    @property
    def info_form(self):
        return self.diffuse is not None

    @property
    def jz_tilde(self):
        return float(self.x_tilde[0])

    @property
    def b_tilde(self):
        return float(self.x_tilde[1])

    @property
    def b_variance(self):
        if self.diffuse is not None and self.diffuse[1] != 0.0:
            return math.inf
        return float(self.v[1, 1])


def kalman_init(p):
    if p.has_infinite_prior:
        return KalmanState(t=0.0, x_tilde=np.zeros(2), v=np.zeros((2, 2)), diffuse=(0.0, 1.0))
    return KalmanState(t=0.0, x_tilde=np.zeros(2), v=np.diag([0.0, float(p.prior_b_variance)]))


def _advance(v, diffuse, drift, sigma, h, noise_scale):
    """One covariance step; returns ``(gain, v_next, diffuse_next)``.

    ``v`` is ``(v11, v12, v22)``. The covariance is stepped in Joseph form,
    which keeps it positive semidefinite for any gain. When the diffuse
    direction is first observed the limiting gain removes it entirely.
    """
    a, b, c = v
    if diffuse is not None and diffuse[0] != 0.0:
        u1, u2 = diffuse
        k1 = (u1 + drift * u2) / (u1 * h)
        k2 = u2 / (u1 * h)
        diffuse = None
    else:
        f = h * h * a + noise_scale * noise_scale * h
        k1 = (h * (a + drift * b) + sigma * noise_scale * h) / f
        k2 = h * b / f
        if diffuse is not None:
            diffuse = (diffuse[0] + drift * diffuse[1], diffuse[1])
    l11 = 1.0 - k1 * h
    l21 = -k2 * h
    r11, r12 = l11 * a + drift * b, l11 * b + drift * c
    r21, r22 = l21 * a + b, l21 * b + c
    w1, w2 = sigma - k1 * noise_scale, -k2 * noise_scale
    v_next = (r11 * l11 + r12 * drift + w1 * w1 * h,
              r11 * l21 + r12 + w1 * w2 * h,
              r21 * l21 + r22 + w2 * w2 * h)
    return (k1, k2), v_next, diffuse


def _min_eigenvalue(v11, v12, v22):
    half_trace = 0.5 * (v11 + v22)
    return half_trace - np.hypot(0.5 * (v11 - v22), v12)


def check_covariance(v11, v12, v22):
    v11, v12, v22 = (np.asarray(x, dtype=float) for x in (v11, v12, v22))
    trace = np.abs(v11 + v22)
    if np.any(_min_eigenvalue(v11, v12, v22) < -PSD_TOL * trace):
        raise StabilityError("filter covariance lost positive semidefiniteness; reduce dt")


def kalman_step(s, mats, d_xi, dt):
    """Advance the filter over ``[s.t, s.t + dt]`` with the record increment ``d_xi``."""
    if not math.isclose(mats.t, s.t, rel_tol=1e-12, abs_tol=1e-300):
        raise GridError("system matrices evaluated at t={} for a state at t={}".format(
            mats.t, s.t))
    drift, sigma = mats.transition(dt)
    v = (s.v[0, 0], s.v[0, 1], s.v[1, 1])
    (k1, k2), (a, b, c), diffuse = _advance(v, s.diffuse, drift, sigma, dt, mats.d)
    check_covariance(a, b, c)
    jz, bt = s.x_tilde
    innovation = d_xi - dt * jz
    x_tilde = np.array([jz + drift * bt + k1 * innovation, bt + k2 * innovation])
    return KalmanState(t=s.t + dt, x_tilde=x_tilde, v=np.array([[a, b], [b, c]]),
                       diffuse=diffuse)


class FilterPlan(object):
    """Gains and covariances of the filter over a whole grid.

    ``gain`` has one row per step; ``v11``, ``v12`` and ``v22`` one value per
    grid point, infinite while the prior is still diffuse.
    """

    def __init__(self, p, grid, coefficients=None):
        coef = coefficients or dynamics.StepCoefficients(p, grid)
        self.params = p
        self.grid = grid
        self.steps = coef.steps
        self.drift = coef.drift
        n = grid.n_steps
        gain = np.empty((n, 2))
        cov = np.empty((n + 1, 3))
        state = kalman_init(p)
        v = (0.0, 0.0, state.v[1, 1])
        diffuse = state.diffuse
        cov[0] = v
        diffuse_steps = 0
        noise_scale = p.record_noise_scale
        for k, (drift, sigma, h) in enumerate(zip(coef.drift.tolist(), coef.diffusion.tolist(),
                                                  coef.steps.tolist())):
            if diffuse is not None:
                diffuse_steps = k + 1
            gain[k], v, diffuse = _advance(v, diffuse, drift, sigma, h, noise_scale)
            cov[k + 1] = v
        self.gain = gain
        self.v11, self.v12, self.v22 = cov.T.copy()
        if p.has_infinite_prior:
            # the diffuse direction has a Jz component from the first step on
            self.v11[1:diffuse_steps] = math.inf
            self.v12[1:diffuse_steps] = math.inf
            self.v22[:diffuse_steps] = math.inf
        finite = np.isfinite(self.v22)
        check_covariance(self.v11[finite], self.v12[finite], self.v22[finite])
        self.diffuse_steps = diffuse_steps
        logger.debug("filter plan over %d steps (%d diffuse)", n, diffuse_steps)

    @property
    def b_variance(self):
        return self.v22


def gain_sequence(p, grid):
    return FilterPlan(p, grid).gain


class KalmanBank(object):
    """Runs the filter state for a batch of records fed block by block.

    ``b_tilde`` at each checkpoint (grid index) is collected in ``estimates``,
    shape ``(n_batch, len(checkpoints))``.
    """

    def __init__(self, plan, n_batch, checkpoints=()):
        self.plan = plan
        self.jz = np.zeros(n_batch)
        self.b = np.zeros(n_batch)
        self.checkpoints = np.asarray(checkpoints, dtype=int)
        self.estimates = np.zeros((n_batch, len(self.checkpoints)))
        self._slots = {}
        for slot, index in enumerate(self.checkpoints.tolist()):
            self._slots.setdefault(index, []).append(slot)
        self._h = plan.steps.tolist()
        self._drift = plan.drift.tolist()
        self._k1 = plan.gain[:, 0].tolist()
        self._k2 = plan.gain[:, 1].tolist()

    def consume(self, start, d_xi):
        jz, b = self.jz, self.b
        h, drift, k1, k2 = self._h, self._drift, self._k1, self._k2
        slots = self._slots
        for j, column in enumerate(np.ascontiguousarray(np.atleast_2d(d_xi).T)):
            k = start + j
            innovation = column - h[k] * jz
            jz = jz + drift[k] * b + k1[k] * innovation
            b = b + k2[k] * innovation
            for slot in slots.get(k + 1, ()):
                self.estimates[:, slot] = b
        self.jz, self.b = jz, b


@dataclass(frozen=True, eq=False)
class FilterTrace:
    times: np.ndarray
    jz_tilde: np.ndarray
    b_tilde: np.ndarray
    v11: np.ndarray
    v12: np.ndarray
    v22: np.ndarray

    header = ["t", "jz_tilde", "b_tilde", "v11", "v12", "v22"]

    def rows(self):
        return zip(self.times, self.jz_tilde, self.b_tilde, self.v11, self.v12, self.v22)


def filter_trace(record, p, plan=None):
    """Run the filter over one record, keeping every intermediate estimate."""
    plan = plan or FilterPlan(p, record.grid)
    n = record.grid.n_steps
    jz = np.zeros(n + 1)
    b = np.zeros(n + 1)
    bank = KalmanBank(plan, 1)
    for k, increment in enumerate(record.d_xi):
        bank.consume(k, np.array([[increment]]))
        jz[k + 1], b[k + 1] = bank.jz[0], bank.b[0]
    return FilterTrace(times=record.grid.times, jz_tilde=jz, b_tilde=b,
                       v11=plan.v11, v12=plan.v12, v22=plan.v22)


# -- covariance in continuous time ----------------------------------------------

@dataclass(frozen=True, eq=False)
class ThresholdCurve:
    times: np.ndarray
    delta_b: np.ndarray
    source: str

    header = ["t", "delta_b", "source"]

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ParameterError([("source", "unknown threshold source {!r}".format(self.source))])

    def rows(self):
        for t, value in zip(self.times, self.delta_b):
            yield [t, value, self.source]


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    times: np.ndarray
    v11: np.ndarray
    v12: np.ndarray
    v22: np.ndarray

    def curve(self):
        keep = np.isfinite(self.v22)
        return ThresholdCurve(times=self.times[keep], delta_b=np.sqrt(self.v22[keep]),
                              source="riccati_numeric")


def _riccati_series(p, t):
    """``(x1, s)`` for ``t`` much shorter than 1/(2 eta M J) and 1/M."""
    rate = p.squeezing_rate + 0.5 * p.meas_strength
    g = p.gamma * p.j_total
    x1 = g * t * (1.0 - 0.5 * rate * t)
    s = p.record_precision * g * g * t ** 3 / 3.0
    return x1, s


def riccati_integrate(p, grid):
    """Covariance of the filter from the Riccati flow.

    With the correlated record noise folded in, the flow is
    ``dV/dt = A_c V + V A_c^T - D^-2 V C^T C V`` with ``A_c = A - D^-2 B C``.
    Starting from ``diag(0, prior)`` its solution stays rank one:
    ``V = x x^T / (1/prior + s)`` with ``dx/dt = A_c x``, ``x(0) = (0, 1)``
    and ``ds/dt = D^-2 x_1^2``. That linear system is integrated in
    logarithmic time from a short-time series start.
    """
    times = np.asarray(getattr(grid, "times", grid), dtype=float)
    n = len(times)
    if p.prior_b_variance == 0:
        zeros = np.zeros(n)
        return RiccatiSolution(times=times, v11=zeros, v12=zeros.copy(), v22=zeros.copy())

    rate = p.squeezing_rate
    half_m = 0.5 * p.meas_strength
    g = p.gamma * p.j_total
    r = p.record_precision
    t0 = 1e-6 / (rate + p.meas_strength)

    def flow(log_t, y):
        t = math.exp(log_t)
        x1 = y[0]
        return [t * (-rate / (1.0 + rate * t) * x1 + g * math.exp(-half_m * t)), t * r * x1 * x1]

    x1 = np.zeros(n)
    s = np.zeros(n)
    early = (times > 0) & (times < t0)
    x1[early], s[early] = _riccati_series(p, times[early])
    late = times >= t0
    if np.any(late):
        t_eval = np.log(times[late])
        solution = integrate.solve_ivp(
            flow, (math.log(t0), t_eval[-1]), list(_riccati_series(p, t0)), method="DOP853",
            t_eval=t_eval, rtol=1e-12, atol=0.0)
        if not solution.success:
            raise StabilityError("Riccati integration failed: {}".format(solution.message))
        x1[late], s[late] = solution.y
    if np.any(s < 0):
        raise StabilityError("Riccati information became negative")

    inverse_prior = 0.0 if p.has_infinite_prior else 1.0 / p.prior_b_variance
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = 1.0 / (inverse_prior + s)
        v11 = np.where(times > 0, x1 * x1 * scale, 0.0)
        v12 = np.where(times > 0, x1 * scale, 0.0)
    v22 = scale
    logger.debug("Riccati flow integrated over %d points", n)
    return RiccatiSolution(times=times, v11=v11, v12=v12, v22=v22)


_SERIES_SWITCH = 1.0
_SERIES_TERMS = 30


def _decay_combinations(x):
    """phi1 = -(x+4) e^-x + 8 e^-x/2 + x - 4 and phi0 = -e^-x + 4 e^-x/2 + x - 3.

    Both vanish to high order at x = 0, so small arguments use their Taylor
    series to avoid cancellation.
    """
    x = np.asarray(x, dtype=float)
    phi1 = np.empty_like(x)
    phi0 = np.empty_like(x)
    small = x < _SERIES_SWITCH
    xs = x[small]
    acc1 = np.zeros_like(xs)
    acc0 = np.zeros_like(xs)
    for n in range(_SERIES_TERMS, 2, -1):
        sign = -1.0 if n % 2 else 1.0
        c1 = sign * (n - 4 + 2.0 ** (3 - n)) / math.factorial(n)
        c0 = sign * (2.0 ** (2 - n) - 1.0) / math.factorial(n)
        acc1 = (acc1 + c1) * xs
        acc0 = (acc0 + c0) * xs
    phi1[small] = acc1 * xs * xs
    phi0[small] = acc0 * xs * xs
    xl = x[~small]
    phi1[~small] = -(xl + 4.0) * np.exp(-xl) + 8.0 * np.exp(-0.5 * xl) + xl - 4.0
    phi0[~small] = -np.exp(-xl) + 4.0 * np.exp(-0.5 * xl) + xl - 3.0
    return phi1, phi0


def riccati_analytic(p, t):
    """Closed-form detection threshold for an infinite prior.

    delta_B(t) = M / (4 gamma J sqrt(eta)) * sqrt((1 + k M t) / (k phi1 + phi0)),
    k = 2 eta J; at eta = 1 this is the familiar form with
    a = -(2 eta J (M t + 4) + 1) and b = M t + 2 eta J (M t - 4) - 3.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ParameterError([("t", "the closed form needs t > 0")])
    k = 2.0 * p.efficiency * p.j_total
    x = p.meas_strength * t
    phi1, phi0 = _decay_combinations(np.atleast_1d(x))
    denominator = (k * phi1 + phi0).reshape(x.shape)
    bad = np.atleast_1d(denominator) <= 0
    if np.any(bad):
        raise ValidityError("closed-form threshold denominator is not positive at M t = {}".format(
            np.atleast_1d(x)[bad][0]))
    prefactor = p.meas_strength / (4.0 * p.gamma * p.j_total * math.sqrt(p.efficiency))
    return _scalar_or_array(prefactor * np.sqrt((1.0 + k * x) / denominator))


def detection_threshold_asymptotic(p, t):
    """delta_B ~ (1 / gamma J) sqrt(3 / (M eta t^3)), valid for t >> 1/(J M)."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ParameterError([("t", "time must be positive")])
    if np.any(t <= 10.0 / (p.j_total * p.meas_strength)):
        warnings.warn("asymptotic threshold used at t <= 10/(J M), outside its validity window",
                      ModelValidityWarning)
    value = np.sqrt(3.0 / (p.meas_strength * p.efficiency * t ** 3)) / (p.gamma * p.j_total)
    return _scalar_or_array(value)


def shotnoise_limit(p, t_tot):
    t_tot = np.asarray(t_tot, dtype=float)
    if np.any(t_tot <= 0):
        raise ParameterError([("t_tot", "time must be positive")])
    return _scalar_or_array(1.0 / (p.gamma * np.sqrt(p.j_total * p.t2_bound * t_tot)))


def threshold_curve(p, times, source):
    """ThresholdCurve of ``source`` over the positive entries of ``times``."""
    times = np.asarray(times, dtype=float)
    times = times[times > 0]
    if source == "riccati_numeric":
        return riccati_integrate(p, times).curve()
    if source == "riccati_analytic":
        values = riccati_analytic(p, times)
    elif source == "asymptotic":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ModelValidityWarning)
            values = detection_threshold_asymptotic(p, times)
    elif source == "shotnoise":
        values = shotnoise_limit(p, times)
    else:
        raise ParameterError([("source", "unknown threshold source {!r}".format(source))])
    return ThresholdCurve(times=times, delta_b=np.atleast_1d(values), source=source)


# -- regression baseline ------------------------------------------------------------

def regressor_values(p, t, regressor="time"):
    """Fit variable of the line fit: ``t`` itself, or the decay-compensated
    tau(t) = (2/M)(1 - exp(-M t / 2)) for ``bloch``."""
    t = np.asarray(t, dtype=float)
    if regressor == "time":
        return t
    if regressor == "bloch":
        half_m = 0.5 * p.meas_strength
        return -np.expm1(-half_m * t) / half_m
    raise ParameterError([("regressor", "regressor must be one of {}".format(REGRESSORS))])


def _warn_decay(p, t_end, regressor):
    if regressor == "time" and p.meas_strength * t_end > REGRESSION_DECAY_LIMIT:
        warnings.warn("line fit over M t = {:.3g}: the Bloch vector has decayed "
                      "significantly".format(p.meas_strength * t_end), ModelValidityWarning)


def _slope(s0, s1, s2, sy, sxy):
    return (s0 * sxy - s1 * sy) / (s0 * s2 - s1 * s1)


def regression_estimate(record, p, t_end=None, regressor="time"):
    """Least-squares line fit of the record rate ``d_xi / dt`` over ``[0, t_end]``.

    Each sample is weighted by its step length; returns the slope divided
    by gamma J.
    """
    grid = record.grid
    t_end = grid.t_total if t_end is None else t_end
    if t_end > grid.t_total * (1 + 1e-12):
        raise ParameterError([("t_end", "t_end must not exceed the record length")])
    n = int(np.searchsorted(grid.times, t_end * (1 + 1e-12), side="right")) - 1
    if n < 3:
        raise ParameterError([("t_end", "a line fit needs at least 3 samples")])
    _warn_decay(p, t_end, regressor)
    h = grid.steps[:n]
    x = regressor_values(p, grid.times[:n], regressor)
    d_xi = np.asarray(record.d_xi[:n], dtype=float)
    beta = _slope(h.sum(), (h * x).sum(), (h * x * x).sum(), d_xi.sum(), (x * d_xi).sum())
    return float(beta / (p.gamma * p.j_total))


class RegressionAccumulator(object):
    """Streaming line fits of a batch of records at every checkpoint.

    The step-weighted moments of the regressor are fixed by the grid; only
    the two data sums are accumulated per record.
    """

    def __init__(self, p, grid, n_batch, checkpoints=(), regressor="time"):
        self.params = p
        self.checkpoints = np.asarray(checkpoints, dtype=int)
        if np.any(self.checkpoints < 3):
            raise ParameterError([("checkpoints", "a line fit needs at least 3 samples")])
        if len(self.checkpoints):
            _warn_decay(p, grid.times[self.checkpoints.max()], regressor)
        h = grid.steps
        x = regressor_values(p, grid.times[:-1], regressor)
        self._x = x
        moments = np.cumsum(np.stack((h, h * x, h * x * x)), axis=1)
        self._moments = moments[:, self.checkpoints - 1]
        self._sy = np.zeros(n_batch)
        self._sxy = np.zeros(n_batch)
        self._data = np.zeros((2, n_batch, len(self.checkpoints)))

    def consume(self, start, d_xi):
        d_xi = np.atleast_2d(d_xi)
        stop = start + d_xi.shape[1]
        sy = self._sy[:, None] + np.cumsum(d_xi, axis=1)
        sxy = self._sxy[:, None] + np.cumsum(d_xi * self._x[start:stop], axis=1)
        inside = (self.checkpoints > start) & (self.checkpoints <= stop)
        columns = self.checkpoints[inside] - start - 1
        self._data[0][:, inside] = sy[:, columns]
        self._data[1][:, inside] = sxy[:, columns]
        self._sy, self._sxy = sy[:, -1], sxy[:, -1]

    @property
    def estimates(self):
        s0, s1, s2 = self._moments
        beta = _slope(s0, s1, s2, self._data[0], self._data[1])
        return beta / (self.params.gamma * self.params.j_total)
