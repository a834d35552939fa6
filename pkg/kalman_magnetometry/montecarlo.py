# coding: utf-8
"""Ensembles of simulated records and the empirical error of each estimator.

Trajectory ``i`` always draws its noise from ``substream(master_seed, i)``
and every estimator sees the same record (paired comparison). Batches may
run in worker processes, but their results are joined in trajectory order
before any reduction, so the statistics do not depend on the worker count.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dynamics, estimators
from .core import SeedSpec, TimeGrid
from .exceptions import ParameterError

logger = logging.getLogger(__name__)

ESTIMATORS = ("qkf", "regression")
BATCH_SIZE = 256


def substream(master_seed, i):
    return SeedSpec(master_seed=master_seed, stream_index=i)


def default_checkpoints(grid, per_decade=30, t_min=None):
    """Grid indices log-spaced in time between ``t_min`` and the end of the grid."""
    positive = grid.times[grid.times > 0]
    t_min = positive[min(2, len(positive) - 1)] if t_min is None else t_min
    t_max = grid.t_total
    if not 0 < t_min <= t_max:
        raise ParameterError([("t_min", "t_min must lie inside the grid")])
    n = max(2, int(math.ceil(per_decade * math.log10(t_max / t_min))) + 1)
    wanted = np.geomspace(t_min, t_max, n)
    indices = np.searchsorted(grid.times, wanted, side="left")
    indices = np.clip(indices, 3, grid.n_steps)
    return np.unique(indices)


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    params: object
    grid: TimeGrid
    n_traj: int
    master_seed: int
    estimators: tuple = ESTIMATORS
    checkpoints: np.ndarray = None
    regressor: str = "time"
    batch_size: int = BATCH_SIZE

    def __post_init__(self):
        violations = []
        if int(self.n_traj) < 2:
            violations.append(("n_traj", "an ensemble needs at least 2 trajectories"))
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            violations.append(("estimators", "estimators must be a non-empty subset of {}".format(
                ESTIMATORS)))
        if self.regressor not in estimators.REGRESSORS:
            violations.append(("regressor", "regressor must be one of {}".format(
                estimators.REGRESSORS)))
        if self.batch_size < 1:
            violations.append(("batch_size", "batch size must be positive"))
        checkpoints = self.checkpoints
        if checkpoints is None:
            checkpoints = default_checkpoints(self.grid)
        checkpoints = np.asarray(checkpoints, dtype=int)
        if len(checkpoints) == 0 or checkpoints.min() < 1 or checkpoints.max() > self.grid.n_steps:
            violations.append(("checkpoints", "checkpoints must be grid indices in [1, n_steps]"))
        elif "regression" in self.estimators and checkpoints.min() < 3:
            violations.append(("checkpoints", "a line fit needs at least 3 samples"))
        if violations:
            raise ParameterError(violations)
        object.__setattr__(self, "checkpoints", checkpoints)
        object.__setattr__(self, "estimators", tuple(self.estimators))

    @property
    def times(self):
        return self.grid.times[self.checkpoints]


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Per-checkpoint error statistics, keyed by estimator name."""
    times: np.ndarray
    n_traj: int
    master_seed: int
    b_true: float
    mse: dict
    stderr: dict
    mean_error: dict
    mean_stderr: dict
    predicted_v22: np.ndarray
    filter_bias: np.ndarray = 0.0

    header = ["t", "estimator", "mse", "stderr", "predicted_v22", "mean_b_tilde"]

    @property
    def estimators(self):
        return tuple(self.mse)

    def rms(self, estimator):
        return np.sqrt(self.mse[estimator])

    def mse_ratio(self, estimator="qkf"):
        return self.mse[estimator] / self.predicted_v22

    def rms_ratio(self, numerator="regression", denominator="qkf"):
        return self.rms(numerator) / self.rms(denominator)

    def bias_score(self, estimator="qkf"):
        """Mean error in units of its standard error.

        The filter is scored against its expected shrinkage toward the prior
        mean, -B V22 / prior, which vanishes for an infinite prior.
        """
        expected = self.filter_bias if estimator == "qkf" else 0.0
        return (self.mean_error[estimator] - expected) / self.mean_stderr[estimator]

    def rows(self):
        for name in self.estimators:
            mean_b = self.mean_error[name] + self.b_true
            for row in zip(self.times, self.mse[name], self.stderr[name], self.predicted_v22,
                           mean_b):
                yield [row[0], name] + list(row[1:])


# worker-process state, set once per worker by the pool initializer
_worker = {}


def _prepare(spec):
    coef = dynamics.StepCoefficients(spec.params, spec.grid)
    plan = estimators.FilterPlan(spec.params, spec.grid, coefficients=coef) \
        if "qkf" in spec.estimators else None
    return {"spec": spec, "coef": coef, "plan": plan}


def _init_worker(spec):
    _worker.update(_prepare(spec))


def _run_batch(bounds, state=None):
    """Estimates for trajectories ``first <= i < last`` at every checkpoint."""
    state = state or _worker
    spec, coef, plan = state["spec"], state["coef"], state["plan"]
    first, last = bounds
    seeds = [substream(spec.master_seed, i) for i in range(first, last)]
    n = len(seeds)
    sinks = {}
    if "qkf" in spec.estimators:
        sinks["qkf"] = estimators.KalmanBank(plan, n, spec.checkpoints)
    if "regression" in spec.estimators:
        sinks["regression"] = estimators.RegressionAccumulator(
            spec.params, spec.grid, n, spec.checkpoints, regressor=spec.regressor)
    blocks = dynamics.iter_record_blocks(spec.params, spec.grid, seeds, coefficients=coef)
    for start, _, d_xi, _, _ in blocks:
        for sink in sinks.values():
            sink.consume(start, d_xi)
    return {name: sink.estimates for name, sink in sinks.items()}


def _batches(n_traj, batch_size):
    return [(first, min(first + batch_size, n_traj)) for first in range(0, n_traj, batch_size)]


def run_ensemble(spec, workers=1):
    """Simulate ``spec.n_traj`` records and reduce the estimator errors."""
    p = spec.params
    dynamics.warn_if_large_angle(p)
    batches = _batches(int(spec.n_traj), spec.batch_size)
    logger.info("ensemble of %d trajectories in %d batches on %d worker(s)",
                spec.n_traj, len(batches), workers)
    state = _prepare(spec)
    if workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(spec,)) as pool:
            results = list(pool.map(_run_batch, batches))
    else:
        results = []
        for bounds in batches:
            results.append(_run_batch(bounds, state))
            logger.debug("batch %s done", bounds)

    n = int(spec.n_traj)
    mse, stderr, mean_error, mean_stderr = {}, {}, {}, {}
    for name in spec.estimators:
        errors = np.concatenate([batch[name] for batch in results]) - p.b_true
        squared = errors ** 2
        mse[name] = squared.mean(axis=0)
        stderr[name] = squared.std(axis=0, ddof=1) / math.sqrt(n)
        mean_error[name] = errors.mean(axis=0)
        mean_stderr[name] = errors.std(axis=0, ddof=1) / math.sqrt(n)
    predicted = estimators.riccati_integrate(p, spec.times).v22
    filter_bias = np.zeros(len(spec.checkpoints))
    if state["plan"] is not None and not p.has_infinite_prior and p.prior_b_variance > 0:
        filter_bias = -p.b_true * state["plan"].v22[spec.checkpoints] / p.prior_b_variance
    logger.info("ensemble finished")
    return EnsembleStats(times=spec.times, n_traj=n, master_seed=spec.master_seed,
                         b_true=p.b_true, mse=mse, stderr=stderr, mean_error=mean_error,
                         mean_stderr=mean_stderr, predicted_v22=predicted,
                         filter_bias=filter_bias)


@dataclass(frozen=True, eq=False)
class ScalingResult:
    j_values: np.ndarray
    t_check: float
    rms: dict
    shotnoise: np.ndarray
    slopes: dict

    header = ["j_total", "estimator", "rms_error", "shotnoise"]

    def rows(self):
        for name, values in self.rms.items():
            for j, value, reference in zip(self.j_values, values, self.shotnoise):
                yield [j, name, value, reference]


def log_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def scaling_study(base, j_values, t_check=None, workers=1):
    """Slope of log RMS error against log J for each estimator of ``base``.

    Every J reuses the base spec's seeds, step size and trajectory count and
    reads the error at the single time ``t_check``.
    """
    j_values = np.asarray(sorted(float(j) for j in j_values))
    if len(j_values) < 4 or j_values[-1] / j_values[0] < 100.0:
        raise ParameterError([("j_values", "scaling needs >= 4 values of J spanning >= 2 "
                                           "decades")])
    t_check = base.grid.t_total if t_check is None else float(t_check)
    if t_check <= 10.0 / (j_values[0] * base.params.meas_strength):
        raise ParameterError([("t_check", "t_check must be well beyond 1/(J M) for every J")])
    rms = {name: [] for name in base.estimators}
    shotnoise = []
    for j in j_values:
        p = base.params.with_(j_total=j, t_total=t_check)
        grid = TimeGrid.auto(p, dt=base.grid.dt)
        spec = EnsembleSpec(params=p, grid=grid, n_traj=base.n_traj,
                            master_seed=base.master_seed, estimators=base.estimators,
                            checkpoints=[grid.n_steps], regressor=base.regressor,
                            batch_size=base.batch_size)
        stats = run_ensemble(spec, workers=workers)
        for name in base.estimators:
            rms[name].append(float(stats.rms(name)[-1]))
        shotnoise.append(estimators.shotnoise_limit(p, t_check))
        logger.info("scaling point J=%g done", j)
    rms = {name: np.asarray(values) for name, values in rms.items()}
    shotnoise = np.asarray(shotnoise)
    slopes = {name: log_slope(j_values, values) for name, values in rms.items()}
    slopes["shotnoise"] = log_slope(j_values, shotnoise)
    return ScalingResult(j_values=j_values, t_check=t_check, rms=rms, shotnoise=shotnoise,
                         slopes=slopes)
