# coding: utf-8
"""``qkf-magnetometry``: simulate | ensemble | scaling | oracle-check.

Every subcommand writes its CSV tables and a ``summary.json`` into the output
directory and exits 0 only when all of its checks pass (1 otherwise, 2 for a
bad configuration).
"""
import argparse
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import __version__, dynamics, estimators, montecarlo, report, settings, sme_oracle
from .config import GAMMA_CONVENTIONS, PRESET_PREFIX, load_config
from .core import INFINITE, TimeGrid
from .exceptions import ConfigError, Error, ModelValidityWarning, ParameterError

logger = logging.getLogger(__name__)

#: times at which the ensemble MSE is compared with the Riccati prediction
CHECK_TIMES = (1e-5, 1e-4, 1e-3)
MSE_RATIO_BOUNDS = (0.9, 1.1)
#: largest mean filter error, in standard errors, after the prior shrinkage
BIAS_SCORE_LIMIT = 3.0
#: order-of-magnitude window for the asymptotic threshold at 1 ms, G
SENSITIVITY_WINDOW = (3e-12, 3e-11)
SENSITIVITY_TIME = 1e-3
SLOPE_TOLERANCE = 0.05
DEPHASING_TOLERANCE = 0.01
#: below this J the Gaussian-model comparison is reported but not enforced
GAUSSIAN_MODEL_MIN_J = 1.0
#: relative spin-variance deviation, reported only
VARIANCE_TOLERANCE = 0.1

DEFAULT_PRESETS = {
    "simulate": "fig1",
    "ensemble": "fig2",
    "scaling": "scaling",
    "oracle-check": "oracle_j10",
}


def cmd_simulate(cfg):
    """One trajectory: the record and its low-pass filtered photocurrent."""
    p = cfg.params
    grid = TimeGrid.auto(p, cfg.dt)
    record = dynamics.simulate_trajectory(p, grid, montecarlo.substream(cfg.master_seed, 0),
                                          zero_noise=cfg.zero_noise)
    filtered = dynamics.lowpass_filter(record.y, cfg.cutoff, grid.steps, p=p)
    report.write_table(cfg.out_dir, "trajectory", record, cfg)
    report.write_table(cfg.out_dir, "photocurrent_filtered", None, cfg,
                       rows=zip(grid.times[:-1], record.y, filtered),
                       header=["t", "y", "y_filtered"])

    reconstructed = dynamics.reconstruct_noise(record, p)
    scale = max(1.0, float(np.max(np.abs(record.noise), initial=0.0)))
    return [
        report.make_check("noise_reconstruction",
                          np.allclose(reconstructed, record.noise, rtol=1e-6, atol=1e-9 * scale),
                          float(np.max(np.abs(reconstructed - record.noise), initial=0.0)),
                          1e-9 * scale),
        report.make_check("variance_non_increasing", bool(np.all(np.diff(record.var_jz) <= 0)),
                          float(np.max(np.diff(record.var_jz))), 0.0),
    ]


def _ensemble_checkpoints(cfg, grid):
    checkpoints = montecarlo.default_checkpoints(grid, cfg.per_decade, cfg.t_min)
    extra = [grid.index_of(t) for t in CHECK_TIMES if t <= grid.t_total]
    return np.unique(np.concatenate((checkpoints, np.asarray(extra, dtype=int))))


def _threshold_curves(p, times):
    infinite = p.with_(prior_b_variance=INFINITE)
    return [
        estimators.threshold_curve(p, times, "riccati_numeric"),
        estimators.threshold_curve(infinite, times, "riccati_analytic"),
        estimators.threshold_curve(p, times, "asymptotic"),
        estimators.threshold_curve(p, times, "shotnoise"),
    ]


def cmd_ensemble(cfg):
    """Ensemble errors of both estimators against the threshold curves."""
    p = cfg.params
    grid = TimeGrid.auto(p, cfg.dt)
    spec = montecarlo.EnsembleSpec(params=p, grid=grid, n_traj=cfg.n_traj,
                                   master_seed=cfg.master_seed, estimators=cfg.estimators,
                                   checkpoints=_ensemble_checkpoints(cfg, grid),
                                   regressor=cfg.regressor, batch_size=cfg.batch_size)
    stats = montecarlo.run_ensemble(spec, workers=cfg.workers)
    report.write_table(cfg.out_dir, "ensemble", stats, cfg)

    curves = _threshold_curves(p, spec.times)
    report.write_table(cfg.out_dir, "thresholds", curves[0], cfg,
                       rows=(row for curve in curves for row in curve.rows()))
    if cfg.trace:
        record = dynamics.simulate_trajectory(p, grid, montecarlo.substream(cfg.master_seed, 0))
        report.write_table(cfg.out_dir, "filter_trace", estimators.filter_trace(record, p), cfg)

    checks = []
    if "qkf" in stats.estimators:
        ratios = stats.mse_ratio("qkf")
        scores = stats.bias_score("qkf")
        for t in CHECK_TIMES:
            if t > grid.t_total:
                continue
            k = int(np.argmin(np.abs(stats.times - t)))
            low, high = MSE_RATIO_BOUNDS
            checks.append(report.make_check("qkf_mse_over_riccati_t={:g}".format(t),
                                            low <= ratios[k] <= high, ratios[k],
                                            list(MSE_RATIO_BOUNDS)))
            checks.append(report.make_check("qkf_unbiased_t={:g}".format(t),
                                            abs(scores[k]) <= BIAS_SCORE_LIMIT, scores[k],
                                            BIAS_SCORE_LIMIT))
    if grid.t_total >= SENSITIVITY_TIME:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ModelValidityWarning)
            value = estimators.detection_threshold_asymptotic(p, SENSITIVITY_TIME)
        low, high = SENSITIVITY_WINDOW
        checks.append(report.make_check("asymptotic_threshold_at_1ms", low <= value <= high,
                                        value, list(SENSITIVITY_WINDOW)))
    numeric, analytic = curves[0].delta_b[0], curves[1].delta_b[0]
    checks.append(report.make_check("infinite_prior_above_finite_prior",
                                    analytic >= numeric * (1 - 1e-6), analytic, numeric))
    return checks


def cmd_scaling(cfg):
    """Error at ``t_check`` against J for each estimator, with the shotnoise reference."""
    t_check = cfg.t_check or cfg.params.t_total
    p = cfg.params.with_(t_total=t_check)
    grid = TimeGrid.auto(p, cfg.dt)
    base = montecarlo.EnsembleSpec(params=p, grid=grid, n_traj=cfg.n_traj,
                                   master_seed=cfg.master_seed, estimators=cfg.estimators,
                                   checkpoints=[grid.n_steps], regressor=cfg.regressor,
                                   batch_size=cfg.batch_size)
    result = montecarlo.scaling_study(base, cfg.j_values, t_check=t_check, workers=cfg.workers)
    report.write_table(cfg.out_dir, "scaling", result, cfg)

    checks = []
    for name in cfg.estimators:
        slope = result.slopes[name]
        checks.append(report.make_check("{}_slope".format(name),
                                        abs(slope + 1.0) <= SLOPE_TOLERANCE, slope,
                                        [-1.0 - SLOPE_TOLERANCE, -1.0 + SLOPE_TOLERANCE]))
    slope = result.slopes["shotnoise"]
    checks.append(report.make_check("shotnoise_slope", math.isclose(slope, -0.5, abs_tol=1e-9),
                                    slope, -0.5))
    return checks


def cmd_oracle_check(cfg):
    """Dense master equation against the Gaussian model, plus the dephasing law."""
    p = cfg.params
    grid = sme_oracle.oracle_grid(p)
    comparison = sme_oracle.compare_to_gaussian(p, grid, montecarlo.substream(cfg.master_seed, 0))
    report.write_table(cfg.out_dir, "oracle_deviation", comparison, cfg)

    checks = [report.make_check("gaussian_model_mean_deviation", comparison.passed,
                                comparison.max_mean_deviation, comparison.mean_threshold,
                                informative=p.j_total < GAUSSIAN_MODEL_MIN_J),
              report.make_check("gaussian_model_variance_deviation",
                                comparison.relative_var_deviation <= VARIANCE_TOLERANCE,
                                comparison.relative_var_deviation, VARIANCE_TOLERANCE,
                                informative=True)]
    for j in cfg.dephasing_j:
        error = sme_oracle.dephasing_check(p.with_(j_total=float(j)))
        checks.append(report.make_check("dephasing_j={:g}".format(float(j)),
                                        error <= DEPHASING_TOLERANCE, error, DEPHASING_TOLERANCE))
    return checks


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "scaling": cmd_scaling,
    "oracle-check": cmd_oracle_check,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run document path or {}<name>".format(PRESET_PREFIX))
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--n-traj", type=int, help="number of trajectories")
    common.add_argument("--out", help="output directory")
    common.add_argument("--gamma-convention", choices=GAMMA_CONVENTIONS,
                        help="unit of gamma in the run document")
    common.add_argument("--workers", type=int, help="worker processes for ensembles")
    common.add_argument("--log-level", default=None, help="logging level")

    parser = argparse.ArgumentParser(
        prog="qkf-magnetometry",
        description="Kalman-filter magnetometry with a continuously measured spin ensemble.")
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True
    simulate = commands.add_parser("simulate", parents=[common],
                                   help="one trajectory and its photocurrent")
    simulate.add_argument("--zero-noise", action="store_true", default=None,
                          help="force every Wiener increment to zero")
    ensemble = commands.add_parser("ensemble", parents=[common],
                                   help="estimator errors over an ensemble")
    ensemble.add_argument("--trace", action="store_true", default=None,
                          help="also write the filter trace of trajectory 0")
    commands.add_parser("scaling", parents=[common], help="error scaling with J")
    commands.add_parser("oracle-check", parents=[common],
                        help="master equation against the Gaussian model")
    return parser


def _configure_logging(level):
    level = (level or settings.LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    source = args.config or PRESET_PREFIX + DEFAULT_PRESETS[args.command]
    try:
        cfg = load_config(source, gamma_convention=args.gamma_convention).with_overrides(
            master_seed=args.seed, n_traj=args.n_traj, out_dir=args.out, workers=args.workers,
            zero_noise=getattr(args, "zero_noise", None), trace=getattr(args, "trace", None))
    except (ConfigError, ParameterError) as e:
        print(json.dumps({"error": "configuration", "message": str(e)}), file=sys.stderr)
        return 2
    if args.out is None and cfg.out_dir == settings.OUT_DIR:
        cfg = cfg.with_overrides(out_dir=os.path.join(settings.OUT_DIR, args.command))

    logger.info("running %s from %s into %s", args.command, source, cfg.out_dir)
    try:
        checks = COMMANDS[args.command](cfg)
    except Error as e:
        logger.error("%s failed: %s", args.command, e)
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    report.write_summary(cfg.out_dir, args.command, cfg, checks, __version__)
    failed = report.failed_checks(checks)
    print(json.dumps({"command": args.command, "out_dir": cfg.out_dir, "checks": len(checks),
                      "failed": failed}))
    return 0 if not failed else 1
