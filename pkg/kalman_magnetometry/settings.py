# -- encoding: UTF-8 --
"""Environment-level defaults, overridable per run from the command line."""

from decouple import config

WORKERS = config('QKF_WORKERS', default=1, cast=int)
OUT_DIR = config('QKF_OUT_DIR', default='runs')
LOG_LEVEL = config('QKF_LOG_LEVEL', default='WARNING')
SEED = config('QKF_SEED', default=20031, cast=int)
