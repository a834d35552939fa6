# coding: utf-8
"""Run documents: parsing, presets and command-line overrides.

A document is either a JSON object or ``key = value`` lines. Physical
quantities are converted to internal units here and nowhere else.
"""
import dataclasses
import json
import math
import pkgutil
import re
from dataclasses import dataclass

from . import settings
from .core import INFINITE, PhysicalParams, gamma_from_cycles, gamma_to_cycles, validate_params
from .exceptions import ConfigError

PRESET_PREFIX = "preset:"
PRESETS = ("fig1", "fig2", "oracle_j10", "oracle_j_half", "scaling")

GAMMA_CONVENTIONS = ("angular", "cycles")

PARAM_KEYS = ("j_total", "gamma", "b_true", "meas_strength", "efficiency",
              "prior_b_variance", "t_total")

OPTION_KEYS = ("gamma_convention", "dt", "n_traj", "master_seed", "estimators", "regressor",
               "per_decade", "t_min", "batch_size", "workers", "out_dir", "cutoff", "zero_noise",
               "trace", "j_values", "t_check", "dephasing_j")

#: how a run executes, not what it computes; left out of the CSV headers
RUN_OPTION_KEYS = ("workers", "out_dir", "batch_size")

SEED_LIMIT = 2 ** 64

_INFINITY_WORDS = ("inf", "infinite", "infinity")
_TRAILING_COMMENT = re.compile(r"\s+#.*$")


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs: the experiment and how to run it."""
    params: PhysicalParams
    gamma_convention: str = "angular"
    dt: float = None
    n_traj: int = 10000
    master_seed: int = settings.SEED
    estimators: tuple = ("qkf", "regression")
    regressor: str = "time"
    per_decade: int = 30
    t_min: float = None
    batch_size: int = 256
    workers: int = settings.WORKERS
    out_dir: str = settings.OUT_DIR
    cutoff: float = None
    zero_noise: bool = False
    trace: bool = False
    j_values: tuple = (1e4, 1e5, 1e6, 4e6)
    t_check: float = None
    dephasing_j: tuple = (0.5, 1.0, 2.0, 5.0)

    def as_dict(self, run_options=True):
        """Resolved configuration, gamma quoted in the document's convention."""
        data = dataclasses.asdict(self)
        if not run_options:
            for key in RUN_OPTION_KEYS:
                del data[key]
        data.update(self.params.as_dict())
        del data["params"]
        if self.gamma_convention == "cycles":
            data["gamma"] = gamma_to_cycles(self.params.gamma)
        for key in ("estimators", "j_values", "dephasing_j"):
            data[key] = list(data[key])
        return data

    def with_overrides(self, **overrides):
        changes = {key: value for key, value in overrides.items() if value is not None}
        if not changes:
            return self
        if "n_traj" in changes and int(changes["n_traj"]) < 2:
            raise ConfigError("an ensemble needs at least 2 trajectories", field="n_traj")
        if "workers" in changes and int(changes["workers"]) < 1:
            raise ConfigError("at least one worker is required", field="workers")
        if "master_seed" in changes and not 0 <= int(changes["master_seed"]) < SEED_LIMIT:
            raise ConfigError("master seed must be in [0, 2**64)", field="master_seed")
        return dataclasses.replace(self, **changes)


def _parse_key_values(text):
    """Return ``{key: (value, line)}`` for a ``key = value`` document."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        line = _TRAILING_COMMENT.sub("", line)
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError("expected 'key = value'", line=lineno)
        if key in entries:
            raise ConfigError("duplicate key {!r}".format(key), line=lineno, field=key)
        try:
            value = json.loads(value)
        except ValueError:
            pass
        entries[key] = (value, lineno)
    return entries


def _parse_json(text):
    try:
        document = json.loads(text)
    except ValueError as e:
        raise ConfigError("invalid JSON: {}".format(e.msg), line=getattr(e, "lineno", None))
    if not isinstance(document, dict):
        raise ConfigError("a JSON run document must be an object")
    return {key: (value, None) for key, value in document.items()}


def _number(entries, key, cast=float):
    value, line = entries[key]
    if isinstance(value, bool):
        raise ConfigError("expected a number", line=line, field=key)
    try:
        number = cast(value)
    except (TypeError, ValueError):
        raise ConfigError("expected a number, got {!r}".format(value), line=line, field=key)
    if cast is int and number != value:
        raise ConfigError("expected an integer, got {!r}".format(value), line=line, field=key)
    return number


def _prior(entries):
    value, line = entries["prior_b_variance"]
    if isinstance(value, str) and value.strip().lower() in _INFINITY_WORDS:
        return INFINITE
    number = _number(entries, "prior_b_variance")
    if math.isinf(number) and number > 0:
        return INFINITE
    return number


def parse_config(text, gamma_convention=None):
    """Parse a run document into a validated :class:`RunConfig`.

    ``gamma_convention`` overrides the document's own ``gamma_convention``.
    """
    if text.lstrip().startswith("{"):
        entries = _parse_json(text)
    else:
        entries = _parse_key_values(text)

    for key, (_, line) in entries.items():
        if key not in PARAM_KEYS and key not in OPTION_KEYS:
            raise ConfigError("unknown key {!r}".format(key), line=line, field=key)
    for key in PARAM_KEYS:
        if key not in entries:
            raise ConfigError("missing required key {!r}".format(key), field=key)

    convention = gamma_convention or entries.get("gamma_convention", ("angular", None))[0]
    if convention not in GAMMA_CONVENTIONS:
        raise ConfigError("gamma_convention must be one of {}".format(GAMMA_CONVENTIONS),
                          line=entries.get("gamma_convention", (None, None))[1],
                          field="gamma_convention")

    gamma = _number(entries, "gamma")
    if convention == "cycles":
        gamma = gamma_from_cycles(gamma)
    params = validate_params(PhysicalParams(
        j_total=_number(entries, "j_total"),
        gamma=gamma,
        b_true=_number(entries, "b_true"),
        meas_strength=_number(entries, "meas_strength"),
        efficiency=_number(entries, "efficiency"),
        prior_b_variance=_prior(entries),
        t_total=_number(entries, "t_total"),
    ))

    options = {"gamma_convention": convention}
    casts = {"n_traj": int, "per_decade": int, "batch_size": int, "workers": int,
             "master_seed": int, "dt": float, "t_min": float, "cutoff": float,
             "t_check": float}
    for key, cast in casts.items():
        if key in entries and entries[key][0] is not None:
            options[key] = _number(entries, key, cast)
    for key in ("estimators", "j_values", "dephasing_j"):
        if key in entries:
            value, line = entries[key]
            if not isinstance(value, list):
                raise ConfigError("expected a list", line=line, field=key)
            options[key] = tuple(value)
    for key in ("regressor", "out_dir"):
        if key in entries:
            options[key] = str(entries[key][0])
    for key in ("zero_noise", "trace"):
        if key in entries:
            value, line = entries[key]
            if not isinstance(value, bool):
                raise ConfigError("expected true or false", line=line, field=key)
            options[key] = value

    if options.get("n_traj", 2) < 2:
        raise ConfigError("an ensemble needs at least 2 trajectories",
                          line=entries["n_traj"][1], field="n_traj")
    for key in ("dt", "t_min", "cutoff", "t_check"):
        if key in options and not options[key] > 0:
            raise ConfigError("must be positive", line=entries[key][1], field=key)
    if not 0 <= options.get("master_seed", 0) < SEED_LIMIT:
        raise ConfigError("master seed must be in [0, 2**64)", line=entries["master_seed"][1],
                          field="master_seed")
    return RunConfig(params=params, **options)


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError("unknown preset {!r}; choose from {}".format(name, PRESETS))
    return pkgutil.get_data(__name__.rpartition(".")[0], "presets/{}.cfg".format(name)).decode(
        "utf-8")


def load_config(source, gamma_convention=None):
    """Load ``preset:<name>`` or a document path."""
    if source.startswith(PRESET_PREFIX):
        text = preset_text(source[len(PRESET_PREFIX):])
    else:
        try:
            with open(source) as handle:
                text = handle.read()
        except (IOError, OSError) as e:
            raise ConfigError("cannot read {}: {}".format(source, e.strerror))
    return parse_config(text, gamma_convention=gamma_convention)
