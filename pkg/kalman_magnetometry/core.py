# coding: utf-8
"""Physical parameters, time grids and random-stream contracts.

Internal units are seconds and gauss; the gyromagnetic ratio is stored as an
angular quantity (rad s^-1 G^-1). Every other module receives a validated
:class:`PhysicalParams` and never re-checks it.
"""
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GridError, ParameterError

INFINITE = math.inf

#: kHz/mG -> Hz/G
_CYCLES_SCALE = 1e3 / 1e-3

SQUEEZING_PREFIX_RATIO = 1.02
#: squeezing-rate * dt above which a uniform grid cannot resolve the collapse
UNRESOLVED_COLLAPSE = 0.05


def gamma_from_cycles(value_khz_per_mg):
    """Convert a gyromagnetic ratio quoted in kHz/mG to rad s^-1 G^-1."""
    if not value_khz_per_mg > 0:
        raise ParameterError([("gamma", "gyromagnetic ratio must be positive")])
    return 2.0 * math.pi * value_khz_per_mg * _CYCLES_SCALE


def gamma_to_cycles(gamma):
    if not gamma > 0:
        raise ParameterError([("gamma", "gyromagnetic ratio must be positive")])
    return gamma / (2.0 * math.pi * _CYCLES_SCALE)


def is_infinite(value):
    return math.isinf(value) and value > 0


@dataclass(frozen=True)
class PhysicalParams:
    """The experiment definition.

    :param j_total: collective spin J
    :param gamma: angular gyromagnetic ratio, rad s^-1 G^-1
    :param b_true: applied field, G
    :param meas_strength: measurement strength M, s^-1
    :param efficiency: detector efficiency eta in (0, 1]
    :param prior_b_variance: prior field variance, G^2, or ``INFINITE``
    :param t_total: record duration, s
    """
    j_total: float
    gamma: float
    b_true: float
    meas_strength: float
    efficiency: float
    prior_b_variance: float
    t_total: float

    @property
    def larmor_frequency(self):
        return larmor_frequency(self)

    @property
    def t2_bound(self):
        return t2_bound(self)

    @property
    def snr(self):
        return snr(self)

    @property
    def has_infinite_prior(self):
        return is_infinite(self.prior_b_variance)

    @property
    def squeezing_rate(self):
        """2 eta M J, the inverse timescale of the conditional-variance collapse."""
        return 2.0 * self.efficiency * self.meas_strength * self.j_total

    @property
    def record_precision(self):
        """D^-2 = 4 M eta."""
        return 4.0 * self.meas_strength * self.efficiency

    @property
    def record_noise_scale(self):
        """D = 1 / (2 sqrt(M eta))."""
        return 0.5 / math.sqrt(self.meas_strength * self.efficiency)

    def with_(self, **changes):
        return validate_params(dataclasses.replace(self, **changes))

    def as_dict(self):
        data = dataclasses.asdict(self)
        if self.has_infinite_prior:
            data["prior_b_variance"] = "inf"
        return data


def validate_params(p):
    """Return ``p`` unchanged when every invariant holds.

    Raises :class:`ParameterError` listing each violated field.
    """
    violations = []

    def finite(name):
        value = getattr(p, name)
        try:
            ok = math.isfinite(value)
        except TypeError:
            ok = False
        if not ok:
            violations.append((name, "must be a finite number"))
        return ok

    if finite("j_total") and not p.j_total > 0:
        violations.append(("j_total", "collective spin must be positive"))
    if finite("gamma") and not p.gamma > 0:
        violations.append(("gamma", "gyromagnetic ratio must be positive"))
    finite("b_true")
    if finite("meas_strength") and not p.meas_strength > 0:
        violations.append(("meas_strength", "measurement strength must be positive"))
    if finite("efficiency") and not 0 < p.efficiency <= 1:
        violations.append(("efficiency", "efficiency must be in (0,1]"))
    prior = p.prior_b_variance
    if not isinstance(prior, (int, float)) or math.isnan(prior):
        violations.append(("prior_b_variance", "must be a number or INFINITE"))
    elif prior < 0:
        violations.append(("prior_b_variance", "prior variance must be non-negative"))
    if finite("t_total") and not p.t_total > 0:
        violations.append(("t_total", "total time must be positive"))

    if violations:
        raise ParameterError(violations)
    return p


def larmor_frequency(p):
    return p.gamma * p.b_true


def t2_bound(p):
    return 2.0 / p.meas_strength


def snr(p):
    return p.j_total * math.sqrt(p.meas_strength)


class TimeGrid(object):
    """Strictly increasing time points from 0 to ``t_total``.

    A uniform grid has steps of at most ``dt``. A log-dense grid starts with a
    geometric prefix ``t_first * ratio**k`` that resolves the squeezing
    collapse and continues uniformly once the geometric step would exceed
    ``dt``.
    """

    def __init__(self, times, dt, prefix=None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise GridError("a grid needs at least one step")
        if times[0] != 0.0:
            raise GridError("grids start at t = 0")
        if not np.all(np.diff(times) > 0):
            raise GridError("grid points must be strictly increasing")
        if not dt > 0:
            raise GridError("dt must be positive")
        times.flags.writeable = False
        self.times = times
        self.dt = float(dt)
        self.prefix = prefix
        self.steps = np.diff(times)
        self.steps.flags.writeable = False

    t_start = 0.0

    @property
    def n_steps(self):
        return len(self.steps)

    @property
    def t_total(self):
        return float(self.times[-1])

    @property
    def is_uniform(self):
        return self.prefix is None and bool(np.allclose(self.steps, self.steps[0], rtol=1e-9))

    def index_of(self, t):
        """Index of the grid point closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        return (isinstance(other, TimeGrid) and self.prefix == other.prefix
                and np.array_equal(self.times, other.times))

    def __hash__(self):
        return hash((self.n_steps, self.t_total, self.prefix))

    def __repr__(self):
        return "TimeGrid(n_steps={}, dt={!r}, t_total={!r}, prefix={!r})".format(
            self.n_steps, self.dt, self.t_total, self.prefix)

    @classmethod
    def uniform(cls, t_total, dt):
        if not t_total > 0:
            raise GridError("t_total must be positive")
        if not dt > 0:
            raise GridError("dt must be positive")
        n = max(1, int(math.ceil(t_total / dt - 1e-9)))
        return cls(np.linspace(0.0, t_total, n + 1), dt)

    @classmethod
    def log_dense(cls, t_total, dt, t_first, ratio=SQUEEZING_PREFIX_RATIO):
        if not t_total > 0:
            raise GridError("t_total must be positive")
        if not dt > 0:
            raise GridError("dt must be positive")
        if not 0 < t_first < t_total:
            raise GridError("t_first must lie inside (0, t_total)")
        if not ratio > 1:
            raise GridError("prefix ratio must exceed 1")
        # last prefix point is the first whose geometric step reaches dt
        n = int(math.ceil(math.log(dt / ((ratio - 1.0) * t_first)) / math.log(ratio)))
        prefix = t_first * ratio ** np.arange(max(n, 0) + 1)
        prefix = prefix[prefix < t_total]
        t_join = prefix[-1]
        n_tail = max(1, int(math.ceil((t_total - t_join) / dt - 1e-9)))
        tail = np.linspace(t_join, t_total, n_tail + 1)[1:]
        times = np.concatenate(([0.0], prefix, tail))
        return cls(times, dt, prefix=(float(t_first), float(ratio)))

    @classmethod
    def auto(cls, p, dt=None):
        """Grid resolving ``M`` and, when needed, the squeezing collapse."""
        if dt is None:
            dt = 1e-3 / p.meas_strength
        dt = min(dt, p.t_total)
        rate = p.squeezing_rate
        if rate * dt > UNRESOLVED_COLLAPSE:
            return cls.log_dense(p.t_total, dt, t_first=1e-3 / rate)
        return cls.uniform(p.t_total, dt)


@dataclass(frozen=True)
class SeedSpec:
    """A (master seed, stream index) pair naming one independent noise stream.

    The pair is used directly as the 128-bit key of a Philox counter-based
    generator, so distinct pairs never share a stream.
    """
    master_seed: int
    stream_index: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64:
            raise ParameterError([("master_seed", "must be a 64-bit unsigned integer")])
        if not 0 <= self.stream_index < 2 ** 63:
            raise ParameterError([("stream_index", "must be in [0, 2**63)")])

    @property
    def key(self):
        return (int(self.stream_index) << 64) | int(self.master_seed)

    def generator(self):
        return np.random.Generator(np.random.Philox(key=self.key))
