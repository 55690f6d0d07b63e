"""Univariate emission densities and the per-state emission model.

Three families are available: ``gamma``, ``zero_inflated_gamma`` and
``normal``.  Every density object is an immutable dataclass that evaluates
log-densities, cumulative probabilities and draws samples, and converts
itself to and from an unconstrained working vector for the optimizer.

The zero-inflated gamma is a mixture of a point mass at exactly 0 and a
gamma density on (0, inf).  Its "density" is taken with respect to the sum
of a unit point measure at 0 and Lebesgue measure on (0, inf), so
``log_pdf(0) = log(zero_mass)`` and ``log_pdf(y) = log(1 - zero_mass) +
gamma.log_pdf(y)`` for ``y > 0``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np
from scipy import special

from .errors import DomainError, InvalidParameterError

#: Zero masses are kept inside this distance from 0 and 1 on the logit scale.
ZERO_MASS_FLOOR = 1e-10


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise InvalidParameterError(f"{name} must be a positive finite number, got {value!r}")


def _as_array(y):
    y = np.asarray(y, dtype=float)
    if np.isinf(y).any():
        raise DomainError("observations must be finite")
    return y


def _logit(p):
    p = min(max(p, ZERO_MASS_FLOOR), 1.0 - ZERO_MASS_FLOOR)
    return math.log(p) - math.log1p(-p)


def _expit(x):
    return float(special.expit(x))


@dataclass(frozen=True)
class Gamma:
    """Gamma density with shape ``shape`` and rate ``rate``."""

    shape: float
    rate: float

    family: ClassVar[str] = "gamma"
    n_working: ClassVar[int] = 2
    nonnegative: ClassVar[bool] = True

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def variance(self):
        return self.shape / self.rate**2

    @property
    def sd(self):
        return math.sqrt(self.variance)

    def log_pdf(self, y):
        y = _as_array(y)
        if (y < 0).any():
            raise DomainError("gamma density is only defined for y >= 0")
        with np.errstate(divide="ignore"):
            out = (
                self.shape * math.log(self.rate)
                + special.xlogy(self.shape - 1.0, y)
                - self.rate * y
                - special.gammaln(self.shape)
            )
        return out if out.ndim else float(out)

    def cdf(self, y):
        y = np.maximum(_as_array(y), 0.0)
        out = special.gammainc(self.shape, self.rate * y)
        return out if out.ndim else float(out)

    def ppf(self, q):
        out = special.gammaincinv(self.shape, np.asarray(q, dtype=float)) / self.rate
        return out if out.ndim else float(out)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)

    def to_working(self):
        return np.array([math.log(self.shape), math.log(self.rate)])

    @classmethod
    def from_working(cls, w):
        return cls(shape=math.exp(w[0]), rate=math.exp(w[1]))

    @classmethod
    def from_mean_sd(cls, mean, sd):
        return from_mean_sd(mean, sd)

    def to_dict(self):
        return {"shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class ZeroInflatedGamma:
    """Point mass ``zero_mass`` at 0 mixed with a gamma density on (0, inf)."""

    zero_mass: float
    gamma: Gamma

    family: ClassVar[str] = "zero_inflated_gamma"
    n_working: ClassVar[int] = 3
    nonnegative: ClassVar[bool] = True

    def __post_init__(self):
        if not (np.isfinite(self.zero_mass) and 0.0 <= self.zero_mass <= 1.0):
            raise InvalidParameterError(f"zero_mass must lie in [0, 1], got {self.zero_mass!r}")
        if not isinstance(self.gamma, Gamma):
            raise InvalidParameterError("gamma component must be a Gamma instance")

    @property
    def mean(self):
        return (1.0 - self.zero_mass) * self.gamma.mean

    @property
    def variance(self):
        z = self.zero_mass
        m, v = self.gamma.mean, self.gamma.variance
        return (1.0 - z) * (v + m * m) - ((1.0 - z) * m) ** 2

    @property
    def sd(self):
        return math.sqrt(self.variance)

    def log_pdf(self, y):
        y = _as_array(y)
        if (y < 0).any():
            raise DomainError("zero-inflated gamma density is only defined for y >= 0")
        with np.errstate(divide="ignore"):
            log_z = math.log(self.zero_mass) if self.zero_mass > 0 else -np.inf
            log_1mz = math.log1p(-self.zero_mass) if self.zero_mass < 1 else -np.inf
            positive = np.where(y > 0, y, 1.0)
            out = np.where(y == 0, log_z, log_1mz + self.gamma.log_pdf(positive))
        # NaN never compares equal to 0; keep it NaN
        out = np.where(np.isnan(y), np.nan, out)
        return out if out.ndim else float(out)

    def cdf(self, y):
        y = _as_array(y)
        out = np.where(y < 0, 0.0, self.zero_mass + (1.0 - self.zero_mass) * self.gamma.cdf(y))
        return out if out.ndim else float(out)

    def sample(self, rng, size=None):
        draws = self.gamma.sample(rng, size)
        zero = rng.random(size) < self.zero_mass
        return np.where(zero, 0.0, draws) if size is not None else (0.0 if zero else float(draws))

    def to_working(self):
        return np.append(self.gamma.to_working(), _logit(self.zero_mass))

    @classmethod
    def from_working(cls, w):
        return cls(zero_mass=_expit(w[2]), gamma=Gamma.from_working(w[:2]))

    def to_dict(self):
        return {"zero_mass": self.zero_mass, **self.gamma.to_dict()}


@dataclass(frozen=True)
class Normal:
    """Gaussian density with mean ``mu`` and standard deviation ``sigma``."""

    mu: float
    sigma: float

    family: ClassVar[str] = "normal"
    n_working: ClassVar[int] = 2
    nonnegative: ClassVar[bool] = False

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise InvalidParameterError(f"mu must be finite, got {self.mu!r}")
        _check_positive("sigma", self.sigma)

    @property
    def mean(self):
        return self.mu

    @property
    def variance(self):
        return self.sigma**2

    @property
    def sd(self):
        return self.sigma

    def log_pdf(self, y):
        y = _as_array(y)
        z = (y - self.mu) / self.sigma
        out = -0.5 * z * z - math.log(self.sigma) - 0.5 * math.log(2.0 * math.pi)
        return out if out.ndim else float(out)

    def cdf(self, y):
        out = special.ndtr((_as_array(y) - self.mu) / self.sigma)
        return out if out.ndim else float(out)

    def sample(self, rng, size=None):
        return rng.normal(self.mu, self.sigma, size=size)

    def to_working(self):
        return np.array([self.mu, math.log(self.sigma)])

    @classmethod
    def from_working(cls, w):
        return cls(mu=float(w[0]), sigma=math.exp(w[1]))

    def to_dict(self):
        return {"mu": self.mu, "sigma": self.sigma}


Density = Union[Gamma, ZeroInflatedGamma, Normal]

FAMILIES = {
    "gamma": Gamma,
    "zero_inflated_gamma": ZeroInflatedGamma,
    "normal": Normal,
}


def family_class(name):
    try:
        return FAMILIES[name]
    except KeyError:
        raise InvalidParameterError(
            f"unknown family {name!r}; expected one of {sorted(FAMILIES)}"
        ) from None


def density_from_dict(family, d):
    """Build a density of the named family from its ``to_dict`` form."""
    if family == "gamma":
        return Gamma(float(d["shape"]), float(d["rate"]))
    if family == "zero_inflated_gamma":
        return ZeroInflatedGamma(float(d["zero_mass"]), Gamma(float(d["shape"]), float(d["rate"])))
    if family == "normal":
        return Normal(float(d["mu"]), float(d["sigma"]))
    return family_class(family)  # raises


def from_mean_sd(mean, sd):
    """Gamma parameters with the given mean and standard deviation.

    >>> from_mean_sd(1.0, 1.0)
    Gamma(shape=1.0, rate=1.0)
    """
    if not (mean > 0 and sd > 0):
        raise DomainError(f"mean and sd must be positive, got mean={mean!r}, sd={sd!r}")
    return Gamma(shape=mean**2 / sd**2, rate=mean / sd**2)


def log_pdf(params, y):
    return params.log_pdf(y)


def sample(params, rng, size=None):
    return params.sample(rng, size)


@dataclass(frozen=True)
class EmissionModel:
    """State-dependent distributions over ``R`` conditionally independent variables.

    ``densities[r][i]`` is the density of variable ``r`` in production state
    ``i``.  All states of one variable share a family.  The joint density of
    an observation vector is the product over variables; a missing (NaN)
    entry contributes a factor of 1.
    """

    names: tuple
    densities: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        dens = tuple(tuple(row) for row in self.densities)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "densities", dens)
        if not names:
            raise InvalidParameterError("emission model needs at least one variable")
        if len(set(names)) != len(names):
            raise InvalidParameterError(f"duplicate variable names: {names}")
        if len(dens) != len(names):
            raise InvalidParameterError("one row of densities is required per variable")
        n = len(dens[0])
        if n < 1:
            raise InvalidParameterError("emission model needs at least one state")
        for name, row in zip(names, dens):
            if len(row) != n:
                raise InvalidParameterError(f"variable {name!r} does not cover all {n} states")
            if len({type(d) for d in row}) != 1:
                raise InvalidParameterError(f"variable {name!r} mixes density families")

    @property
    def n_states(self):
        return len(self.densities[0])

    @property
    def n_variables(self):
        return len(self.names)

    @property
    def families(self):
        return tuple(row[0].family for row in self.densities)

    @property
    def n_working(self):
        return self.n_states * sum(row[0].n_working for row in self.densities)

    def _matrix(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None] if self.n_variables == 1 else y[None, :]
        if y.ndim != 2 or y.shape[1] != self.n_variables:
            raise InvalidParameterError(
                f"observations must have {self.n_variables} columns, got shape {y.shape}"
            )
        return y

    def log_density(self, y):
        """(T, N) matrix of joint log-densities.

        ``y`` is a (T, R) array or the result of :func:`prepare_observations`
        (which saves the repeated log transform inside an optimizer loop).
        """
        obs = y if isinstance(y, PreparedObservations) else prepare_observations(self._matrix(y))
        if obs.values.shape[1] != self.n_variables:
            raise InvalidParameterError(
                f"observations have {obs.values.shape[1]} columns, model has {self.n_variables}"
            )
        out = np.zeros((obs.values.shape[0], self.n_states))
        for r, row in enumerate(self.densities):
            out += _family_log_density(row, obs, r)
        return out

    def cdf(self, y, states):
        """(T, R) cumulative probabilities of ``y`` under the given states."""
        y = self._matrix(y)
        states = np.asarray(states, dtype=int)
        out = np.full(y.shape, np.nan)
        for r, row in enumerate(self.densities):
            for i, dens in enumerate(row):
                sel = (states == i) & ~np.isnan(y[:, r])
                if sel.any():
                    out[sel, r] = dens.cdf(y[sel, r])
        return out

    def sample(self, states, rng):
        """(T, R) matrix of draws, row ``t`` from state ``states[t]``."""
        states = np.asarray(states, dtype=int)
        out = np.empty((states.size, self.n_variables))
        for r, row in enumerate(self.densities):
            for i, dens in enumerate(row):
                sel = states == i
                if sel.any():
                    out[sel, r] = dens.sample(rng, int(sel.sum()))
        return out

    def permute(self, perm):
        """New model whose state ``j`` is this model's state ``perm[j]``."""
        return EmissionModel(self.names, tuple(tuple(row[p] for p in perm) for row in self.densities))

    def means(self):
        """(R, N) array of state-dependent means."""
        return np.array([[d.mean for d in row] for row in self.densities])

    def to_working(self):
        return np.concatenate([d.to_working() for row in self.densities for d in row])

    @classmethod
    def from_working(cls, w, names, families: Sequence[str], n_states):
        w = np.asarray(w, dtype=float)
        rows, pos = [], 0
        for fam in families:
            klass = family_class(fam)
            row = []
            for _ in range(n_states):
                row.append(klass.from_working(w[pos:pos + klass.n_working]))
                pos += klass.n_working
            rows.append(tuple(row))
        if pos != w.size:
            raise InvalidParameterError(f"expected {pos} emission working values, got {w.size}")
        return cls(tuple(names), tuple(rows))

    def to_dict(self):
        return {
            "variables": [
                {"name": name, "family": row[0].family, "states": [d.to_dict() for d in row]}
                for name, row in zip(self.names, self.densities)
            ]
        }

    @classmethod
    def from_dict(cls, d):
        names, rows = [], []
        for var in d["variables"]:
            names.append(var["name"])
            rows.append(tuple(density_from_dict(var["family"], s) for s in var["states"]))
        return cls(tuple(names), tuple(rows))


@dataclass(frozen=True, eq=False)
class PreparedObservations:
    """A (T, R) observation matrix with the per-column pieces densities need.

    Column arrays are stored transposed, (R, T), so each variable is contiguous.
    """

    values: np.ndarray
    filled: np.ndarray
    log_filled: np.ndarray
    missing: np.ndarray
    zero: np.ndarray
    negative: np.ndarray


def prepare_observations(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise InvalidParameterError(f"observations must be a 2-d array, got shape {y.shape}")
    if np.isinf(y).any():
        raise DomainError("observations must be finite or missing (NaN)")
    missing = np.ascontiguousarray(np.isnan(y).T)
    filled = np.ascontiguousarray(np.where(np.isnan(y), 1.0, y).T)
    log_filled = np.log(np.where(filled > 0, filled, 1.0))
    return PreparedObservations(
        values=y,
        filled=filled,
        log_filled=log_filled,
        missing=missing,
        zero=filled == 0,
        negative=(filled < 0).any(axis=1),
    )


def _family_log_density(row, obs, r):
    """(T, N) log-densities of column ``r`` under every state's density in ``row``."""
    first = row[0]
    y = obs.filled[r][:, None]
    if first.nonnegative and obs.negative[r]:
        raise DomainError(f"{first.family} density is only defined for y >= 0")
    if isinstance(first, Normal):
        mu = np.array([d.mu for d in row])
        sigma = np.array([d.sigma for d in row])
        z = (y - mu) / sigma
        out = -0.5 * z * z - np.log(sigma) - 0.5 * math.log(2.0 * math.pi)
    else:
        gammas = [d.gamma for d in row] if isinstance(first, ZeroInflatedGamma) else row
        a = np.array([g.shape for g in gammas])
        b = np.array([g.rate for g in gammas])
        logy = obs.log_filled[r][:, None]
        out = a * np.log(b) - special.gammaln(a) + (a - 1.0) * logy - b * y
        zero = obs.zero[r]
        if isinstance(first, ZeroInflatedGamma):
            z = np.array([d.zero_mass for d in row])
            with np.errstate(divide="ignore"):
                out = out + np.log1p(-z)
                if zero.any():
                    out[zero] = np.log(z)
        elif zero.any():
            with np.errstate(divide="ignore"):
                out[zero] = special.xlogy(a - 1.0, 0.0) + a * np.log(b) - special.gammaln(a)
    missing = obs.missing[r]
    if missing.any():
        out[missing] = 0.0
    return out
