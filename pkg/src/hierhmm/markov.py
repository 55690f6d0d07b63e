"""Transition probability matrices, their logit parameterization, and
initial distributions.

A transition matrix is a plain ``(n, n)`` float array whose rows are
probability vectors.  The working parameterization uses the diagonal as
the reference category of a multinomial logit per row, so the ``n(n-1)``
working values are ``log(g[i, j] / g[i, i])`` for ``i != j`` in row-major
order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .errors import InvalidParameterError, NoUniqueStationaryError

#: Entries at or below this value are clamped before taking logs.
TPM_FLOOR = 1e-10


def check_tpm(g, atol=1e-12):
    """Validate and return ``g`` as a row-stochastic float array."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 1:
        raise InvalidParameterError(f"transition matrix must be square, got shape {g.shape}")
    if not np.isfinite(g).all():
        raise InvalidParameterError("transition matrix has non-finite entries")
    if (g < 0).any() or (g > 1).any():
        raise InvalidParameterError("transition matrix entries must lie in [0, 1]")
    if np.abs(g.sum(axis=1) - 1.0).max() > atol:
        raise InvalidParameterError(f"transition matrix rows must sum to 1, got {g.sum(axis=1)}")
    return g


def check_probs(p, atol=1e-9):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or not np.isfinite(p).all() or (p < 0).any():
        raise InvalidParameterError(f"not a probability vector: {p}")
    if abs(p.sum() - 1.0) > atol:
        raise InvalidParameterError(f"probability vector sums to {p.sum()}, not 1")
    return p


def n_working_tpm(n):
    return n * (n - 1)


def working_to_natural(betas, n):
    """Map ``n(n-1)`` off-diagonal logits to a transition matrix."""
    betas = np.asarray(betas, dtype=float).ravel()
    if betas.size != n * (n - 1):
        raise InvalidParameterError(f"expected {n * (n - 1)} working values, got {betas.size}")
    if not np.isfinite(betas).all():
        raise InvalidParameterError("working transition parameters must be finite")
    eta = np.zeros((n, n))
    eta[~np.eye(n, dtype=bool)] = betas
    return special.softmax(eta, axis=1)


def natural_to_working(g, floor=TPM_FLOOR):
    """Inverse of :func:`working_to_natural`.

    Off-diagonal entries at or below ``floor`` are clamped to ``floor`` (with a
    warning) so every working value stays finite.  A zero on the diagonal has
    no finite representation and is rejected.
    """
    g = check_tpm(g, atol=1e-9)
    n = g.shape[0]
    diag = np.diag(g)
    if (diag <= 0).any():
        raise InvalidParameterError("diagonal entries must be positive (they are the reference category)")
    off = g[~np.eye(n, dtype=bool)]
    if (off <= floor).any():
        warnings.warn(
            f"clamping {(off <= floor).sum()} transition probabilities to {floor:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        off = np.maximum(off, floor)
    rows = np.repeat(np.arange(n), n - 1)
    return np.log(off) - np.log(diag[rows])


def stationary_distribution(g):
    """Stationary distribution of the chain with transition matrix ``g``.

    Solves ``delta @ (I - g) = 0`` stacked with ``sum(delta) = 1`` as an
    overdetermined linear system.  A rank-deficient system means the
    stationary distribution is not unique.
    """
    g = check_tpm(g, atol=1e-9)
    n = g.shape[0]
    a = np.vstack([(np.eye(n) - g).T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    delta, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < n or sv[-1] < 1e-10 * sv[0]:
        raise NoUniqueStationaryError("chain has no unique stationary distribution (reducible)")
    if (delta < -1e-9).any():
        raise NoUniqueStationaryError(f"solution has negative entries: {delta}")
    delta = np.clip(delta, 0.0, None)
    return delta / delta.sum()


@dataclass(frozen=True)
class Stationary:
    """Initial distribution equal to the chain's stationary distribution."""

    policy = "stationary"

    def to_dict(self):
        return {"policy": self.policy}


@dataclass(frozen=True)
class Estimated:
    """Freely estimated initial distribution with logits relative to state 1."""

    logits: tuple

    policy = "estimated"

    def __post_init__(self):
        logits = tuple(float(x) for x in np.ravel(self.logits))
        if not all(np.isfinite(logits)):
            raise InvalidParameterError("initial logits must be finite")
        object.__setattr__(self, "logits", logits)

    @property
    def n(self):
        return len(self.logits) + 1

    @property
    def probs(self):
        return special.softmax(np.concatenate([[0.0], self.logits]))

    @classmethod
    def from_probs(cls, p, floor=TPM_FLOOR):
        p = np.maximum(check_probs(p), floor)
        return cls(tuple(np.log(p[1:]) - np.log(p[0])))

    def to_dict(self):
        return {"policy": self.policy, "probs": self.probs.tolist()}


@dataclass(frozen=True)
class Fixed:
    """Initial distribution held at a user-supplied probability vector."""

    probs: tuple

    policy = "fixed"

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(x) for x in np.ravel(self.probs)))
        check_probs(self.probs)

    def to_dict(self):
        return {"policy": self.policy, "probs": list(self.probs)}


InitialDistribution = Union[Stationary, Estimated, Fixed]


def initial_from_dict(d):
    policy = d.get("policy", "stationary")
    if policy == "stationary":
        return Stationary()
    if policy == "estimated":
        return Estimated.from_probs(d["probs"])
    if policy == "fixed":
        return Fixed(tuple(d["probs"]))
    raise InvalidParameterError(f"unknown initial-distribution policy {policy!r}")


def realize_initial(policy, g):
    """Probability vector implied by an initial-distribution policy."""
    n = np.shape(g)[0]
    if isinstance(policy, Stationary):
        return stationary_distribution(g)
    if isinstance(policy, Estimated):
        p = policy.probs
    elif isinstance(policy, Fixed):
        p = np.array(policy.probs)
    else:
        raise InvalidParameterError(f"unknown initial-distribution policy {policy!r}")
    if p.size != n:
        raise InvalidParameterError(f"initial distribution has {p.size} states, chain has {n}")
    return p
