"""Production-level HMM algorithms.

Forward likelihood, Viterbi decoding, simulation and pseudo-residuals for a
single-chain HMM.  States are 0-based throughout the library.

The forward recursion normalizes the forward vector at every step and
accumulates the log of the normalizing constants.  Before exponentiating,
each row of log-densities is shifted by its maximum, so even densities far
below the smallest double never underflow the computation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._kernels import forward_items
from .distributions import EmissionModel, ZeroInflatedGamma
from .errors import InvalidParameterError, LikelihoodUnderflowError
from .markov import InitialDistribution, Stationary, check_tpm, realize_initial

#: Cumulative probabilities are kept this far from 0 and 1 before the normal quantile.
RESIDUAL_CLIP = 1e-12


@dataclass(frozen=True, eq=False)
class HmmParams:
    """Transition matrix, initial-distribution policy and emissions of one HMM."""

    tpm: np.ndarray
    emissions: EmissionModel
    initial: InitialDistribution = Stationary()

    def __post_init__(self):
        tpm = check_tpm(self.tpm)
        tpm.flags.writeable = False
        object.__setattr__(self, "tpm", tpm)
        if self.emissions.n_states != tpm.shape[0]:
            raise InvalidParameterError(
                f"tpm has {tpm.shape[0]} states but emissions declare {self.emissions.n_states}"
            )
        if not isinstance(self.initial, Stationary):
            realize_initial(self.initial, tpm)

    @property
    def n_states(self):
        return self.tpm.shape[0]

    def initial_distribution(self):
        return realize_initial(self.initial, self.tpm)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def forward_batch(inits, tpms, log_dens, lengths, chain, row):
    """Forward log-likelihoods of many sequences in one compiled loop.

    Parameters
    ----------
    inits : array (C, N)
        Initial distribution of each chain.
    tpms : array (C, N, N)
        Transition matrix of each chain.
    log_dens : array (S, L, N)
        Padded log state-dependent densities of ``S`` sequences.
    lengths : int array (S,)
        Length of each sequence.
    chain, row : int arrays (B,)
        Item ``b`` evaluates sequence ``row[b]`` under chain ``chain[b]``.

    Returns
    -------
    array (B,)
        Log-likelihood of every item.

    Raises
    ------
    LikelihoodUnderflowError
        With ``segment`` set to the offending item's sequence index.
    """
    out, bad = forward_items(
        np.ascontiguousarray(inits, dtype=float),
        np.ascontiguousarray(tpms, dtype=float),
        np.ascontiguousarray(log_dens, dtype=float),
        np.ascontiguousarray(lengths, dtype=np.int64),
        np.ascontiguousarray(chain, dtype=np.int64),
        np.ascontiguousarray(row, dtype=np.int64),
    )
    failed = np.flatnonzero(bad >= 0)
    if failed.size:
        b = int(failed[0])
        raise LikelihoodUnderflowError(int(bad[b]), segment=int(row[b]))
    return out


def forward_from_log_densities(init, tpm, log_dens):
    """Log-likelihood of one sequence given its (T, N) log-density matrix."""
    log_dens = np.asarray(log_dens, dtype=float)
    try:
        out = forward_batch(
            np.asarray(init)[None], np.asarray(tpm)[None], log_dens[None],
            [log_dens.shape[0]], [0], [0],
        )
    except LikelihoodUnderflowError as exc:
        raise LikelihoodUnderflowError(exc.t) from None
    return float(out[0])


def forward_log_likelihood(params, y):
    """Log-likelihood of the observation series ``y`` (T, R) under ``params``."""
    log_dens = params.emissions.log_density(y)
    if log_dens.shape[0] < 1:
        raise InvalidParameterError("observation series is empty")
    return forward_from_log_densities(params.initial_distribution(), params.tpm, log_dens)


def viterbi_from_log_densities(log_init, log_tpm, log_dens):
    """Most probable state path given log-space inputs.

    Ties are broken toward the lowest state index, both in the backpointers
    and at the final step.
    """
    log_dens = np.asarray(log_dens, dtype=float)
    n_steps, n = log_dens.shape
    back = np.zeros((n_steps, n), dtype=int)
    score = log_init + log_dens[0]
    if not np.isfinite(score).any():
        raise LikelihoodUnderflowError(0)
    for t in range(1, n_steps):
        cand = score[:, None] + log_tpm
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(n)] + log_dens[t]
        if not np.isfinite(score).any():
            raise LikelihoodUnderflowError(t)
    path = np.empty(n_steps, dtype=int)
    path[-1] = int(np.argmax(score))
    for t in range(n_steps - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def viterbi(params, y):
    """Globally most probable production-state sequence (0-based)."""
    log_dens = params.emissions.log_density(y)
    return viterbi_from_log_densities(_log(params.initial_distribution()), _log(params.tpm), log_dens)


def complete_data_log_likelihood(params, y, states):
    """Joint log-probability of ``y`` and the state path ``states``."""
    states = np.asarray(states, dtype=int)
    log_dens = params.emissions.log_density(y)
    init = _log(params.initial_distribution())
    trans = _log(params.tpm)
    out = init[states[0]] + log_dens[np.arange(states.size), states].sum()
    return float(out + trans[states[:-1], states[1:]].sum())


def simulate_states(init, tpm, length, rng):
    """Draw a Markov chain path of ``length`` steps."""
    if length < 1:
        raise InvalidParameterError("length must be at least 1")
    cum = np.cumsum(tpm, axis=1)
    u = rng.random(length)
    states = np.empty(length, dtype=int)
    states[0] = min(int(np.searchsorted(np.cumsum(init), u[0], side="right")), len(init) - 1)
    n = tpm.shape[0]
    for t in range(1, length):
        states[t] = min(int(np.searchsorted(cum[states[t - 1]], u[t], side="right")), n - 1)
    return states


def simulate(params, length, rng):
    """Simulate ``(states, observations)`` of the given length."""
    states = simulate_states(params.initial_distribution(), params.tpm, length, rng)
    return states, params.emissions.sample(states, rng)


def pseudo_residuals(params, y, decoded, rng):
    """Normal pseudo-residuals conditional on a decoded state path.

    Each observation is mapped through the cumulative distribution of its
    decoded state and then through the standard normal quantile function.
    At ``y = 0`` under a zero-inflated family, the probability integral
    transform is randomized uniformly on ``(0, zero_mass)``.  Missing
    observations give NaN residuals.
    """
    return emission_pseudo_residuals(params.emissions, y, decoded, rng)


def emission_pseudo_residuals(emissions, y, decoded, rng):
    y = emissions._matrix(y)
    decoded = np.asarray(decoded, dtype=int)
    if decoded.shape != (y.shape[0],):
        raise InvalidParameterError(f"decoded path has shape {decoded.shape}, expected ({y.shape[0]},)")
    u = emissions.cdf(y, decoded)
    for r, row in enumerate(emissions.densities):
        if not isinstance(row[0], ZeroInflatedGamma):
            continue
        zeros = np.flatnonzero(y[:, r] == 0)
        if zeros.size:
            z = np.array([row[s].zero_mass for s in decoded[zeros]])
            u[zeros, r] = rng.random(zeros.size) * z
    finite = ~np.isnan(u)
    if ((u[finite] < RESIDUAL_CLIP) | (u[finite] > 1 - RESIDUAL_CLIP)).any():
        warnings.warn("clamping cumulative probabilities at 0 or 1", RuntimeWarning, stacklevel=2)
    u = np.where(finite, np.clip(u, RESIDUAL_CLIP, 1 - RESIDUAL_CLIP), np.nan)
    return special.ndtri(u)


def information_criteria(loglik, n_params, n_obs):
    """Return ``(aic, bic)``."""
    if n_obs < 1:
        raise InvalidParameterError("n_obs must be at least 1")
    aic = -2.0 * loglik + 2.0 * n_params
    bic = -2.0 * loglik + n_params * math.log(n_obs)
    return aic, bic
