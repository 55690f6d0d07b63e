"""Analytic gradient of the hierarchical log-likelihood.

The outer forward-backward pass over internal states gives the posterior
weight of every (segment, internal state) pair.  Those weights scale the
inner forward-backward statistics of each segment under each production
chain.  The chain rule through the softmax links, the stationary
distribution and the emission parameterizations then gives the gradient
with respect to the working vector.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from ._kernels import forward_backward_items
from .distributions import Normal, ZeroInflatedGamma
from .errors import LikelihoodUnderflowError
from .hmm_core import forward_batch
from .markov import Estimated, Stationary


def _batch(inits, tpms, log_dens, lengths, chain, row, weight):
    ll, bad, post0, trans, dens = forward_backward_items(
        np.ascontiguousarray(inits, dtype=float),
        np.ascontiguousarray(tpms, dtype=float),
        np.ascontiguousarray(log_dens, dtype=float),
        np.ascontiguousarray(lengths, dtype=np.int64),
        np.ascontiguousarray(chain, dtype=np.int64),
        np.ascontiguousarray(row, dtype=np.int64),
        np.ascontiguousarray(weight, dtype=float),
    )
    failed = np.flatnonzero(bad >= 0)
    if failed.size:
        b = int(failed[0])
        raise LikelihoodUnderflowError(int(bad[b]), segment=int(row[b]))
    return ll, post0, trans, dens


def _tpm_grad(g, counts, extra=None):
    """Gradient with respect to the off-diagonal logits of ``g``.

    ``counts`` are expected transition counts (the gradient with respect to
    ``log g``); ``extra`` is an additional gradient with respect to ``g``
    itself.
    """
    d = counts - g * counts.sum(axis=1, keepdims=True)
    if extra is not None:
        ge = g * extra
        d = d + ge - g * ge.sum(axis=1, keepdims=True)
    return d[~np.eye(g.shape[0], dtype=bool)]


def _stationary_extra(g, delta, post0):
    """Gradient with respect to ``g`` through ``delta = stationary(g)``.

    With ``Z = (I - g + 1 delta)^-1`` a perturbation moves the stationary
    law by ``d delta = delta (dg) Z``.
    """
    n = g.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(delta > 0, post0 / delta, 0.0)
    z = np.linalg.inv(np.eye(n) - g + np.outer(np.ones(n), delta))
    return np.outer(delta, z @ u)


def _initial_grad(policy, g, delta, post0):
    """(logit gradient or None, extra tpm gradient or None)."""
    if isinstance(policy, Estimated):
        return post0[1:] - delta[1:] * post0.sum(), None
    if isinstance(policy, Stationary):
        return None, _stationary_extra(g, delta, post0)
    return None, None


def _emission_grad(em, obs, weights):
    """Gradient of ``sum(weights * log_density)`` with respect to the working values of ``em``.

    ``weights`` is (T, N) over the rows of the prepared observations ``obs``.
    """
    parts = []
    for r, row in enumerate(em.densities):
        first = row[0]
        w = np.where(obs.missing[r][:, None], 0.0, weights)
        y = obs.filled[r][:, None]
        if isinstance(first, Normal):
            mu = np.array([d.mu for d in row])
            sigma = np.array([d.sigma for d in row])
            z = (y - mu) / sigma
            g = np.stack([(w * z / sigma).sum(0), (w * (z * z - 1.0)).sum(0)], axis=1)
        else:
            gammas = [d.gamma for d in row] if isinstance(first, ZeroInflatedGamma) else row
            a = np.array([d.shape for d in gammas])
            b = np.array([d.rate for d in gammas])
            wpos = np.where(obs.zero[r][:, None], 0.0, w) if isinstance(first, ZeroInflatedGamma) else w
            logy = obs.log_filled[r][:, None]
            d_log_a = a * (wpos * (np.log(b) - special.digamma(a) + logy)).sum(0)
            d_log_b = (wpos * (a - b * y)).sum(0)
            cols = [d_log_a, d_log_b]
            if isinstance(first, ZeroInflatedGamma):
                zm = np.array([d.zero_mass for d in row])
                w_zero = (w - wpos).sum(0)
                cols.append(w_zero * (1.0 - zm) - wpos.sum(0) * zm)
            g = np.stack(cols, axis=1)
        parts.append(g.ravel())
    return np.concatenate(parts)


def log_likelihood_and_gradient(model, data):
    """Hierarchical log-likelihood and its gradient in working-vector layout.

    The layout is the one used by :func:`hierhmm.estimation.pack`.
    """
    k, n, m = model.k_internal, model.n_production, data.m_segments
    prepared = data.prepared
    shape = data.padded.shape[:2] + (n,)
    log_dens = np.concatenate([e.log_density(prepared).reshape(shape) for e in model.emissions])
    lengths = np.tile(data.lengths, len(model.emissions))
    chain = np.repeat(np.arange(k), m)
    seg = np.tile(np.arange(m), k)
    row = seg if model.share_emissions else chain * m + seg
    inits = model.production_distributions()
    tpms = model.production_tpms

    try:
        table = forward_batch(inits, tpms, log_dens, lengths, chain, row).reshape(k, m).T
    except LikelihoodUnderflowError as exc:
        raise LikelihoodUnderflowError(exc.t, segment=exc.segment % m) from None

    bounds = data.group_bounds()
    longest = max(stop - start for start, stop in bounds)
    padded = np.zeros((len(bounds), longest, k))
    for g, (start, stop) in enumerate(bounds):
        padded[g, : stop - start] = table[start:stop]
    outer_lengths = [stop - start for start, stop in bounds]
    delta_i = model.internal_distribution()
    g_i = model.internal_tpm
    zeros = np.zeros(len(bounds), dtype=np.int64)
    ll, post_i, trans_i, dens_i = _batch(
        delta_i[None], g_i[None], padded, outer_lengths, zeros, np.arange(len(bounds)), np.ones(len(bounds))
    )
    seg_weights = np.concatenate([dens_i[g, : stop - start] for g, (start, stop) in enumerate(bounds)])

    _, post_p, trans_p, dens_p = _batch(inits, tpms, log_dens, lengths, chain, row, seg_weights.T.ravel())

    init_grad, extra = _initial_grad(model.internal_initial, g_i, delta_i, post_i[0])
    parts = [_tpm_grad(g_i, trans_i[0], extra)]
    if init_grad is not None:
        parts.append(init_grad)
    prod_inits = []
    for c in range(k):
        init_grad, extra = _initial_grad(model.production_initials[c], tpms[c], inits[c], post_p[c])
        parts.append(_tpm_grad(tpms[c], trans_p[c], extra))
        if init_grad is not None:
            prod_inits.append(init_grad)
    parts.extend(prod_inits)

    for e, em in enumerate(model.emissions):
        # padded positions are missing values and carry zero weight
        weights = dens_p[e * m:(e + 1) * m].reshape(-1, n)
        parts.append(_emission_grad(em, prepared, weights))
    return float(ll.sum()), np.concatenate(parts)
