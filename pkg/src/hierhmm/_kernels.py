"""Compiled inner loops for the forward recursion."""

import numpy as np
from numba import njit


@njit(cache=True)
def forward_items(init, tpm, log_dens, lengths, chain, row):
    """Scaled forward log-likelihood for a batch of items.

    Item ``b`` runs chain ``chain[b]`` (indexing ``init`` (C, N) and ``tpm``
    (C, N, N)) over ``log_dens[row[b], :lengths[row[b]]]``.  Returns the
    log-likelihoods and, per item, the first time step with zero total
    probability (-1 when none).
    """
    n_items = chain.shape[0]
    n = init.shape[1]
    out = np.zeros(n_items)
    bad = np.full(n_items, -1)
    alpha = np.empty(n)
    step = np.empty(n)
    for b in range(n_items):
        c = chain[b]
        r = row[b]
        ll = 0.0
        for t in range(lengths[r]):
            shift = -np.inf
            for j in range(n):
                shift = max(shift, log_dens[r, t, j])
            if not np.isfinite(shift):
                bad[b] = t
                break
            total = 0.0
            for j in range(n):
                if t == 0:
                    prior = init[c, j]
                else:
                    prior = 0.0
                    for i in range(n):
                        prior += alpha[i] * tpm[c, i, j]
                step[j] = prior * np.exp(log_dens[r, t, j] - shift)
                total += step[j]
            if not (total > 0.0 and np.isfinite(total)):
                bad[b] = t
                break
            for j in range(n):
                alpha[j] = step[j] / total
            ll += np.log(total) + shift
        out[b] = ll
    return out, bad


@njit(cache=True)
def forward_backward_items(init, tpm, log_dens, lengths, chain, row, weight):
    """Scaled forward-backward pass accumulating weighted posterior statistics.

    Items are laid out as in :func:`forward_items`; item ``b`` carries weight
    ``weight[b]``.  Returns

    - ``ll`` (B,): log-likelihood per item
    - ``bad`` (B,): first time step with zero total probability, or -1
    - ``post0`` (C, N): sum of weighted posteriors of the first state
    - ``trans`` (C, N, N): sum of weighted expected transition counts
    - ``dens`` (S, L, N): sum of weighted state posteriors per sequence row

    so that, summed over items with these weights, ``post0 / init`` is the
    gradient of the log-likelihood with respect to ``init``, ``trans / tpm``
    with respect to ``tpm``, and ``dens`` with respect to ``log_dens``.
    """
    n_items = chain.shape[0]
    n_chains, n = init.shape
    n_rows, longest = log_dens.shape[0], log_dens.shape[1]
    ll_out = np.zeros(n_items)
    bad = np.full(n_items, -1)
    post0 = np.zeros((n_chains, n))
    trans = np.zeros((n_chains, n, n))
    dens = np.zeros((n_rows, longest, n))
    alpha = np.empty((longest, n))
    phi = np.empty((longest, n))
    total = np.empty(longest)
    beta = np.empty(n)
    prev = np.empty(n)
    for b in range(n_items):
        c = chain[b]
        r = row[b]
        w = weight[b]
        t_len = lengths[r]
        ll = 0.0
        failed = False
        for t in range(t_len):
            shift = -np.inf
            for j in range(n):
                shift = max(shift, log_dens[r, t, j])
            if not np.isfinite(shift):
                bad[b] = t
                failed = True
                break
            s = 0.0
            for j in range(n):
                phi[t, j] = np.exp(log_dens[r, t, j] - shift)
                if t == 0:
                    prior = init[c, j]
                else:
                    prior = 0.0
                    for i in range(n):
                        prior += alpha[t - 1, i] * tpm[c, i, j]
                alpha[t, j] = prior * phi[t, j]
                s += alpha[t, j]
            if not (s > 0.0 and np.isfinite(s)):
                bad[b] = t
                failed = True
                break
            for j in range(n):
                alpha[t, j] /= s
            total[t] = s
            ll += np.log(s) + shift
        ll_out[b] = ll
        if failed or w == 0.0:
            continue
        for j in range(n):
            beta[j] = 1.0
        for t in range(t_len - 1, -1, -1):
            for j in range(n):
                dens[r, t, j] += w * alpha[t, j] * beta[j]
            if t == 0:
                for j in range(n):
                    post0[c, j] += w * alpha[0, j] * beta[j]
                break
            for j in range(n):
                prev[j] = phi[t, j] * beta[j] / total[t]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    x = tpm[c, i, j] * prev[j]
                    trans[c, i, j] += w * alpha[t - 1, i] * x
                    acc += x
                beta[i] = acc
    return ll_out, bad, post0, trans, dens
