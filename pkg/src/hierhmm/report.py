"""Text reports of fitted models and density-curve tables for plotting."""

from __future__ import annotations

import numpy as np

from .distributions import Normal, ZeroInflatedGamma
from .errors import NoUniqueStationaryError
from .markov import stationary_distribution


def _vec(p, digits=3):
    return "(" + ", ".join(f"{x:.{digits}f}" for x in p) + ")"


def _matrix(g, indent="    ", digits=3):
    return "\n".join(indent + "  ".join(f"{x:.{digits}f}" for x in row) for row in g)


def _try_stationary(g):
    try:
        return stationary_distribution(g)
    except NoUniqueStationaryError:
        return None


def stationary_distributions(model):
    """Stationary distributions of the internal chain and each production chain (None if not unique)."""
    return [_try_stationary(model.internal_tpm)] + [_try_stationary(g) for g in model.production_tpms]


def _policy_name(policy):
    return policy.policy


def format_model(model, config=None, digits=3):
    """Matrices, initial distributions and emission parameters, states numbered from 1."""
    transforms = {v.name: v.transform for v in config.variables} if config is not None else {}
    out = ["crude level (internal states):", "  transition matrix:", _matrix(model.internal_tpm, digits=digits)]
    out.append(f"  initial distribution [{_policy_name(model.internal_initial)}]: {_vec(model.internal_distribution(), digits)}")
    inits = model.production_distributions()
    out.append("production level:")
    for k in range(model.k_internal):
        out.append(f"  internal state {k + 1}: transition matrix")
        out.append(_matrix(model.production_tpms[k], digits=digits))
        out.append(f"    initial distribution [{_policy_name(model.production_initials[k])}]: {_vec(inits[k], digits)}")
    stat = stationary_distributions(model)
    out.append("stationary distributions:")
    out.append("  internal: " + (_vec(stat[0], digits) if stat[0] is not None else "not unique"))
    for k, s in enumerate(stat[1:]):
        out.append(f"  production | internal state {k + 1}: " + (_vec(s, digits) if s is not None else "not unique"))
    out.append("emission distributions:")
    sets = [(None, model.emissions[0])] if model.share_emissions else list(enumerate(model.emissions))
    for k, em in sets:
        if k is not None:
            out.append(f"  internal state {k + 1}:")
        for name, row in zip(em.names, em.densities):
            scale = " (sqrt scale)" if transforms.get(name) == "sqrt" else ""
            out.append(f"  {name} [{row[0].family}]{scale}:")
            for i, d in enumerate(row):
                out.append(f"    state {i + 1}: " + _density_line(d))
    return "\n".join(out)


def _density_line(d):
    if isinstance(d, Normal):
        return f"mean={d.mu:.4g} sd={d.sigma:.4g}"
    g = d.gamma if isinstance(d, ZeroInflatedGamma) else d
    line = f"mean={g.mean:.4g} sd={g.sd:.4g} shape={g.shape:.4g} rate={g.rate:.4g}"
    if isinstance(d, ZeroInflatedGamma):
        line += f" zero_mass={d.zero_mass:.4g}"
    return line


def long_run_weights(model):
    """Long-run share of each production state, or None if a chain has no unique stationary law."""
    stat = stationary_distributions(model)
    if any(s is None for s in stat):
        return None
    return np.einsum("k,kn->n", stat[0], np.array(stat[1:]))


def density_curves(model, n_grid=400, emission_index=0):
    """Per-variable density tables on a grid.

    Returns ``{name: (grid, densities (G, N), zero_masses (N,) or None)}``.
    Zero-inflated densities are the continuous part scaled by ``1 - zero_mass``.
    """
    em = model.emissions[emission_index]
    curves = {}
    for name, row in zip(em.names, em.densities):
        if isinstance(row[0], Normal):
            lo = min(d.mu - 4 * d.sigma for d in row)
            hi = max(d.mu + 4 * d.sigma for d in row)
            grid = np.linspace(lo, hi, n_grid)
        else:
            gammas = [d.gamma if isinstance(d, ZeroInflatedGamma) else d for d in row]
            hi = max(g.ppf(0.995) for g in gammas)
            grid = np.linspace(hi / n_grid, hi, n_grid)
        dens = np.column_stack([np.exp(d.log_pdf(grid)) for d in row])
        zeros = np.array([d.zero_mass for d in row]) if isinstance(row[0], ZeroInflatedGamma) else None
        curves[name] = (grid, dens, zeros)
    return curves
