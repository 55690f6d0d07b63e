"""Maximum-likelihood fitting of hierarchical HMMs.

The model is packed into one unconstrained working vector laid out as

1. internal transition logits, ``K(K-1)``
2. internal initial logits, ``K-1`` (only if estimated)
3. production transition logits, ``K * N(N-1)``, chain by chain
4. production initial logits, ``K * (N-1)`` (only if estimated)
5. emission working values, once if shared or once per internal state:
   for each variable, for each state, ``(log shape, log rate[, logit
   zero_mass])`` or ``(mu, log sigma)``

and the negative log-likelihood is minimized over that vector with
``scipy.optimize.minimize`` from several starting points.
"""

from __future__ import annotations

import itertools
import logging
import os
import warnings
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import optimize

from .distributions import (
    EmissionModel,
    Normal,
    ZeroInflatedGamma,
    family_class,
    from_mean_sd,
)
from .errors import FitFailureError, HierHMMError, InvalidParameterError, LayoutError
from .gradient import log_likelihood_and_gradient
from .hier_hmm import HierarchicalModel, hierarchical_log_likelihood
from .hmm_core import information_criteria
from .markov import (
    Estimated,
    Fixed,
    Stationary,
    n_working_tpm,
    natural_to_working,
    working_to_natural,
)

log = logging.getLogger(__name__)

METHODS = ("quasi-newton", "nelder-mead")

InitialSpec = Union[str, Sequence[float]]


@dataclass(frozen=True)
class ModelSpec:
    """Structure of a hierarchical model: everything except parameter values.

    ``internal_initial`` and ``production_initial`` are ``"stationary"``,
    ``"estimated"``, or a fixed probability vector.
    """

    k_internal: int
    n_production: int
    names: tuple
    families: tuple
    internal_initial: InitialSpec = "stationary"
    production_initial: InitialSpec = "stationary"
    share_emissions: bool = True

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "families", tuple(self.families))
        if self.k_internal < 1 or self.n_production < 1:
            raise InvalidParameterError("K and N must be at least 1")
        if len(self.names) != len(self.families) or not self.names:
            raise InvalidParameterError("need one family per variable name")
        for fam in self.families:
            family_class(fam)
        for which, pol, n in (
            ("internal", self.internal_initial, self.k_internal),
            ("production", self.production_initial, self.n_production),
        ):
            if isinstance(pol, str):
                if pol not in ("stationary", "estimated"):
                    raise InvalidParameterError(f"unknown {which} initial policy {pol!r}")
            else:
                object.__setattr__(self, f"{which}_initial", tuple(float(x) for x in pol))
                Fixed(getattr(self, f"{which}_initial"))
                if len(pol) != n:
                    raise InvalidParameterError(f"fixed {which} initial distribution needs {n} entries")

    @classmethod
    def from_model(cls, model):
        def policy(p):
            if isinstance(p, Stationary):
                return "stationary"
            if isinstance(p, Estimated):
                return "estimated"
            return tuple(p.probs)

        prod = {policy(p) for p in model.production_initials}
        if len(prod) != 1:
            raise InvalidParameterError("production initial policies differ across internal states")
        return cls(
            model.k_internal,
            model.n_production,
            model.names,
            model.emissions[0].families,
            policy(model.internal_initial),
            prod.pop(),
            model.share_emissions,
        )

    @property
    def n_emission_sets(self):
        return 1 if self.share_emissions else self.k_internal

    def layout(self):
        """List of ``(block name, size)`` in working-vector order."""
        k, n = self.k_internal, self.n_production
        blocks = [("internal_tpm", n_working_tpm(k))]
        if self.internal_initial == "estimated":
            blocks.append(("internal_initial", k - 1))
        blocks.append(("production_tpms", k * n_working_tpm(n)))
        if self.production_initial == "estimated":
            blocks.append(("production_initials", k * (n - 1)))
        per_set = n * sum(family_class(f).n_working for f in self.families)
        blocks.append(("emissions", self.n_emission_sets * per_set))
        return blocks

    @property
    def n_working(self):
        return sum(size for _, size in self.layout())


def _to_policy(spec_value, logits=None):
    if spec_value == "stationary":
        return Stationary()
    if spec_value == "estimated":
        return Estimated(tuple(logits))
    return Fixed(spec_value)


def pack(model):
    """Working vector of ``model`` (see module docstring for the layout)."""
    spec = ModelSpec.from_model(model)
    parts = [natural_to_working(model.internal_tpm)]
    if spec.internal_initial == "estimated":
        parts.append(np.asarray(model.internal_initial.logits))
    parts.extend(natural_to_working(g) for g in model.production_tpms)
    if spec.production_initial == "estimated":
        parts.extend(np.asarray(p.logits) for p in model.production_initials)
    parts.extend(e.to_working() for e in model.emissions)
    return np.concatenate(parts)


def unpack(v, spec):
    """Model described by working vector ``v`` under ``spec``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != spec.n_working:
        raise LayoutError(f"working vector has {v.size} entries, layout needs {spec.n_working}")
    k, n = spec.k_internal, spec.n_production
    blocks, pos = {}, 0
    for name, size in spec.layout():
        blocks[name] = v[pos:pos + size]
        pos += size
    internal_tpm = working_to_natural(blocks["internal_tpm"], k)
    internal_initial = _to_policy(spec.internal_initial, blocks.get("internal_initial"))
    tpms = np.stack([working_to_natural(b, n) for b in np.split(blocks["production_tpms"], k)])
    if spec.production_initial == "estimated":
        inits = tuple(Estimated(tuple(b)) for b in np.split(blocks["production_initials"], k))
    else:
        inits = (_to_policy(spec.production_initial),) * k
    emissions = tuple(
        EmissionModel.from_working(b, spec.names, spec.families, n)
        for b in np.split(blocks["emissions"], spec.n_emission_sets)
    )
    return HierarchicalModel(internal_tpm, tpms, emissions, internal_initial, inits)


def negative_log_likelihood(v, spec, data):
    """Optimizer objective; ``inf`` where the parameters are unusable."""
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value = -hierarchical_log_likelihood(unpack(v, spec), data)
    except (HierHMMError, FloatingPointError, OverflowError):
        return np.inf
    return value if np.isfinite(value) else np.inf


def negative_log_likelihood_and_gradient(v, spec, data):
    """Objective and its analytic gradient; ``(inf, 0)`` where unusable."""
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value, grad = log_likelihood_and_gradient(unpack(v, spec), data)
    except (HierHMMError, FloatingPointError, OverflowError, np.linalg.LinAlgError):
        return np.inf, np.zeros(spec.n_working)
    if not (np.isfinite(value) and np.isfinite(grad).all()):
        return np.inf, np.zeros(spec.n_working)
    return -value, -grad


def _moment_split(values, n, rng):
    """Split sorted values into ``n`` quantile bins with jittered cut points."""
    values = np.sort(values)
    probs = np.arange(1, n) / n
    if rng is not None and n > 1:
        probs = np.sort(np.clip(probs + rng.normal(0.0, 0.25 / n, n - 1), 0.02, 0.98))
    cuts = np.quantile(values, probs)
    bins = np.digitize(values, cuts)
    out = []
    for i in range(n):
        chunk = values[bins == i]
        if chunk.size < 2:
            chunk = values
        out.append((float(chunk.mean()), float(max(chunk.std(), 1e-3 * abs(chunk.mean()), 1e-6))))
    return out


def initial_model(spec, data, rng=None):
    """Data-driven starting model.

    Emission parameters come from moments of quantile bins of the pooled
    observations (state ``i`` gets the ``i``-th bin of every variable).
    Transition logits are drawn from Normal(-2, 1), favoring persistent
    states; with ``rng=None`` they are all -2 apart from a small
    deterministic asymmetry between internal states.
    """
    k, n = spec.k_internal, spec.n_production
    pooled = data.stacked
    rows = []
    for r, fam in enumerate(spec.families):
        col = pooled[:, r]
        col = col[~np.isnan(col)]
        if col.size == 0:
            raise InvalidParameterError(f"variable {spec.names[r]!r} has no observed values")
        if fam == "normal":
            rows.append(tuple(Normal(m, s) for m, s in _moment_split(col, n, rng)))
            continue
        positive = col[col > 0]
        if positive.size == 0:
            positive = np.array([1.0])
        gammas = [from_mean_sd(m, s) for m, s in _moment_split(positive, n, rng)]
        if fam == "zero_inflated_gamma":
            z = float(np.clip(np.mean(col == 0), 1e-3, 0.999))
            rows.append(tuple(ZeroInflatedGamma(z, g) for g in gammas))
        else:
            rows.append(tuple(gammas))
    emissions = EmissionModel(spec.names, tuple(rows))

    def betas(size, offset=0.0):
        if rng is None:
            return np.full(size, -2.0) + offset
        return rng.normal(-2.0, 1.0, size)

    v = [betas(n_working_tpm(k))]
    if spec.internal_initial == "estimated":
        v.append(np.zeros(k - 1))
    for j in range(k):
        # distinct chains so the internal states are not symmetric at the start
        v.append(betas(n_working_tpm(n), offset=0.5 * j * np.linspace(-1, 1, n_working_tpm(n))))
    if spec.production_initial == "estimated":
        v.append(np.zeros(k * (n - 1)))
    v.extend([emissions.to_working()] * spec.n_emission_sets)
    return unpack(np.concatenate(v), spec)


@dataclass
class FitResult:
    model: HierarchicalModel
    loglik: float
    n_params: int
    aic: float
    bic: float
    converged: bool
    n_restarts_used: int
    best_restart_seed: int
    n_obs: int
    restart_logliks: list = field(default_factory=list)
    message: str = ""

    def summary(self):
        """Text report of the fit in the matrix layout used by ``summarize``."""
        from .report import format_model

        head = [
            f"log-likelihood: {self.loglik:.4f}",
            f"parameters: {self.n_params}   observations: {self.n_obs}",
            f"AIC: {self.aic:.4f}   BIC: {self.bic:.4f}",
            f"converged: {self.converged}   restarts: {self.n_restarts_used}   best restart seed: {self.best_restart_seed}",
        ]
        if not self.model.share_emissions:
            head.append("note: emissions vary by internal state")
        return "\n".join(head) + "\n\n" + format_model(self.model)


def _run_restart(v0, spec, data, method, tol, max_iter):
    if method == "nelder-mead":
        res = optimize.minimize(
            negative_log_likelihood, v0, args=(spec, data), method="Nelder-Mead",
            options={"maxiter": max_iter, "maxfev": 4 * max_iter, "fatol": tol, "xatol": 1e-6, "adaptive": True},
        )
    else:
        res = optimize.minimize(
            negative_log_likelihood_and_gradient, v0, args=(spec, data), method="L-BFGS-B", jac=True,
            options={"maxiter": max_iter, "maxfun": 100 * max_iter, "ftol": tol, "gtol": 1e-6},
        )
    return res


def default_jobs():
    try:
        return max(1, int(os.environ.get("HIERHMM_THREADS", "1")))
    except ValueError:
        return 1


def fit(data, spec, *, restarts=10, seed=0, tol=1e-8, max_iter=5000, method="quasi-newton", init=None, n_jobs=None):
    """Fit ``spec`` to ``data`` by direct likelihood maximization.

    Restart ``r`` uses ``numpy.random.default_rng(seed + r)``.  Restart 0
    starts from ``init`` when given, else from a data-driven model; later
    restarts jitter the data-driven start.  The best restart (highest
    log-likelihood, lowest index on ties) is returned.

    Parameters
    ----------
    data : SegmentedSeries
    spec : ModelSpec
    restarts : int
        Number of starting points.
    method : {"quasi-newton", "nelder-mead"}
        L-BFGS with the analytic gradient, or the adaptive
        Nelder-Mead simplex.
    init : HierarchicalModel, optional
        Starting model for restart 0.
    n_jobs : int, optional
        Restarts to run concurrently; defaults to ``$HIERHMM_THREADS`` or 1.
    """
    if method not in METHODS:
        raise InvalidParameterError(f"method must be one of {METHODS}, got {method!r}")
    if restarts < 1:
        raise InvalidParameterError("restarts must be at least 1")
    if tuple(data.names) != spec.names:
        raise InvalidParameterError(f"data variables {data.names} do not match model variables {spec.names}")

    def start(r):
        if r == 0 and init is not None:
            return pack(init)
        rng = np.random.default_rng(seed + r)
        return pack(initial_model(spec, data, rng))

    def attempt(r):
        try:
            v0 = start(r)
        except HierHMMError as exc:
            return r, None, f"restart {r}: bad start ({exc})"
        if not np.isfinite(negative_log_likelihood(v0, spec, data)):
            return r, None, f"restart {r}: non-finite objective at start"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = _run_restart(v0, spec, data, method, tol, max_iter)
        if not np.isfinite(res.fun):
            return r, None, f"restart {r}: optimizer ended at non-finite objective"
        return r, res, f"restart {r}: loglik {-res.fun:.6f} ({res.message})"

    n_jobs = default_jobs() if n_jobs is None else n_jobs
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            outcomes = list(pool.map(attempt, range(restarts)))
    else:
        outcomes = [attempt(r) for r in range(restarts)]

    diagnostics = [msg for _, _, msg in outcomes]
    for r, res, msg in outcomes:
        if res is None:
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.info(msg)
    good = [(r, res) for r, res, _ in outcomes if res is not None]
    if not good:
        raise FitFailureError(diagnostics)
    best_r, best = min(good, key=lambda item: (item[1].fun, item[0]))
    model = unpack(best.x, spec)
    loglik = hierarchical_log_likelihood(model, data)
    n_params = spec.n_working
    aic, bic = information_criteria(loglik, n_params, data.n_obs)
    restart_logliks = [(-res.fun if res is not None else float("nan")) for _, res, _ in outcomes]
    return FitResult(
        model=model,
        loglik=loglik,
        n_params=n_params,
        aic=aic,
        bic=bic,
        converged=bool(best.success),
        n_restarts_used=len(good),
        best_restart_seed=seed + best_r,
        n_obs=data.n_obs,
        restart_logliks=restart_logliks,
        message=str(best.message),
    )


def align_labels(fitted, reference):
    """Permutations ``(internal, production)`` that relabel ``fitted`` to match ``reference``.

    The production permutation minimizes the total absolute difference of
    emission means (each variable scaled by the reference's mean level); the
    internal permutation then minimizes the total absolute difference of the
    relabelled production transition matrices.  Apply the result with
    ``fitted.permute(internal, production)``.
    """
    if (fitted.k_internal, fitted.n_production) != (reference.k_internal, reference.n_production):
        raise InvalidParameterError("models differ in K or N")
    k, n = reference.k_internal, reference.n_production

    def mean_table(model):
        return np.mean([e.means() for e in model.emissions], axis=0)

    ref_means, fit_means = mean_table(reference), mean_table(fitted)
    scale = np.abs(ref_means).mean(axis=1, keepdims=True) + 1e-12
    best_p = min(
        itertools.permutations(range(n)),
        key=lambda p: float((np.abs(fit_means[:, list(p)] - ref_means) / scale).sum()),
    )
    pp = list(best_p)
    relabelled = fitted.production_tpms[:, pp][:, :, pp]
    best_q = min(
        itertools.permutations(range(k)),
        key=lambda q: float(np.abs(relabelled[list(q)] - reference.production_tpms).sum()),
    )
    return np.array(best_q), np.array(pp)
