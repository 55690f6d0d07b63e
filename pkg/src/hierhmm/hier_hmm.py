"""Two-level hierarchical HMM.

An internal (crude-scale) Markov chain over segments selects, for each
segment, which of ``K`` production-level HMMs generated that segment's
observations.  The production chain restarts at every segment boundary:
the likelihood of segment ``m`` given internal state ``k`` is a complete
single-HMM likelihood under chain ``k``.  The outer forward recursion then
treats those ``K`` segment likelihoods as emission terms.

When a series holds several animals (groups), each group starts its own
internal chain from the internal initial distribution; the groups share
every parameter and their log-likelihoods add.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .distributions import EmissionModel, prepare_observations
from .errors import InvalidParameterError, LikelihoodUnderflowError
from .hmm_core import (
    HmmParams,
    _log,
    emission_pseudo_residuals,
    forward_batch,
    simulate_states,
    viterbi_from_log_densities,
)
from .markov import (
    Estimated,
    Fixed,
    InitialDistribution,
    Stationary,
    check_tpm,
    realize_initial,
)


@dataclass(frozen=True, eq=False)
class HierarchicalModel:
    """Full parameter set of a hierarchical HMM.

    ``production_tpms[k]`` and ``production_initials[k]`` define the
    production chain active under internal state ``k``.  ``emissions`` holds
    either one shared :class:`EmissionModel` or one per internal state.
    """

    internal_tpm: np.ndarray
    production_tpms: np.ndarray
    emissions: tuple
    internal_initial: InitialDistribution = Stationary()
    production_initials: tuple = ()

    def __post_init__(self):
        g = check_tpm(self.internal_tpm)
        k = g.shape[0]
        tpms = np.asarray(self.production_tpms, dtype=float)
        if tpms.ndim != 3 or tpms.shape[0] != k:
            raise InvalidParameterError(f"need {k} production transition matrices, got shape {tpms.shape}")
        for t in tpms:
            check_tpm(t)
        emissions = self.emissions
        if isinstance(emissions, EmissionModel):
            emissions = (emissions,)
        emissions = tuple(emissions)
        if len(emissions) not in (1, k):
            raise InvalidParameterError(f"need 1 or {k} emission models, got {len(emissions)}")
        n = tpms.shape[1]
        for e in emissions:
            if e.n_states != n:
                raise InvalidParameterError(f"emission model has {e.n_states} states, chains have {n}")
            if e.names != emissions[0].names or e.families != emissions[0].families:
                raise InvalidParameterError("per-internal-state emission models must share variables")
        inits = tuple(self.production_initials) or (Stationary(),) * k
        if len(inits) != k:
            raise InvalidParameterError(f"need {k} production initial policies, got {len(inits)}")
        g.flags.writeable = False
        tpms.flags.writeable = False
        object.__setattr__(self, "internal_tpm", g)
        object.__setattr__(self, "production_tpms", tpms)
        object.__setattr__(self, "emissions", emissions)
        object.__setattr__(self, "production_initials", inits)
        # validates the policies against their chains
        self.internal_distribution()
        self.production_distributions()

    @property
    def k_internal(self):
        return self.internal_tpm.shape[0]

    @property
    def n_production(self):
        return self.production_tpms.shape[1]

    @property
    def share_emissions(self):
        return len(self.emissions) == 1

    @property
    def names(self):
        return self.emissions[0].names

    def emission(self, k):
        return self.emissions[0] if self.share_emissions else self.emissions[k]

    def production(self, k):
        """The production-level :class:`HmmParams` under internal state ``k``."""
        return HmmParams(self.production_tpms[k], self.emission(k), self.production_initials[k])

    def internal_distribution(self):
        return self._internal_distribution.copy()

    def production_distributions(self):
        """(K, N) array of realized production initial distributions."""
        return self._production_distributions.copy()

    @cached_property
    def _internal_distribution(self):
        return realize_initial(self.internal_initial, self.internal_tpm)

    @cached_property
    def _production_distributions(self):
        return np.array([realize_initial(p, g) for p, g in zip(self.production_initials, self.production_tpms)])

    def permute(self, internal_perm, production_perm):
        """Relabel states: new internal ``j`` is old ``internal_perm[j]``, likewise for production."""
        ip = np.asarray(internal_perm, dtype=int)
        pp = np.asarray(production_perm, dtype=int)
        tpms = self.production_tpms[ip][:, pp][:, :, pp]
        internal_tpm = self.internal_tpm[np.ix_(ip, ip)]
        emissions = tuple(self.emissions[k].permute(pp) for k in (ip if not self.share_emissions else [0]))
        return HierarchicalModel(
            internal_tpm,
            tpms,
            emissions,
            _permute_policy(self.internal_initial, ip),
            tuple(_permute_policy(self.production_initials[k], pp) for k in ip),
        )


def _permute_policy(policy, perm):
    if isinstance(policy, Estimated):
        return Estimated.from_probs(policy.probs[perm], floor=0.0)
    if isinstance(policy, Fixed):
        return Fixed(tuple(np.asarray(policy.probs)[perm]))
    return policy


@dataclass(eq=False)
class SegmentedSeries:
    """``M`` segments of multivariate observations, possibly of unequal length.

    ``segments[m]`` is a (T_m, R) float array with NaN for missing values.
    ``groups[m]`` labels the animal segment ``m`` belongs to; segments of one
    group must be contiguous.  ``labels[m]`` is free-form metadata (a segment
    id or window start).
    """

    segments: list
    names: tuple
    groups: Sequence | None = None
    labels: Sequence | None = None

    def __post_init__(self):
        self.names = tuple(self.names)
        segs = []
        for m, s in enumerate(self.segments):
            s = np.array(s, dtype=float)
            if s.ndim == 1:
                s = s[:, None]
            if s.ndim != 2 or s.shape[1] != len(self.names) or s.shape[0] < 1:
                raise InvalidParameterError(f"segment {m} has shape {s.shape}, expected (T>=1, {len(self.names)})")
            s.flags.writeable = False
            segs.append(s)
        if not segs:
            raise InvalidParameterError("a segmented series needs at least one segment")
        self.segments = segs
        if self.groups is None:
            self.groups = [0] * len(segs)
        if self.labels is None:
            self.labels = list(range(len(segs)))
        self.groups = list(self.groups)
        self.labels = list(self.labels)
        if len(self.groups) != len(segs) or len(self.labels) != len(segs):
            raise InvalidParameterError("groups and labels need one entry per segment")
        seen, prev = set(), object()
        for g in self.groups:
            if g != prev:
                if g in seen:
                    raise InvalidParameterError(f"segments of group {g!r} are not contiguous")
                seen.add(g)
                prev = g

    @property
    def m_segments(self):
        return len(self.segments)

    @cached_property
    def lengths(self):
        return np.array([s.shape[0] for s in self.segments])

    @property
    def n_obs(self):
        return int(self.lengths.sum())

    @cached_property
    def padded(self):
        """(M, L, R) array with NaN padding past each segment's end."""
        out = np.full((self.m_segments, self.lengths.max(), len(self.names)), np.nan)
        for m, s in enumerate(self.segments):
            out[m, : s.shape[0]] = s
        return out

    @cached_property
    def prepared(self):
        """Padded observations prepared for :meth:`EmissionModel.log_density`."""
        return prepare_observations(self.padded.reshape(-1, len(self.names)))

    @cached_property
    def stacked(self):
        """All observations as one (sum T_m, R) array."""
        return np.vstack(self.segments)

    def group_bounds(self):
        """List of ``(start, stop)`` segment index ranges, one per group."""
        return list(self._group_bounds)

    @cached_property
    def _group_bounds(self):
        bounds, start, m_total = [], 0, len(self.segments)
        for m in range(1, m_total + 1):
            if m == m_total or self.groups[m] != self.groups[start]:
                bounds.append((start, m))
                start = m
        return tuple(bounds)


@dataclass
class DecodedStates:
    """Decoded (or simulated) states: ``internal`` (M,), ``production[m]`` (T_m,), 0-based."""

    internal: np.ndarray
    production: list = field(default_factory=list)


def _log_density_table(model, data):
    """(E * M, L, N) log-densities of the padded data, one block per emission set."""
    prepared = data.prepared
    shape = data.padded.shape[:2] + (model.n_production,)
    return np.concatenate([e.log_density(prepared).reshape(shape) for e in model.emissions])


def segment_loglik_table(model, data):
    """(M, K) matrix of log L_p(segment m | internal state k)."""
    dens = _log_density_table(model, data)
    k, m = model.k_internal, data.m_segments
    chain = np.repeat(np.arange(k), m)
    seg = np.tile(np.arange(m), k)
    row = seg if model.share_emissions else chain * m + seg
    lengths = np.tile(data.lengths, len(model.emissions))
    try:
        ll = forward_batch(model.production_distributions(), model.production_tpms, dens, lengths, chain, row)
    except LikelihoodUnderflowError as exc:
        raise LikelihoodUnderflowError(exc.t, segment=exc.segment % m) from None
    return ll.reshape(k, m).T


def segment_likelihood_matrix(model, segment):
    """K-vector of per-internal-state log-likelihoods of one segment."""
    data = SegmentedSeries([segment], model.names)
    return segment_loglik_table(model, data)[0]


def _outer_forward(model, table, data):
    bounds = data.group_bounds()
    longest = max(stop - start for start, stop in bounds)
    padded = np.zeros((len(bounds), longest, model.k_internal))
    for g, (start, stop) in enumerate(bounds):
        padded[g, : stop - start] = table[start:stop]
    lengths = [stop - start for start, stop in bounds]
    zeros = np.zeros(len(bounds), dtype=int)
    ll = forward_batch(
        model.internal_distribution()[None], model.internal_tpm[None], padded, lengths, zeros, np.arange(len(bounds))
    )
    return float(ll.sum())


def hierarchical_log_likelihood(model, data):
    """Log-likelihood of all segments under the hierarchical model."""
    return _outer_forward(model, segment_loglik_table(model, data), data)


def viterbi_internal(model, data, table=None):
    """Most probable internal-state sequence (M,), using segment log-likelihoods as emissions."""
    if table is None:
        table = segment_loglik_table(model, data)
    log_init = _log(model.internal_distribution())
    log_tpm = _log(model.internal_tpm)
    out = np.empty(data.m_segments, dtype=int)
    for start, stop in data.group_bounds():
        try:
            out[start:stop] = viterbi_from_log_densities(log_init, log_tpm, table[start:stop])
        except LikelihoodUnderflowError as exc:
            raise LikelihoodUnderflowError(0, segment=start + exc.t) from None
    return out


def viterbi_production_given_internal(model, data, internal):
    """Production-level Viterbi per segment under the chain selected by ``internal``."""
    internal = np.asarray(internal, dtype=int)
    if internal.shape != (data.m_segments,) or (internal < 0).any() or (internal >= model.k_internal).any():
        raise InvalidParameterError("internal path must hold one valid state per segment")
    inits = _log(model.production_distributions())
    tpms = _log(model.production_tpms)
    production = []
    for m, (seg, k) in enumerate(zip(data.segments, internal)):
        log_dens = model.emission(k).log_density(seg)
        try:
            production.append(viterbi_from_log_densities(inits[k], tpms[k], log_dens))
        except LikelihoodUnderflowError as exc:
            raise LikelihoodUnderflowError(exc.t, segment=m) from None
    return DecodedStates(internal, production)


def decode(model, data):
    """Two-stage global decoding: internal path first, then production paths given it."""
    return viterbi_production_given_internal(model, data, viterbi_internal(model, data))


def simulate_hierarchical(model, segment_lengths, rng, groups=None):
    """Simulate ``(truth, data)`` with one segment per entry of ``segment_lengths``.

    Each group (default: a single one) draws its own internal chain.
    """
    lengths = [int(t) for t in segment_lengths]
    if not lengths or min(lengths) < 1:
        raise InvalidParameterError("segment lengths must all be at least 1")
    groups = [0] * len(lengths) if groups is None else list(groups)
    skeleton = SegmentedSeries([np.zeros((1, len(model.names)))] * len(lengths), model.names, groups)
    internal = np.empty(len(lengths), dtype=int)
    for start, stop in skeleton.group_bounds():
        internal[start:stop] = simulate_states(model.internal_distribution(), model.internal_tpm, stop - start, rng)
    inits = model.production_distributions()
    production, segments = [], []
    for k, t in zip(internal, lengths):
        states = simulate_states(inits[k], model.production_tpms[k], t, rng)
        production.append(states)
        segments.append(model.emission(k).sample(states, rng))
    return DecodedStates(internal, production), SegmentedSeries(segments, model.names, groups)


def hierarchical_pseudo_residuals(model, data, decoded, rng):
    """Pseudo-residuals per segment, each conditional on its decoded states.

    Returns a list of (T_m, R) arrays.
    """
    return [
        emission_pseudo_residuals(model.emission(k), seg, states, rng)
        for seg, k, states in zip(data.segments, decoded.internal, decoded.production)
    ]
