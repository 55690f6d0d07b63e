import itertools
import math

import numpy as np
import pytest
from _models import PORPOISE_PRODUCTION, porpoise_emissions, random_tpm, renormalized
from scipy import special, stats

from hierhmm.distributions import EmissionModel, Gamma, Normal, ZeroInflatedGamma
from hierhmm.errors import InvalidParameterError, LikelihoodUnderflowError
from hierhmm.hmm_core import (
    HmmParams,
    complete_data_log_likelihood,
    forward_from_log_densities,
    forward_log_likelihood,
    information_criteria,
    pseudo_residuals,
    simulate,
    simulate_states,
    viterbi,
)
from hierhmm.markov import Estimated, Fixed, stationary_distribution


def random_params(rng, n, initial=None):
    em = EmissionModel(
        ("y",), (tuple(Gamma(rng.uniform(0.8, 5.0), rng.uniform(0.2, 3.0)) for _ in range(n)),)
    )
    tpm = random_tpm(rng, n) * 0.95 + 0.05 / n
    if initial is None:
        initial = Estimated.from_probs(rng.dirichlet(np.ones(n)))
    return HmmParams(tpm, em, initial)


def enumerate_paths(params, y):
    n, t = params.n_states, len(y)
    return [
        complete_data_log_likelihood(params, y, np.array(path))
        for path in itertools.product(range(n), repeat=t)
    ]


def independent_joint(params, y, path):
    """Joint probability of ``y`` and ``path`` from scalar density evaluations."""
    delta = params.initial_distribution()
    p = delta[path[0]]
    for t, s in enumerate(path):
        if t:
            p *= params.tpm[path[t - 1], s]
        p *= math.exp(params.emissions.densities[0][s].log_pdf(float(y[t])))
    return p


def test_forward_matches_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n, t = int(rng.integers(1, 4)), int(rng.integers(1, 8))
        params = random_params(rng, n)
        y = params.emissions.sample(simulate_states(params.initial_distribution(), params.tpm, t, rng), rng)
        brute = special.logsumexp(enumerate_paths(params, y))
        assert forward_log_likelihood(params, y) == pytest.approx(brute, rel=1e-12)


def test_complete_data_likelihood_is_product():
    rng = np.random.default_rng(2)
    params = random_params(rng, 3)
    y = np.array([0.5, 2.0, 1.2, 3.3])
    for path in [(0, 1, 2, 0), (2, 2, 2, 2), (1, 0, 1, 0)]:
        expected = math.log(independent_joint(params, y, path))
        assert complete_data_log_likelihood(params, y, np.array(path)) == pytest.approx(expected, rel=1e-13)


def test_forward_matches_unscaled_product():
    rng = np.random.default_rng(5)
    params = HmmParams(
        renormalized(PORPOISE_PRODUCTION[0]), porpoise_emissions()
    )
    for t in (1, 5, 20):
        _, y = simulate(params, t, rng)
        dens = np.exp(params.emissions.log_density(y))
        alpha = params.initial_distribution() * dens[0]
        for s in range(1, t):
            alpha = (alpha @ params.tpm) * dens[s]
        assert forward_log_likelihood(params, y) == pytest.approx(math.log(alpha.sum()), rel=1e-12)


def test_long_series_stays_finite():
    rng = np.random.default_rng(0)
    params = HmmParams(renormalized(PORPOISE_PRODUCTION[1]), porpoise_emissions())
    _, y = simulate(params, 100_000, rng)
    ll = forward_log_likelihood(params, y)
    assert np.isfinite(ll)
    # per-observation log-likelihood is of the order of the emission entropy
    assert -20 < ll / 100_000 < 0


def test_extreme_log_densities():
    """Log-densities far outside the double range are handled by shifting."""
    init = np.array([0.5, 0.5])
    tpm = np.array([[0.9, 0.1], [0.2, 0.8]])
    base = np.log(np.array([[0.3, 0.7], [0.6, 0.1], [0.2, 0.2]]))
    ref = forward_from_log_densities(init, tpm, base)
    for offset in (-2000.0, 2000.0):
        assert forward_from_log_densities(init, tpm, base + offset) == pytest.approx(ref + 3 * offset, rel=1e-13)


def test_underflow_reports_time_step():
    init = np.array([1.0, 0.0])
    tpm = np.array([[1.0, 0.0], [0.0, 1.0]])
    log_dens = np.array([[0.0, 0.0], [0.0, 0.0], [-np.inf, 0.0]])
    with pytest.raises(LikelihoodUnderflowError) as info:
        forward_from_log_densities(init, tpm, log_dens)
    assert info.value.t == 2


def test_state_permutation_invariance():
    rng = np.random.default_rng(8)
    params = random_params(rng, 3)
    _, y = simulate(params, 50, rng)
    perm = [2, 0, 1]
    permuted = HmmParams(
        params.tpm[perm][:, perm],
        params.emissions.permute(perm),
        Fixed(tuple(params.initial_distribution()[perm])),
    )
    assert forward_log_likelihood(permuted, y) == pytest.approx(forward_log_likelihood(params, y), rel=1e-12)


def test_viterbi_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(60):
        n, t = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        params = random_params(rng, n)
        _, y = simulate(params, t, rng)
        scores = enumerate_paths(params, y)
        best = list(itertools.product(range(n), repeat=t))[int(np.argmax(scores))]
        path = viterbi(params, y)
        assert complete_data_log_likelihood(params, y, path) == pytest.approx(max(scores), rel=1e-12)
        assert tuple(path) == best


def test_viterbi_ties_go_to_lowest_state():
    em = EmissionModel(("y",), ((Normal(0.0, 1.0), Normal(0.0, 1.0)),))
    params = HmmParams(np.full((2, 2), 0.5), em)
    assert viterbi(params, np.zeros(4)).tolist() == [0, 0, 0, 0]


def test_viterbi_dominates_random_paths():
    rng = np.random.default_rng(4)
    params = random_params(rng, 3)
    _, y = simulate(params, 30, rng)
    best = complete_data_log_likelihood(params, y, viterbi(params, y))
    for _ in range(1000):
        path = rng.integers(0, 3, size=30)
        assert complete_data_log_likelihood(params, y, path) <= best + 1e-9


def test_simulated_chain_frequencies():
    rng = np.random.default_rng(9)
    g = renormalized(PORPOISE_PRODUCTION[0])
    states = simulate_states(stationary_distribution(g), g, 200_000, rng)
    counts = np.zeros((3, 3))
    np.add.at(counts, (states[:-1], states[1:]), 1)
    est = counts / counts.sum(1, keepdims=True)
    assert np.abs(est - g).max() < 0.01
    np.testing.assert_allclose(np.bincount(states) / states.size, stationary_distribution(g), atol=0.01)


def test_pseudo_residuals_are_standard_normal_under_the_truth():
    rng = np.random.default_rng(12)
    params = HmmParams(renormalized(PORPOISE_PRODUCTION[1]), porpoise_emissions())
    states, y = simulate(params, 20_000, rng)
    res = pseudo_residuals(params, y, states, rng)
    assert res.shape == y.shape
    for r in range(3):
        assert stats.kstest(res[:, r], "norm").pvalue > 0.01
    # randomization at the point mass gives continuous residuals
    zeros = y[:, 2] == 0
    assert zeros.sum() > 500
    assert np.unique(res[zeros, 2]).size == zeros.sum()


def test_pseudo_residual_values_and_missing():
    em = EmissionModel(("y",), ((Normal(1.0, 2.0),),))
    params = HmmParams(np.ones((1, 1)), em)
    y = np.array([1.0, 3.0, np.nan])
    res = pseudo_residuals(params, y, np.zeros(3, dtype=int), np.random.default_rng(0))
    np.testing.assert_allclose(res[:2, 0], [0.0, 1.0], atol=1e-12)
    assert np.isnan(res[2, 0])
    with pytest.warns(RuntimeWarning, match="clamping"):
        res = pseudo_residuals(params, np.array([200.0]), np.zeros(1, dtype=int), np.random.default_rng(0))
    assert res[0, 0] == pytest.approx(stats.norm.ppf(1 - 1e-12), rel=1e-6)


def test_zero_inflated_residual_range():
    em = EmissionModel(("w",), ((ZeroInflatedGamma(0.3, Gamma(2.0, 1.0)),),))
    params = HmmParams(np.ones((1, 1)), em)
    res = pseudo_residuals(params, np.zeros(5000), np.zeros(5000, dtype=int), np.random.default_rng(1))
    assert res.max() < stats.norm.ppf(0.3)
    # uniform on (0, 0.3) mapped through the normal quantile
    assert stats.kstest(stats.norm.cdf(res[:, 0]) / 0.3, "uniform").pvalue > 0.01


def test_information_criteria():
    aic, bic = information_criteria(-100.0, 5, 50)
    assert aic == 210.0
    assert bic == pytest.approx(200.0 + 5 * math.log(50))
    with pytest.raises(InvalidParameterError):
        information_criteria(-1.0, 1, 0)


def test_params_validation():
    em = porpoise_emissions()
    with pytest.raises(InvalidParameterError):
        HmmParams(np.full((2, 2), 0.5), em)
    with pytest.raises(InvalidParameterError):
        HmmParams(renormalized(PORPOISE_PRODUCTION[0]), em, Fixed((0.5, 0.5)))
    with pytest.raises(InvalidParameterError):
        forward_log_likelihood(HmmParams(renormalized(PORPOISE_PRODUCTION[0]), em), np.empty((0, 3)))
