import numpy as np
import pytest
from _models import (
    PORPOISE_INTERNAL,
    PORPOISE_PRODUCTION,
    PORPOISE_STATIONARY,
    renormalized,
)
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hierhmm.errors import InvalidParameterError, NoUniqueStationaryError
from hierhmm.markov import (
    TPM_FLOOR,
    Estimated,
    Fixed,
    Stationary,
    check_tpm,
    initial_from_dict,
    natural_to_working,
    realize_initial,
    stationary_distribution,
    working_to_natural,
)

# snake study, movement level under the third internal state ("~0" read as 0)
SNAKE_G3 = np.array([[0.994, 0.006, 0.0], [0.003, 0.997, 0.0], [0.0, 0.018, 0.982]])
SNAKE_INTERNAL = np.array([[0.166, 0.578, 0.256], [0.680, 0.226, 0.095], [0.157, 0.208, 0.635]])


def test_porpoise_stationary_distributions():
    mats = [PORPOISE_INTERNAL, *renormalized(PORPOISE_PRODUCTION)]
    for g, expected in zip(mats, PORPOISE_STATIONARY):
        np.testing.assert_allclose(stationary_distribution(g), expected, atol=2e-3)


def test_stationary_solves_left_eigen_equation():
    g = renormalized(PORPOISE_PRODUCTION[1])
    d = stationary_distribution(g)
    np.testing.assert_allclose(d @ g, d, atol=1e-14)
    assert d.sum() == pytest.approx(1.0, abs=1e-15)
    # the right-eigenvector reading of the definition gives the uniform vector instead
    assert not np.allclose(d, np.full(3, 1 / 3), atol=0.1)


def test_stationary_frozen_values():
    # reference values from an exact 30-digit solve of the stationary equations
    d = stationary_distribution(renormalized(SNAKE_INTERNAL))
    np.testing.assert_allclose(d, [0.336935033939, 0.338685841165, 0.324379124896], atol=1e-11)
    d3 = stationary_distribution(SNAKE_G3)
    np.testing.assert_allclose(d3 @ SNAKE_G3, d3, atol=1e-14)
    assert abs(d3[2]) < 1e-14
    np.testing.assert_allclose(d3[:2], [1 / 3, 2 / 3], atol=1e-12)


def test_reducible_chain_has_no_unique_stationary():
    with pytest.raises(NoUniqueStationaryError):
        stationary_distribution(np.eye(3))
    with pytest.raises(NoUniqueStationaryError):
        stationary_distribution(np.array([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]]))


def test_periodic_chain_is_fine():
    np.testing.assert_allclose(stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]])), [0.5, 0.5])


def test_check_tpm():
    with pytest.raises(InvalidParameterError):
        check_tpm(PORPOISE_PRODUCTION[0])  # the published first row sums to 0.999
    with pytest.raises(InvalidParameterError):
        check_tpm(np.ones((2, 3)) / 3)
    with pytest.raises(InvalidParameterError):
        check_tpm([[1.5, -0.5], [0.5, 0.5]])
    with pytest.raises(InvalidParameterError):
        check_tpm([[np.nan, 1.0], [0.5, 0.5]])
    check_tpm([[1.0]])


def test_one_state_chain():
    assert working_to_natural([], 1).tolist() == [[1.0]]
    assert natural_to_working([[1.0]]).size == 0
    assert stationary_distribution([[1.0]]).tolist() == [1.0]


def test_link_values():
    g = working_to_natural([0.0, 0.0], 2)
    np.testing.assert_allclose(g, 0.5)
    g = working_to_natural(np.log([0.211 / 0.789, 0.219 / 0.781]), 2)
    np.testing.assert_allclose(g, PORPOISE_INTERNAL, atol=1e-15)
    betas = natural_to_working(PORPOISE_INTERNAL)
    np.testing.assert_allclose(betas, [np.log(0.211 / 0.789), np.log(0.219 / 0.781)])


def test_clamping_near_zero_entries():
    with pytest.warns(RuntimeWarning, match="clamping"):
        betas = natural_to_working(SNAKE_G3)
    assert np.isfinite(betas).all()
    back = working_to_natural(betas, 3)
    np.testing.assert_allclose(back, SNAKE_G3, atol=3e-10)
    assert (back > 0).all()
    assert back[0, 2] == pytest.approx(TPM_FLOOR * 0.994 / (1 + 2e-10), rel=1e-6)


def test_zero_diagonal_rejected():
    with pytest.raises(InvalidParameterError):
        natural_to_working([[0.0, 1.0], [0.5, 0.5]])


def test_link_rejects_wrong_size_and_nonfinite():
    with pytest.raises(InvalidParameterError):
        working_to_natural([0.0, 1.0, 2.0], 2)
    with pytest.raises(InvalidParameterError):
        working_to_natural([0.0, np.inf], 2)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: arrays(float, n * (n - 1), elements=st.floats(-8, 8))))
def test_working_round_trip(betas):
    # within this range every probability stays above the clamping floor
    n = int(round((1 + np.sqrt(1 + 4 * betas.size)) / 2))
    g = working_to_natural(betas, n)
    check_tpm(g)
    np.testing.assert_allclose(natural_to_working(g), betas, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_natural_round_trip(n, seed):
    g = np.random.default_rng(seed).dirichlet(np.ones(n), size=n)
    g = 0.98 * g + 0.02 / n
    np.testing.assert_allclose(working_to_natural(natural_to_working(g), n), g, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1), st.floats(-20, 20))
def test_row_shift_invariance(n, seed, shift):
    """Adding a constant to every logit of a row (reference included) leaves the matrix unchanged."""
    rng = np.random.default_rng(seed)
    betas = rng.normal(size=n * (n - 1))
    eta = np.zeros((n, n))
    eta[~np.eye(n, dtype=bool)] = betas
    shifted = np.exp(eta + shift)
    np.testing.assert_allclose(shifted / shifted.sum(1, keepdims=True), working_to_natural(betas, n), atol=1e-14)


def test_initial_policies():
    g = PORPOISE_INTERNAL
    np.testing.assert_allclose(realize_initial(Stationary(), g), stationary_distribution(g))
    est = Estimated.from_probs([0.903, 0.072, 0.025])
    np.testing.assert_allclose(est.probs, [0.903, 0.072, 0.025], atol=1e-15)
    np.testing.assert_allclose(est.logits, np.log([0.072 / 0.903, 0.025 / 0.903]))
    assert initial_from_dict(est.to_dict()).logits == pytest.approx(est.logits)
    fixed = Fixed((0.25, 0.75))
    np.testing.assert_allclose(realize_initial(fixed, g), [0.25, 0.75])
    assert initial_from_dict(fixed.to_dict()) == fixed
    assert initial_from_dict({"policy": "stationary"}) == Stationary()
    with pytest.raises(InvalidParameterError):
        realize_initial(Fixed((0.2, 0.3, 0.5)), g)
    with pytest.raises(InvalidParameterError):
        Fixed((0.2, 0.3))
    with pytest.raises(InvalidParameterError):
        initial_from_dict({"policy": "uniform"})
