import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from hierhmm.distributions import (
    EmissionModel,
    Gamma,
    Normal,
    ZeroInflatedGamma,
    density_from_dict,
    from_mean_sd,
    log_pdf,
    prepare_observations,
    sample,
)
from hierhmm.errors import DomainError, InvalidParameterError

mpmath.mp.dps = 40


def mp_gamma_logpdf(a, b, y):
    a, b, y = mpmath.mpf(a), mpmath.mpf(b), mpmath.mpf(y)
    return float(a * mpmath.log(b) - mpmath.loggamma(a) + (a - 1) * mpmath.log(y) - b * y)


@pytest.mark.parametrize(
    "a, b, y",
    [(0.5, 1.0, 0.01), (2.0, 0.5, 3.0), (11.1, 0.74, 15.0), (150.0, 3.0, 48.0), (0.9, 20.0, 1e-6), (3.0, 1e-3, 4000.0)],
)
def test_gamma_log_pdf_matches_mpmath(a, b, y):
    assert Gamma(a, b).log_pdf(y) == pytest.approx(mp_gamma_logpdf(a, b, y), rel=1e-13, abs=1e-13)


@pytest.mark.parametrize("a, b", [(0.7, 2.0), (2.5, 0.4), (20.0, 3.0)])
def test_gamma_cdf_matches_mpmath(a, b):
    for y in (0.1, 1.0, 5.0):
        expected = float(mpmath.gammainc(a, 0, b * y, regularized=True))
        assert Gamma(a, b).cdf(y) == pytest.approx(expected, rel=1e-12)


def test_gamma_at_zero():
    assert Gamma(1.0, 2.0).log_pdf(0.0) == pytest.approx(math.log(2.0))
    assert Gamma(2.0, 2.0).log_pdf(0.0) == -np.inf
    assert Gamma(0.5, 2.0).log_pdf(0.0) == np.inf


def test_gamma_negative_rejected():
    with pytest.raises(DomainError):
        Gamma(2.0, 1.0).log_pdf(-0.1)
    with pytest.raises(DomainError):
        ZeroInflatedGamma(0.2, Gamma(2.0, 1.0)).log_pdf(np.array([1.0, -1.0]))


def test_zero_inflated_density():
    z, g = 0.4, Gamma(8.163, 2.041)
    d = ZeroInflatedGamma(z, g)
    assert d.log_pdf(0.0) == pytest.approx(math.log(0.4))
    assert d.log_pdf(3.0) == pytest.approx(math.log(0.6) + g.log_pdf(3.0))
    assert np.isnan(d.log_pdf(np.array([np.nan]))[0])
    # total mass: point mass plus the continuous part
    cont, _ = integrate.quad(lambda y: math.exp(d.log_pdf(y)), 0, np.inf)
    assert z + cont == pytest.approx(1.0, abs=1e-10)
    assert d.cdf(0.0) == pytest.approx(z)
    assert d.cdf(4.0) == pytest.approx(z + (1 - z) * g.cdf(4.0))


def test_zero_inflated_boundaries():
    g = Gamma(2.0, 1.0)
    assert ZeroInflatedGamma(0.0, g).log_pdf(0.0) == -np.inf
    assert ZeroInflatedGamma(1.0, g).log_pdf(1.0) == -np.inf
    with pytest.raises(InvalidParameterError):
        ZeroInflatedGamma(1.2, g)


@pytest.mark.parametrize("a, b", [(0.8, 1.5), (3.0, 0.2), (40.0, 4.0)])
def test_gamma_normalizes_and_cdf_is_integral(a, b):
    d = Gamma(a, b)
    total, _ = integrate.quad(lambda y: math.exp(d.log_pdf(y)), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-9)
    y = d.mean
    part, _ = integrate.quad(lambda t: math.exp(d.log_pdf(t)), 0, y, limit=200)
    assert d.cdf(y) == pytest.approx(part, abs=1e-9)
    assert d.ppf(d.cdf(y)) == pytest.approx(y, rel=1e-10)


def test_normal_matches_scipy():
    d = Normal(1.5, 0.7)
    y = np.linspace(-2, 5, 11)
    np.testing.assert_allclose(d.log_pdf(y), stats.norm.logpdf(y, 1.5, 0.7), rtol=1e-13)
    np.testing.assert_allclose(d.cdf(y), stats.norm.cdf(y, 1.5, 0.7), rtol=1e-12)
    assert d.log_pdf(-100.0) == pytest.approx(stats.norm.logpdf(-100.0, 1.5, 0.7), rel=1e-13)


def test_from_mean_sd():
    g = from_mean_sd(1.891, 0.487)
    assert g.mean == pytest.approx(1.891)
    assert g.sd == pytest.approx(0.487)
    assert g.shape == pytest.approx((1.891 / 0.487) ** 2)
    for bad in [(0.0, 1.0), (1.0, -1.0), (np.nan, 1.0)]:
        with pytest.raises(DomainError):
            from_mean_sd(*bad)


@pytest.mark.parametrize(
    "d",
    [Gamma(2.5, 0.5), ZeroInflatedGamma(0.1, from_mean_sd(15.0, 5.25)), Normal(-1.0, 2.0)],
    ids=["gamma", "zig", "normal"],
)
def test_monte_carlo_moments(d):
    rng = np.random.default_rng(7)
    x = d.sample(rng, 200_000)
    se = d.sd / math.sqrt(x.size)
    assert abs(x.mean() - d.mean) < 5 * se
    assert x.std() == pytest.approx(d.sd, rel=0.02)
    if isinstance(d, ZeroInflatedGamma):
        assert np.mean(x == 0) == pytest.approx(d.zero_mass, abs=5 * math.sqrt(0.09 / x.size))


def test_sampling_is_seeded():
    d = ZeroInflatedGamma(0.3, Gamma(2.0, 1.0))
    a = sample(d, np.random.default_rng(3), 50)
    b = sample(d, np.random.default_rng(3), 50)
    np.testing.assert_array_equal(a, b)
    assert log_pdf(d, 0.0) == pytest.approx(math.log(0.3))


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-8, 8),
)
def test_working_round_trip(la, lb, lz):
    g = Gamma.from_working([la, lb])
    np.testing.assert_allclose(g.to_working(), [la, lb], atol=1e-12)
    z = ZeroInflatedGamma.from_working([la, lb, lz])
    np.testing.assert_allclose(z.to_working(), [la, lb, lz], atol=1e-9)
    n = Normal.from_working([la, lb])
    np.testing.assert_allclose(n.to_working(), [la, lb], atol=1e-12)


def test_zero_mass_logit_is_clamped():
    w = ZeroInflatedGamma(0.0, Gamma(1.0, 1.0)).to_working()
    assert np.isfinite(w).all()
    assert w[2] == pytest.approx(math.log(1e-10), rel=1e-6)


def test_dict_round_trip():
    for d in [Gamma(2.0, 3.0), ZeroInflatedGamma(0.02, Gamma(8.0, 0.2)), Normal(0.5, 1.5)]:
        assert density_from_dict(d.family, d.to_dict()) == d


def _emissions():
    return EmissionModel(
        ("a", "b"),
        (
            (Gamma(2.0, 1.0), Gamma(5.0, 0.5)),
            (ZeroInflatedGamma(0.3, Gamma(1.5, 0.5)), ZeroInflatedGamma(0.05, Gamma(4.0, 0.3))),
        ),
    )


def test_emission_log_density_is_sum_over_variables():
    em = _emissions()
    y = np.array([[1.0, 0.0], [3.0, 2.0], [np.nan, 4.0], [2.0, np.nan], [np.nan, np.nan]])
    out = em.log_density(y)
    for t in range(y.shape[0]):
        for i in range(2):
            expected = sum(
                row[i].log_pdf(y[t, r]) for r, row in enumerate(em.densities) if not np.isnan(y[t, r])
            )
            assert out[t, i] == pytest.approx(expected, rel=1e-13, abs=1e-13)
    np.testing.assert_array_equal(out[-1], 0.0)
    np.testing.assert_allclose(em.log_density(prepare_observations(y)), out)


def test_emission_validation():
    with pytest.raises(InvalidParameterError):
        EmissionModel(("a", "a"), ((Gamma(1, 1),), (Gamma(1, 1),)))
    with pytest.raises(InvalidParameterError):
        EmissionModel(("a",), ((Gamma(1, 1), Normal(0, 1)),))
    with pytest.raises(InvalidParameterError):
        _emissions().log_density(np.ones((3, 3)))
    with pytest.raises(DomainError):
        _emissions().log_density(np.array([[np.inf, 1.0]]))


def test_emission_round_trips_and_permute():
    em = _emissions()
    back = EmissionModel.from_working(em.to_working(), em.names, em.families, em.n_states)
    np.testing.assert_allclose(back.to_working(), em.to_working(), atol=1e-12)
    assert EmissionModel.from_dict(em.to_dict()) == em
    swapped = em.permute([1, 0])
    np.testing.assert_allclose(swapped.means(), em.means()[:, ::-1])
    y = np.array([[1.0, 0.0], [3.0, 2.0]])
    np.testing.assert_allclose(swapped.log_density(y), em.log_density(y)[:, ::-1])


def test_emission_sampling_matches_states():
    em = _emissions()
    rng = np.random.default_rng(0)
    states = np.repeat([0, 1], 20_000)
    y = em.sample(states, rng)
    assert y[:20_000, 0].mean() == pytest.approx(2.0, rel=0.03)
    assert y[20_000:, 0].mean() == pytest.approx(10.0, rel=0.03)
    assert np.mean(y[:20_000, 1] == 0) == pytest.approx(0.3, abs=0.015)
