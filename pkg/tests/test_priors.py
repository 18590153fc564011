import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memcal.errors import DomainError
from memcal.priors import (
    PriorBank,
    PriorFamily,
    bregman_divergence,
    chi2_distance,
    conjugate,
    dissimilarity,
    exponential_prior,
    gaussian_prior,
    poisson_prior,
    priors_for,
)

BUILTINS = {
    "gaussian": lambda: gaussian_prior(0.7),
    "exponential": exponential_prior,
    "poisson": poisson_prior,
}


def grid(prior, size=100):
    hi = 0.95 if prior.domain_upper == 1.0 else 3.0
    return np.linspace(-3.0, hi, size)


# closed-form examples


def test_gaussian_examples():
    assert gaussian_prior(1.0).cramer(np.array(1.0)) == 0.0
    assert gaussian_prior(0.5).log_laplace(np.array(2.0)) == pytest.approx(3.0)
    assert gaussian_prior(2.0).cramer(np.array(3.0)) == pytest.approx(1.0)


@pytest.mark.parametrize("v", [0.0, -1.0, np.inf])
def test_gaussian_rejects_bad_variance(v):
    with pytest.raises(ValueError):
        gaussian_prior(v)


def test_exponential_examples():
    p = exponential_prior()
    assert p.cramer(np.array(1.0)) == pytest.approx(0.0, abs=1e-15)
    assert p.cramer(np.array(math.e)) == pytest.approx(math.e - 2)
    assert p.dlog_laplace(np.array(0.5)) == pytest.approx(2.0)
    assert p.dcramer(np.array(2.0)) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        p.log_laplace(np.array(1.0))
    with pytest.raises(DomainError):
        p.cramer(np.array(0.0))


def test_poisson_examples():
    p = poisson_prior()
    assert p.cramer(np.array(1.0)) == pytest.approx(0.0, abs=1e-15)
    assert p.cramer(np.array(math.e)) == pytest.approx(1.0)
    assert p.cramer(np.array(0.0)) == 1.0
    assert p.dlog_laplace(np.array(0.0)) == 1.0
    with pytest.raises(DomainError):
        p.cramer(np.array(-0.1))


# normalisation and convexity


@pytest.mark.parametrize("name", BUILTINS)
def test_normalisation(name):
    p = BUILTINS[name]()
    z = np.array(0.0)
    assert p.log_laplace(z) == pytest.approx(0.0, abs=1e-15)
    assert p.dlog_laplace(z) == pytest.approx(1.0, abs=1e-15)
    assert p.d2log_laplace(z) == pytest.approx(p.variance)
    assert p.cramer(np.array(1.0)) == pytest.approx(0.0, abs=1e-15)
    assert p.dcramer(np.array(1.0)) == pytest.approx(0.0, abs=1e-15)
    assert np.all(p.d2log_laplace(grid(p)) > 0)


@pytest.mark.parametrize("name", BUILTINS)
def test_conjugacy_grid(name):
    p = BUILTINS[name]()
    s = grid(p)
    back = p.dcramer(p.dlog_laplace(s))
    np.testing.assert_allclose(back, s, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("name", BUILTINS)
def test_fenchel_young(name):
    p = BUILTINS[name]()
    s = grid(p)
    t_eq = p.dlog_laplace(s)
    lhs = p.log_laplace(s) + p.cramer(t_eq)
    np.testing.assert_allclose(lhs, s * t_eq, rtol=1e-9, atol=1e-12)
    ts = np.linspace(0.05, 4.0, 37)
    S, T = np.meshgrid(s, ts)
    assert np.all(p.log_laplace(S) + p.cramer(T) >= S * T - 1e-12)


@pytest.mark.parametrize("name", BUILTINS)
def test_numerical_conjugate_matches_closed_form(name):
    p = BUILTINS[name]()
    bare = PriorFamily(
        label="bare",
        log_laplace=p.log_laplace,
        dlog_laplace=p.dlog_laplace,
        d2log_laplace=p.d2log_laplace,
        domain_upper=p.domain_upper,
        support_interior=p.support_interior,
    )
    t = np.linspace(0.2, 3.5, 25)
    val, s = conjugate(bare, t)
    np.testing.assert_allclose(val, p.cramer(t), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(s, p.dcramer(t), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(bare.cramer_at(t), p.cramer(t), rtol=1e-9, atol=1e-12)


def test_numerical_conjugate_domain_error():
    bare = PriorFamily("bare", np.expm1, np.exp, np.exp, support_interior=(0.0, math.inf))
    with pytest.raises(DomainError):
        conjugate(bare, [-1.0])


# Bregman divergence


def test_bregman_examples():
    assert bregman_divergence(exponential_prior(), [2.0], [1.0]) == pytest.approx(1 - math.log(2))
    assert bregman_divergence(gaussian_prior(1.0), [3.0], [1.0]) == pytest.approx(2.0)
    for p in BUILTINS.values():
        assert bregman_divergence(p(), [0.3, 2.0], [0.3, 2.0]) == 0.0


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(sorted(BUILTINS)),
    st.lists(st.floats(0.05, 5.0), min_size=1, max_size=6),
    st.lists(st.floats(0.05, 5.0), min_size=6, max_size=6),
)
def test_bregman_nonnegative(name, w, d):
    p = BUILTINS[name]()
    w = np.array(w)
    d = np.array(d[: w.size])
    val = bregman_divergence(p, w, d)
    assert val >= 0
    if np.max(np.abs(w - d)) > 1e-3:
        assert val > 0


# dissimilarity


def test_dissimilarity_examples():
    pi = np.array([0.5, 0.5])
    for name in BUILTINS:
        assert dissimilarity(priors_for(name, pi), pi, [2.0, 2.0]) == pytest.approx(0.0, abs=1e-15)
    g = priors_for("gaussian", pi, np.ones(2))
    w = np.array([4.0, 2.0])
    # Lambda*(t) = (t-1)^2/(2v), so the classical chi-square distance is twice the sum
    assert dissimilarity(g, pi, w) == pytest.approx(1.0)
    assert chi2_distance(pi, w) == pytest.approx(2.0)
    assert 2 * dissimilarity(g, pi, w) == pytest.approx(chi2_distance(pi, w))
    assert dissimilarity(poisson_prior(), [0.5], [2.0]) == pytest.approx(0.0, abs=1e-15)


def test_dissimilarity_matches_named_distances():
    rng = np.random.default_rng(3)
    pi = rng.uniform(0.1, 0.9, 8)
    w = rng.uniform(0.5, 3.0, 8) / pi
    t = pi * w
    assert dissimilarity(poisson_prior(), pi, w) == pytest.approx(np.sum(t * np.log(t) - t + 1))
    # D2 = sum(-log t + t) differs by the constant n
    d2 = np.sum(-np.log(t) + t)
    assert dissimilarity(exponential_prior(), pi, w) == pytest.approx(d2 - pi.size)


def test_prior_bank_mixed():
    pri = [gaussian_prior(0.5), poisson_prior(), exponential_prior()]
    bank = PriorBank(pri, 3)
    s = np.array([0.2, 0.2, 0.2])
    np.testing.assert_allclose(bank.dlog_laplace(s), [1.1, math.exp(0.2), 1.25])
    assert bank.bounded_domain
    assert bank.labels() == ["exponential", "gaussian", "poisson"]
    with pytest.raises(ValueError):
        PriorBank(pri, 4)


def test_priors_for_unknown():
    with pytest.raises(ValueError):
        priors_for("cauchy", [0.5])
