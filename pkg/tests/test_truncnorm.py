import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from missarf import truncnorm


def test_half_normal_at_zero():
    assert truncnorm.pdf(0.0, 0.0, 1.0, 0.0, np.inf) == pytest.approx(2 * stats.norm.pdf(0), rel=1e-14)
    assert float(truncnorm.pdf(0.0, 0.0, 1.0, 0.0, np.inf)) == pytest.approx(0.7979, abs=1e-4)


def test_unbounded_is_plain_normal():
    x = np.linspace(-4, 4, 17)
    assert np.allclose(truncnorm.pdf(x, 0.5, 2.0, -np.inf, np.inf), stats.norm.pdf(x, 0.5, 2.0), rtol=1e-13)


def test_zero_outside_interval():
    assert truncnorm.pdf(2.0, 0.0, 1.0, -1.0, 1.0) == 0.0
    assert truncnorm.pdf(-1.5, 0.0, 1.0, -1.0, 1.0) == 0.0


bounds = st.tuples(st.floats(-5, 5), st.floats(0.05, 5))


@settings(max_examples=80, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3), bounds)
def test_integrates_to_one(mu, sigma, lw):
    lo, width = lw
    hi = lo + width
    val, _ = integrate.quad(lambda x: float(truncnorm.pdf(x, mu, sigma, lo, hi)), lo, hi,
                            epsabs=1e-12, epsrel=1e-12, limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3), bounds, st.floats(0.001, 0.999))
def test_ppf_and_mean_match_scipy(mu, sigma, lw, u):
    lo, width = lw
    hi = lo + width
    # degenerate intervals use the uniform fallback, tested separately
    assume(not truncnorm.degenerate(mu, sigma, lo, hi))
    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    ref = stats.truncnorm(a, b, loc=mu, scale=sigma)
    assert float(truncnorm.ppf(u, mu, sigma, lo, hi)) == pytest.approx(ref.ppf(u), rel=1e-7, abs=1e-9)
    assert float(truncnorm.mean(mu, sigma, lo, hi)) == pytest.approx(ref.mean(), rel=1e-7, abs=1e-9)
    x = float(truncnorm.ppf(u, mu, sigma, lo, hi))
    assert float(truncnorm.logpdf(x, mu, sigma, lo, hi)) == pytest.approx(ref.logpdf(x), rel=1e-8, abs=1e-8)


def test_far_tail_stays_inside_interval():
    # interval 30 SDs out: mass ~1e-198, still handled in log space
    x = truncnorm.ppf(np.array([0.01, 0.5, 0.99]), 0.0, 1.0, 30.0, 31.0)
    assert np.all((x >= 30.0) & (x <= 31.0))
    assert not bool(truncnorm.degenerate(0.0, 1.0, 30.0, 31.0))
    # exponential-tail approximation: mean excess is about 1/30
    m = float(truncnorm.mean(0.0, 1.0, 30.0, 31.0))
    assert m == pytest.approx(30.0 + 1 / 30, abs=2e-3)


def test_degenerate_interval_falls_back_to_uniform():
    mu, sigma, lo, hi = 0.0, 1.0, 1000.0, 1001.0
    assert bool(truncnorm.degenerate(mu, sigma, lo, hi))
    assert float(truncnorm.pdf(1000.5, mu, sigma, lo, hi)) == pytest.approx(1.0)
    assert float(truncnorm.ppf(0.25, mu, sigma, lo, hi)) == pytest.approx(1000.25)
    assert float(truncnorm.mean(mu, sigma, lo, hi)) == pytest.approx(1000.5)
    assert not bool(truncnorm.degenerate(0.0, 1.0, -1.0, 1.0))
