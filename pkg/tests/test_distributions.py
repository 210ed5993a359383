import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hgnb.distributions import (
    RngStream,
    crt_mean,
    gaussian_conditional,
    pg_laplace,
    pg_mean,
    pg_var,
    sample_bernoulli,
    sample_categorical,
    sample_crt,
    sample_gamma,
    sample_mvn_cholesky,
    sample_negative_binomial,
    sample_polya_gamma,
)
from hgnb.errors import NumericalError
from hgnb.model import nb_log_pmf


def gen(seed=0):
    return np.random.default_rng(seed)


# --- RngStream --------------------------------------------------------------


def test_stream_reproducible_and_distinct():
    a = RngStream(7, (1, 2)).generator().random(5)
    b = RngStream(7, (1, 2)).generator().random(5)
    c = RngStream(7, (1, 3)).generator().random(5)
    d = RngStream(8, (1, 2)).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    assert RngStream(7).child(1, 2) == RngStream(7, (1, 2))


def test_stream_rejects_out_of_range():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(0, (2**64,))


# --- gamma ------------------------------------------------------------------


def test_gamma_tiny_shape_mean():
    x = sample_gamma(0.01, 100.0, gen(1), size=10**7)
    assert x.mean() == pytest.approx(1.0, rel=0.02)
    assert np.all(x > 0)


def test_gamma_variance():
    x = sample_gamma(2.0, 3.0, gen(2), size=10**6)
    assert x.var() == pytest.approx(18.0, rel=0.02)


def test_gamma_shape_one_is_exponential():
    x = sample_gamma(1.0, 1.0, gen(3), size=10**5)
    assert stats.kstest(x, "expon").pvalue > 0.01


@pytest.mark.parametrize("a", [0.05, 0.3, 0.9])
def test_gamma_small_shape_distribution(a):
    x = sample_gamma(a, 2.0, gen(4), size=10**5)
    # compare on the log scale, where small shapes have their mass
    assert stats.kstest(x, stats.gamma(a, scale=2.0).cdf).pvalue > 0.01


def test_gamma_broadcast_and_scalar():
    assert np.ndim(sample_gamma(0.5, 1.0, gen())) == 0
    assert sample_gamma(np.array([0.5, 2.0]), np.array([[1.0], [2.0]]), gen()).shape == (2, 2)


@pytest.mark.parametrize("shape,scale", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (np.nan, 1.0)])
def test_gamma_domain(shape, scale):
    with pytest.raises(ValueError):
        sample_gamma(shape, scale, gen())


def test_gamma_reproducible_from_stream():
    s = RngStream(3, (4,))
    assert np.array_equal(sample_gamma(0.2, 1.0, s, size=10), sample_gamma(0.2, 1.0, s, size=10))


# --- CRT --------------------------------------------------------------------


def test_crt_trivial():
    g = gen()
    assert np.all(sample_crt(np.zeros(100, int), 2.0, g) == 0)
    assert np.all(sample_crt(np.ones(100, int), np.linspace(0.01, 50, 100), g) == 1)


def test_crt_mean_n3_r1():
    x = sample_crt(np.full(10**6, 3), 1.0, gen(5))
    assert x.mean() == pytest.approx(1 + 1 / 2 + 1 / 3, rel=0.005)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 300), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_crt_bounds(n, r, seed):
    x = sample_crt(np.full(50, n), r, gen(seed))
    assert np.all(x >= min(n, 1)) and np.all(x <= n)


def test_crt_large_counts_chunked():
    # counts above the chunk size are still summed exactly
    n = np.array([3_000_000, 5])
    x = sample_crt(n, 2.0, gen(6))
    m = crt_mean(3_000_000, 2.0)
    assert abs(x[0] - m) < 6 * math.sqrt(m)
    assert 1 <= x[1] <= 5


def test_crt_analytic_mean_formula():
    assert crt_mean(3, 1.0) == pytest.approx(11 / 6)
    assert crt_mean(0, 1.0) == 0.0


def test_crt_domain():
    with pytest.raises(ValueError):
        sample_crt(3, 0.0, gen())
    with pytest.raises(ValueError):
        sample_crt(-1, 1.0, gen())


# --- Polya-Gamma ------------------------------------------------------------


def pg_var_mp(b, c):
    with mp.workdps(60):
        c = mp.mpf(c)
        if c == 0:
            return mp.mpf(b) / 24
        return b * (mp.sinh(c) - c) / (4 * c**3) / mp.cosh(c / 2) ** 2


@pytest.mark.parametrize("c", [0.0, 1e-6, 0.05, 0.0999, 0.1, 0.5, 2.0, 10.0, 300.0])
def test_pg_moment_formulas(c):
    assert pg_mean(1.0, c) == pytest.approx(0.25 if c == 0 else math.tanh(c / 2) / (2 * c), rel=1e-12)
    assert pg_var(2.0, c) == pytest.approx(float(pg_var_mp(2, c)), rel=1e-10)


def test_pg_variance_matches_log_laplace_derivative():
    # var = d^2/dt^2 log E exp(-t w) at t = 0
    for c in (0.0, 1.5):
        def f(t):
            return mp.log(mp.cosh(mp.mpf(c) / 2) ** 2 / mp.cosh(mp.sqrt(mp.mpf(c) ** 2 / 4 + t / 2)) ** 2)

        with mp.workdps(40):
            d1 = mp.diff(f, 0, 1, direction=1)
            d2 = mp.diff(f, 0, 2, direction=1)
        assert float(d2) == pytest.approx(pg_var(2.0, c), rel=1e-8)
        assert float(-d1) == pytest.approx(pg_mean(2.0, c), rel=1e-8)


def test_pg_zero_tilt_means():
    for b in (0.5, 1.0, 2.0, 10.0):
        w = sample_polya_gamma(np.full(2 * 10**5, b), 0.0, gen(7), terms=50)
        assert w.mean() == pytest.approx(b / 4, rel=0.01)


def test_pg_b2_c1_mean():
    w = sample_polya_gamma(np.full(2 * 10**5, 2.0), 1.0, gen(8), terms=50)
    assert w.mean() == pytest.approx(math.tanh(0.5), rel=0.01)


def test_pg_symmetric_in_c():
    w1 = sample_polya_gamma(np.full(10**5, 1.5), 2.0, gen(9), terms=50)
    w2 = sample_polya_gamma(np.full(10**5, 1.5), -2.0, gen(10), terms=50)
    assert stats.ks_2samp(w1, w2).pvalue > 0.01


@pytest.mark.parametrize("terms", [1, 3, 200])
def test_pg_tail_correction_keeps_two_moments(terms):
    b, c = 3.0, 1.2
    w = sample_polya_gamma(np.full(4 * 10**5, b), c, gen(11), terms=terms)
    se = math.sqrt(pg_var(b, c) / w.size)
    assert abs(w.mean() - pg_mean(b, c)) < 4 * se
    assert w.var() == pytest.approx(pg_var(b, c), rel=0.03)


def test_pg_laplace_transform():
    b, c = 2.0, 1.0
    w = sample_polya_gamma(np.full(2 * 10**5, b), c, gen(12), terms=100)
    for t in (0.1, 1.0):
        assert np.exp(-t * w).mean() == pytest.approx(pg_laplace(b, c, t), rel=0.01)


def test_pg_strictly_positive_and_shapes():
    w = sample_polya_gamma(np.array([[0.01, 5.0], [100.0, 1.0]]), np.array([0.0, 30.0]), gen(13), terms=5)
    assert w.shape == (2, 2) and np.all(w > 0)
    assert np.ndim(sample_polya_gamma(1.0, 0.0, gen(), terms=5)) == 0


@pytest.mark.parametrize("b,c", [(0.0, 1.0), (-1.0, 1.0), (1.0, np.inf), (np.nan, 0.0)])
def test_pg_domain(b, c):
    with pytest.raises(ValueError):
        sample_polya_gamma(b, c, gen())


# --- multivariate normal ----------------------------------------------------


def test_mvn_prior_only_identity():
    g = gen(14)
    draws = np.array([sample_mvn_cholesky(np.zeros(3), np.ones(3), None, g) for _ in range(10**5)])
    np.testing.assert_allclose(np.cov(draws.T), np.eye(3), atol=0.02)


def test_mvn_rank_one_update_matches_adjugate():
    prior = np.array([1.0, 2.0])
    x = np.array([0.7, -1.2])
    w = 1.5
    data = w * np.outer(x, x)
    a, b, c, d = (np.diag(prior) + data).ravel()
    cov = np.array([[d, -b], [-c, a]]) / (a * d - b * c)
    linear = np.array([0.4, 0.9])
    mean_ref = cov @ linear
    mean, L = gaussian_conditional(prior, data, linear)
    np.testing.assert_allclose(mean, mean_ref, rtol=1e-12)
    Linv = np.linalg.inv(L)
    np.testing.assert_allclose(Linv.T @ Linv, cov, rtol=1e-12)
    g = gen(15)
    draws = np.array([sample_mvn_cholesky(mean_ref, prior, data, g) for _ in range(10**5)])
    np.testing.assert_allclose(draws.mean(0), mean_ref, atol=4 * np.sqrt(np.diag(cov) / 1e5).max())
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.03, atol=0.005)


def test_mvn_deterministic_with_stream():
    s = RngStream(1, (2,))
    a = sample_mvn_cholesky(np.ones(2), np.ones(2), np.eye(2), s)
    assert np.array_equal(a, sample_mvn_cholesky(np.ones(2), np.ones(2), np.eye(2), s))


def test_mvn_non_spd_reports_index():
    prec = np.stack([np.eye(2), -np.eye(2)])
    with pytest.raises(NumericalError, match="gene 11"):
        gaussian_conditional(np.zeros(2), prec, np.zeros((2, 2)), index_name="gene", index_offset=10)


# --- discrete ---------------------------------------------------------------


def test_nb_mean():
    x = sample_negative_binomial(2.0, 0.5, gen(16), size=10**6)
    assert x.mean() == pytest.approx(2.0, rel=0.01)


def test_nb_zero_fraction():
    x = sample_negative_binomial(1.0, 0.1, gen(17), size=10**6)
    assert np.mean(x == 0) == pytest.approx(0.9, rel=0.01)


def test_nb_pmf_matches_model_pmf():
    N = 10**6
    x = sample_negative_binomial(1.5, 0.3, gen(18), size=N)
    for n in range(11):
        p = math.exp(nb_log_pmf(n, 1.5, 0.3))
        assert abs(np.mean(x == n) - p) < 3 * math.sqrt(p * (1 - p) / N) + 1e-12


def test_nb_domain():
    with pytest.raises(ValueError):
        sample_negative_binomial(1.0, 1.0, gen())
    with pytest.raises(ValueError):
        sample_negative_binomial(0.0, 0.5, gen())
    assert np.all(sample_negative_binomial(1.0, 0.0, gen(), size=10) == 0)


def test_bernoulli_and_categorical():
    g = gen(19)
    assert sample_bernoulli(0.3, g, size=10**5).mean() == pytest.approx(0.3, abs=0.005)
    c = sample_categorical([0.2, 0.8], g, size=10**5)
    assert np.mean(c == 1) == pytest.approx(0.8, abs=0.005)
    with pytest.raises(ValueError):
        sample_bernoulli(1.5, g)
    with pytest.raises(ValueError):
        sample_categorical([0.0, 0.0], g)
