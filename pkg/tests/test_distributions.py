import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from lfdrmm.distributions import (
    central_chisq1_cdf,
    central_chisq1_sf,
    noncentral_chisq1_logpdf,
    noncentral_chisq1_pdf,
    sample_noncentral_chisq1,
    std_normal_cdf,
    std_normal_quantile,
    student_t_cdf,
)
from lfdrmm.errors import DomainError


def poisson_series_pdf(x, lam, rtol=1e-12):
    """Noncentral chi-square(1) density as a Poisson mixture of central chi-square(1 + 2j)."""
    total = 0.0
    j = 0
    while True:
        k = 1 + 2 * j
        log_w = -lam / 2 + (j * math.log(lam / 2) if lam > 0 else 0.0) - math.lgamma(j + 1)
        log_f = (k / 2 - 1) * math.log(x) - x / 2 - (k / 2) * math.log(2) - math.lgamma(k / 2)
        term = math.exp(log_w + log_f)
        total += term
        if lam == 0 or (j > lam / 2 and term < rtol * total):
            return total
        j += 1


def mp_pdf(x, lam):
    x, lam = mpmath.mpf(x), mpmath.mpf(lam)
    s, a = mpmath.sqrt(x), mpmath.sqrt(lam)
    return (mpmath.exp(-(s - a) ** 2 / 2) + mpmath.exp(-(s + a) ** 2 / 2)) / (
        2 * mpmath.sqrt(2 * mpmath.pi * x))


def lentz_betainc(a, b, x, eps=1e-16, max_iter=500):
    """Regularized incomplete beta by the classical continued fraction (modified Lentz)."""
    if x == 0 or x == 1:
        return x
    if x > (a + 1) / (a + b + 2):
        return 1.0 - lentz_betainc(b, a, 1 - x, eps, max_iter)
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log1p(-x)) / a
    tiny = 1e-300
    f, c, d = 1.0, 1.0, 0.0
    for i in range(max_iter * 2 + 1):
        m = i // 2
        if i == 0:
            num = 1.0
        elif i % 2 == 0:
            num = m * (b - m) * x / ((a + 2 * m - 1) * (a + 2 * m))
        else:
            num = -((a + m) * (a + b + m) * x) / ((a + 2 * m) * (a + 2 * m + 1))
        d = 1.0 + num * d
        d = tiny if abs(d) < tiny else d
        d = 1.0 / d
        c = 1.0 + num / c
        c = tiny if abs(c) < tiny else c
        f *= c * d
        if abs(1.0 - c * d) < eps:
            return front * (f - 1.0)
    raise RuntimeError("continued fraction did not converge")


def t_cdf_oracle(t, df):
    w = df / (df + t * t)
    lower = 0.5 * lentz_betainc(df / 2, 0.5, w)
    return 1.0 - lower if t > 0 else lower


class TestNoncentralPdf:
    def test_central_closed_form(self):
        assert noncentral_chisq1_pdf(1.0, 0.0) == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-15)
        assert noncentral_chisq1_pdf(1.0, 0.0) == pytest.approx(0.241971, abs=1e-6)

    @given(st.floats(1e-6, 500), st.floats(0, 200))
    def test_folded_normal_identity(self, x, lam):
        s, a = math.sqrt(x), math.sqrt(lam)
        phi = lambda v: math.exp(-v * v / 2) / math.sqrt(2 * math.pi)  # noqa: E731
        expected = 0.5 * (phi(s - a) + phi(s + a)) / s
        assert noncentral_chisq1_pdf(x, lam) == pytest.approx(expected, rel=1e-12, abs=1e-300)

    def test_poisson_series_oracle(self):
        expected = poisson_series_pdf(4.0, 16.44)
        assert expected == pytest.approx(float(mp_pdf(4, 16.44)), rel=1e-12)
        assert noncentral_chisq1_pdf(4.0, 16.44) == pytest.approx(expected, rel=1e-11)

    @pytest.mark.parametrize("x,lam", [(0.01, 1.0), (1.0, 4.524), (10.0, 2.0), (30.0, 21.9274)])
    def test_series_oracle_grid(self, x, lam):
        assert noncentral_chisq1_pdf(x, lam) == pytest.approx(poisson_series_pdf(x, lam), rel=1e-11)

    def test_vectorized(self):
        x = np.array([0.5, 1.0, 2.0])
        out = noncentral_chisq1_pdf(x, 3.0)
        assert out.shape == (3,)
        assert out[1] == noncentral_chisq1_pdf(1.0, 3.0)

    @pytest.mark.parametrize("x", [0.0, -1.0, math.nan])
    def test_domain(self, x):
        with pytest.raises(DomainError):
            noncentral_chisq1_pdf(x, 1.0)

    def test_negative_lambda(self):
        with pytest.raises(DomainError):
            noncentral_chisq1_pdf(1.0, -0.1)


class TestLogPdf:
    def test_central(self):
        assert noncentral_chisq1_logpdf(1.0, 0.0) == pytest.approx(math.log(0.24197072451914337), rel=1e-14)

    @given(st.floats(1e-8, 1000), st.floats(0, 300))
    def test_consistent_with_pdf(self, x, lam):
        pdf = noncentral_chisq1_pdf(x, lam)
        if pdf > 1e-290:
            assert math.exp(noncentral_chisq1_logpdf(x, lam)) == pytest.approx(pdf, rel=1e-12)

    def test_no_overflow(self):
        val = noncentral_chisq1_logpdf(5000.0, 30.0)
        assert math.isfinite(val)
        assert val == pytest.approx(float(mpmath.log(mp_pdf(5000, 30))), rel=1e-13)

    @pytest.mark.parametrize("x,lam", [(1e-10, 5.0), (400.0, 380.0), (1e5, 1e5), (2.5, 0.0)])
    def test_extended_precision(self, x, lam):
        with mpmath.workdps(40):
            expected = float(mpmath.log(mp_pdf(x, lam)))
        assert noncentral_chisq1_logpdf(x, lam) == pytest.approx(expected, rel=1e-13, abs=1e-13)


class TestNormalization:
    @pytest.mark.parametrize("lam", [0.0, 1.0, 4.524, 16.44, 50.0])
    def test_integrates_to_one(self, lam):
        # substitute x = s^2 to remove the 1/sqrt(x) pole: f(s^2) * 2s ds
        g = lambda s: noncentral_chisq1_pdf(s * s, lam) * 2 * s if s > 0 else 2 * math.exp(-lam / 2) / math.sqrt(2 * math.pi)  # noqa: E731
        val, err = integrate.quad(g, 0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)
        assert abs(val - 1.0) < 1e-8


class TestMomentIdentities:
    @pytest.mark.parametrize("lam", [0.0, 4.524, 16.44])
    def test_monte_carlo_moments(self, lam):
        rng = np.random.default_rng(20240601)
        x = sample_noncentral_chisq1(rng, lam, 1_000_000)
        n = x.size
        for sample, expected in ((x, 1 + lam), (x * x, lam ** 2 + 6 * lam + 3)):
            se = sample.std(ddof=1) / math.sqrt(n)
            assert abs(sample.mean() - expected) < 4 * se


class TestChisqTail:
    def test_zero(self):
        assert central_chisq1_sf(0.0) == 1.0

    def test_five_percent(self):
        assert central_chisq1_sf(3.841459) == pytest.approx(0.05, rel=1e-6)

    def test_genome_wide_threshold(self):
        # exact 1 - 5e-8 quantile of chi2_1, from mpmath root finding
        assert central_chisq1_sf(29.71678548976306) == pytest.approx(5e-8, rel=1e-10)
        # the rounded quantile 29.7168 sits 7.5e-6 (relative) below 5e-8
        assert central_chisq1_sf(29.7168) == pytest.approx(4.999962574807079e-08, rel=1e-10)
        assert central_chisq1_sf(29.7168) == pytest.approx(5e-8, rel=1e-5)

    @pytest.mark.parametrize("x", [1e-8, 0.3, 1.0, 7.5, 29.7, 80.0, 150.0, 299.0, 300.0])
    def test_relative_accuracy_against_erfc_oracle(self, x):
        with mpmath.workdps(50):
            expected = float(mpmath.erfc(mpmath.sqrt(mpmath.mpf(x) / 2)))
        assert central_chisq1_sf(x) == pytest.approx(expected, rel=1e-10)

    def test_strictly_decreasing(self):
        x = np.linspace(0, 300, 30001)
        sf = central_chisq1_sf(x)
        assert np.all(np.diff(sf) < 0)
        far = central_chisq1_sf(np.linspace(300, 1400, 1101))
        assert np.all(np.diff(far) <= 0)

    def test_sf_plus_cdf(self):
        x = np.linspace(0, 40, 4001)
        np.testing.assert_allclose(central_chisq1_sf(x) + central_chisq1_cdf(x), 1.0, atol=1e-12)

    def test_negative(self):
        with pytest.raises(DomainError):
            central_chisq1_sf(-1e-3)


class TestNormal:
    def test_center(self):
        assert std_normal_cdf(0.0) == 0.5

    def test_round_trip(self):
        assert std_normal_quantile(std_normal_cdf(1.96)) == pytest.approx(1.96, abs=1e-10)

    def test_lower_tail(self):
        assert std_normal_cdf(-8.0) == pytest.approx(0.5 * math.erfc(8 / math.sqrt(2)), rel=1e-8)

    def test_mutual_inverse(self):
        p = np.concatenate([np.logspace(-15, -1, 300), np.linspace(0.1, 0.9, 300),
                            1 - np.logspace(-1, -15, 300)])
        np.testing.assert_allclose(std_normal_cdf(std_normal_quantile(p)), p, rtol=0, atol=1e-10)
        z = np.linspace(-7.9, 5.0, 1000)  # cdf saturates near 1 above this
        np.testing.assert_allclose(std_normal_quantile(std_normal_cdf(z)), z, atol=1e-7)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_domain(self, p):
        with pytest.raises(DomainError):
            std_normal_quantile(p)


class TestStudentT:
    @pytest.mark.parametrize("df", [0.5, 1, 3, 100, 1e6])
    def test_center(self, df):
        assert student_t_cdf(0.0, df) == 0.5

    def test_large_df_approaches_normal(self):
        t = np.linspace(-4, 4, 81)
        np.testing.assert_allclose(student_t_cdf(t, 1e6), std_normal_cdf(t), atol=1e-4)

    def test_continued_fraction_oracle(self):
        expected = t_cdf_oracle(2.0, 100.0)
        with mpmath.workdps(30):
            mp_val = mpmath.quad(lambda u: mpmath.gamma(50.5) / (mpmath.sqrt(100 * mpmath.pi) * mpmath.gamma(50))
                                 * (1 + u * u / 100) ** -50.5, [-mpmath.inf, 0, 2])
        assert expected == pytest.approx(float(mp_val), abs=1e-13)
        assert student_t_cdf(2.0, 100.0) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("t,df", [(-3.3, 5.0), (0.7, 2.5), (10.0, 100.0), (-1.2, 1.0)])
    def test_oracle_grid(self, t, df):
        assert student_t_cdf(t, df) == pytest.approx(t_cdf_oracle(t, df), abs=1e-12)

    @given(st.floats(-50, 50), st.floats(0.1, 1e4))
    @settings(max_examples=200)
    def test_symmetry(self, t, df):
        assert student_t_cdf(-t, df) == pytest.approx(1 - student_t_cdf(t, df), abs=1e-14)

    def test_df_domain(self):
        with pytest.raises(DomainError):
            student_t_cdf(1.0, 0.0)
