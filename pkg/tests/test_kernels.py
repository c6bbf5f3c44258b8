import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from armapp.kernels import (
    ImmigrationIntensity,
    Kernel,
    MarkDistribution,
    immigration_mass,
    immigration_mass_upto,
    immigration_value,
    kernel_eval,
    kernel_mass_upto,
    mark_log_density,
    sample_density,
    sample_immigration,
    sample_mark,
)


class TestKernelEval:
    def test_density_at_origin_equals_rate(self):
        assert kernel_eval(Kernel(mass=1, rate=2), 0.0) == 2.0

    def test_zero_mass(self):
        assert kernel_eval(Kernel(mass=0, rate=1), 0.7) == 0.0

    def test_direct_evaluation(self):
        # 4 * 10 * exp(-1); cross-checked below by quadrature of the density
        val = kernel_eval(Kernel(mass=4, rate=10), 0.1)
        assert val == pytest.approx(14.715177646857693, rel=1e-12)
        total, _ = integrate.quad(lambda s: kernel_eval(Kernel(mass=1, rate=10), s), 0, np.inf)
        assert total == pytest.approx(1.0, rel=1e-9)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            kernel_eval(Kernel(mass=1, rate=1), -0.1)

    def test_vectorized(self):
        t = np.array([0.0, 1.0, 2.0])
        out = kernel_eval(Kernel(mass=3, rate=0.5), t)
        assert out.shape == (3,)
        assert out[0] == pytest.approx(1.5)


class TestKernelMassUpto:
    def test_total_mass(self):
        assert kernel_mass_upto(Kernel(mass=1, rate=1), 1e9) == pytest.approx(1.0)

    def test_empty_interval(self):
        assert kernel_mass_upto(Kernel(mass=7, rate=3), 0.0) == 0.0

    def test_quadrature_oracle(self):
        k = Kernel(mass=5, rate=2)
        expect, _ = integrate.quad(lambda s: kernel_eval(k, s), 0, 1)
        assert kernel_mass_upto(k, 1.0) == pytest.approx(expect, rel=1e-10)
        assert kernel_mass_upto(k, 1.0) == pytest.approx(4.323323583816936, rel=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            kernel_mass_upto(Kernel(mass=1, rate=1), -1.0)

    @given(
        mass=st.floats(0.01, 50),
        rate=st.floats(0.01, 50),
    )
    @settings(max_examples=25, deadline=None)
    def test_quadrature_matches_at_40_over_rate(self, mass, rate):
        k = Kernel(mass=mass, rate=rate)
        upper = 40.0 / rate
        got = kernel_mass_upto(k, upper)
        expect, _ = integrate.quad(lambda s: kernel_eval(k, s), 0, upper)
        assert got == pytest.approx(expect, rel=1e-6)

    def test_nondecreasing_on_grid(self):
        k = Kernel(mass=2.5, rate=0.7)
        grid = np.linspace(0, 30, 400)
        vals = kernel_mass_upto(k, grid)
        assert np.all(np.diff(vals) >= 0)


class TestSampling:
    def test_empty(self):
        rng = np.random.default_rng(0)
        assert sample_density(Kernel(mass=1, rate=2), rng, 0).size == 0

    def test_moments(self):
        rng = np.random.default_rng(1234)
        x = sample_density(Kernel(mass=1, rate=2), rng, 10**6)
        assert 0.497 <= x.mean() <= 0.503
        assert 0.2475 <= x.var() <= 0.2525
        assert np.all(x > 0)

    def test_ks_against_exponential(self):
        rng = np.random.default_rng(99)
        x = sample_density(Kernel(mass=3, rate=1.7), rng, 10**4)
        res = stats.kstest(x, stats.expon(scale=1 / 1.7).cdf)
        assert res.pvalue > 0.01


class TestMarks:
    def test_constant(self):
        rng = np.random.default_rng(0)
        assert sample_mark(MarkDistribution(), rng) == 1.0

    def test_exponential_mean(self):
        rng = np.random.default_rng(7)
        m = MarkDistribution(family="exponential", mean=4.0)
        y = sample_mark(m, rng, 10**6)
        assert 3.988 <= y.mean() <= 4.012
        assert np.all(y > 0)

    def test_log_density(self):
        m = MarkDistribution(family="exponential", mean=2.0)
        assert mark_log_density(m, 2.0)[0] == pytest.approx(-np.log(2) - 1)
        assert mark_log_density(MarkDistribution(), 1.0)[0] == 0.0

    def test_constant_mean_must_be_one(self):
        with pytest.raises(ValueError):
            MarkDistribution(family="constant", mean=2.0)


class TestImmigration:
    def test_constant_mass(self):
        assert immigration_mass(ImmigrationIntensity.constant(0.1), 100.0) == pytest.approx(10.0)

    def test_piecewise_mass(self):
        mu = ImmigrationIntensity([1.0, 2.0], [5.0])
        assert immigration_mass(mu, 10.0) == pytest.approx(15.0)

    def test_zero(self):
        assert immigration_mass(ImmigrationIntensity.constant(0.0), 42.0) == 0.0

    def test_mass_upto(self):
        mu = ImmigrationIntensity([1.0, 2.0], [5.0])
        assert immigration_mass_upto(mu, 5.0, 10.0) == pytest.approx(5.0)
        assert immigration_mass_upto(mu, 7.0, 10.0) == pytest.approx(9.0)

    def test_value_and_burnin_extension(self):
        mu = ImmigrationIntensity([1.0, 2.0], [5.0])
        assert immigration_value(mu, -3.0) == 1.0
        assert immigration_value(mu, 6.0) == 2.0

    def test_breakpoints_validated(self):
        with pytest.raises(ValueError):
            ImmigrationIntensity([1.0, 2.0], [5.0, 5.0, 6.0])
        with pytest.raises(ValueError):
            ImmigrationIntensity([1.0], [3.0])
        with pytest.raises(ValueError):
            immigration_mass(ImmigrationIntensity([1.0, 2.0], [5.0]), 4.0)

    def test_sampling_counts(self):
        rng = np.random.default_rng(5)
        mu = ImmigrationIntensity([2.0, 0.5], [50.0])
        counts = [sample_immigration(mu, 100.0, rng).size for _ in range(2000)]
        # total mass 2*50 + 0.5*50 = 125
        assert np.mean(counts) == pytest.approx(125.0, abs=3 * np.sqrt(125 / 2000))

    def test_sampling_burnin_window(self):
        rng = np.random.default_rng(5)
        times = sample_immigration(ImmigrationIntensity.constant(1.0), 10.0, rng, t_start=-20.0)
        assert np.all(times > -20.0) and np.all(times <= 10.0)
        assert times.size > 0
        assert np.all(np.diff(times) >= 0)


class TestHistogram:
    def test_equal_pieces(self):
        mu = ImmigrationIntensity.histogram([1.0, 2.0, 3.0, 4.0], 8.0)
        assert np.allclose(mu.breakpoints, [2.0, 4.0, 6.0])
        assert immigration_mass(mu, 8.0) == pytest.approx(20.0)
