import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from spdelab import density as dn
from spdelab.kernels import make_model
from spdelab.simulator import simulate_linear_exact
from spdelab.hypotheses import compute_g


def _grid(fn, lo=-3.0, hi=3.0, n=6000):
    return dn.GridFunction.sample(fn, lo, hi, n)


class TestGridFunction:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            dn.GridFunction(0.0, 0.1, [1.0, np.nan])
        with pytest.raises(ValueError):
            dn.GridFunction(0.0, 0.0, [1.0])

    def test_l1(self):
        f = _grid(lambda x: np.where(np.abs(x) < 1, -1.0, 0.0))
        assert f.l1() == pytest.approx(2.0)


class TestFiniteDifference:
    def test_constant_is_annihilated(self):
        f = _grid(lambda x: np.full_like(x, 3.7))
        for n in (1, 2, 5):
            assert np.max(np.abs(dn.finite_difference(f, 10 * f.dx, n).values)) <= 1e-12

    def test_quadratic(self):
        f = _grid(lambda x: x ** 2)
        h = 25 * f.dx
        assert dn.finite_difference(f, h, 2).values == pytest.approx(2 * h * h, rel=1e-9)

    def test_explicit_formula(self):
        f = _grid(np.sin)
        h = 7 * f.dx
        d3 = dn.finite_difference(f, h, 3)
        x = d3.x
        ref = np.sin(x + 3 * h) - 3 * np.sin(x + 2 * h) + 3 * np.sin(x + h) - np.sin(x)
        assert np.allclose(d3.values, ref, atol=1e-12)

    def test_negative_h(self):
        f = _grid(np.cos)
        h = 11 * f.dx
        d = dn.finite_difference(f, -h, 2)
        assert np.allclose(d.values, np.cos(d.x - 2 * h) - 2 * np.cos(d.x - h) + np.cos(d.x), atol=1e-12)

    def test_unaligned_h(self):
        f = _grid(np.cos)
        with pytest.raises(ValueError):
            dn.finite_difference(f, 1.5 * f.dx, 2)
        with pytest.raises(ValueError):
            dn.finite_difference(f, 2.0, 1)

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), k=st.integers(1, 160), n=st.integers(1, 5))
    def test_linearity(self, a, b, k, n):
        f, g = _grid(np.sin, n=1000), _grid(lambda x: x ** 3, n=1000)
        h = k * f.dx
        lhs = dn.finite_difference(dn.GridFunction(f.x0, f.dx, a * f.values + b * g.values), h, n).values
        rhs = a * dn.finite_difference(f, h, n).values + b * dn.finite_difference(g, h, n).values
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(k=st.integers(1, 100), n=st.integers(1, 6), seed=st.integers(0, 1000))
    def test_sup_bound(self, k, n, seed):
        f = dn.GridFunction(0.0, 0.01, np.random.default_rng(seed).uniform(-1, 1, 500))
        d = dn.finite_difference(f, k * f.dx, n, mode="full")
        assert np.max(np.abs(d.values)) <= 2 ** n * np.max(np.abs(f.values)) + 1e-12

    def test_full_mode_covers_support(self):
        f = dn.GridFunction(0.0, 1.0 / 8, np.ones(8))
        d = dn.finite_difference(f, 0.25, 1, mode="full")
        assert d.l1() == pytest.approx(2 * 0.25)


class TestBesovNorm:
    def test_indicator(self):
        f = _grid(lambda x: ((x >= 0) & (x < 1)).astype(float), -1, 2, 3000)
        assert dn.besov_norm(f, 0.5, 1, dn.aligned_h_grid(f.dx, 30)) == pytest.approx(3.0, abs=1e-3)

    def test_zero(self):
        f = dn.GridFunction(0.0, 0.01, np.zeros(100))
        assert dn.besov_norm(f, 0.3, 1, [0.1, 0.5]) == 0.0

    def test_s_must_be_below_n(self):
        f = _grid(np.cos)
        with pytest.raises(ValueError):
            dn.besov_norm(f, 2.0, 2, [0.1])

    def test_gaussian_stable_under_refinement(self):
        f = _grid(dn.gaussian_pdf, -10, 10, 20000)
        coarse = dn.besov_norm(f, 0.9, 2, dn.aligned_h_grid(f.dx, 12, 0.01))
        fine = dn.besov_norm(f, 0.9, 2, dn.aligned_h_grid(f.dx, 48, 0.001))
        assert fine == pytest.approx(coarse, rel=0.01)

    def test_monotone_in_s(self):
        f = _grid(lambda x: np.abs(x) ** 0.3 * dn.gaussian_pdf(x), -6, 6, 6000)
        hs = dn.aligned_h_grid(f.dx, 15)
        vals = [dn.besov_norm(f, s, 2, hs) for s in np.linspace(0.1, 1.9, 10)]
        assert np.all(np.diff(vals) >= -1e-12)

    def test_report_finds_the_smoothness_of_a_kink(self):
        # |x| e^{-x^2} has one kink, so B^s_{1,inf} holds up to s = 2
        f = _grid(lambda x: np.abs(x) * np.exp(-x * x), -6, 6, 12000)
        rep = dn.besov_report(f, 3, [0.5, 1.0, 1.5])
        assert rep.s_empirical == 1.5
        assert rep.decay_slope >= rep.s_empirical - 0.1


class TestGaussianPieces:
    @pytest.mark.parametrize("n,y,expected", [(0, 2.5, 1.0), (1, 3.0, 6.0), (3, 1.0, -4.0), (4, 0.5, 1.0)])
    def test_hermite(self, n, y, expected):
        # H_4(y) = 16y^4 - 48y^2 + 12
        assert dn.hermite(n, y) == pytest.approx(expected)

    def test_l1_values(self):
        assert dn.gaussian_derivative_l1(0, 3.3) == pytest.approx(1.0, rel=1e-12)
        assert dn.gaussian_derivative_l1(1, 1.0) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)

    @pytest.mark.parametrize("n,deriv", [(2, lambda x: (x * x - 1)), (3, lambda x: (3 * x - x ** 3))])
    def test_l1_against_direct_quadrature(self, n, deriv):
        f = lambda x: abs(deriv(x)) * math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
        roots = {2: [-1, 1], 3: [-math.sqrt(3), 0, math.sqrt(3)]}[n]
        pts = [-np.inf, *roots, np.inf]
        direct = sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-13)[0] for a, b in zip(pts[:-1], pts[1:]))
        assert dn.gaussian_derivative_l1(n, 1.0) == pytest.approx(direct, rel=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(0, 6), v=st.floats(0.01, 100))
    def test_scaling_invariant(self, n, v):
        assert dn.gaussian_derivative_l1(n, v) * v ** (n / 2) == pytest.approx(dn.gaussian_derivative_l1(n, 1.0),
                                                                             rel=1e-12)

    def test_bound_on_second_difference(self):
        f = _grid(dn.gaussian_pdf, -12, 12, 24000)
        for h in dn.aligned_h_grid(f.dx, 8, 0.01):
            assert dn.finite_difference(f, h, 2, "full").l1() <= h * h * dn.gaussian_derivative_l1(2, 1.0) * (1 + 1e-9)


class TestKde:
    def test_normal(self):
        x = np.random.default_rng(0).normal(size=100_000)
        est = dn.kde(x)
        assert np.all(est.grid.values >= 0)
        assert est.grid.integral() == pytest.approx(1.0, abs=1e-3)
        assert est.l1_distance(dn.gaussian_pdf) <= 0.05
        assert est.grid.x[0] <= np.mean(x) - 6 * np.std(x)

    def test_linear_exact_samples(self):
        m = make_model("wave", 2, 0.5, beta=1.0, sigma="const:1.5")
        x = simulate_linear_exact(1.5, m, 0.5, seed=1, size=100_000)
        v = 1.5 ** 2 * compute_g(m, t=0.5)
        assert dn.kde(x).l1_distance(lambda y: dn.gaussian_pdf(y, v)) <= 0.05

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            dn.kde(np.ones(1000))
        with pytest.raises(ValueError):
            dn.kde(np.arange(50.0))
        with pytest.raises(ValueError):
            dn.kde(np.arange(500.0), bandwidth=0.0)

    def test_silverman(self):
        x = np.random.default_rng(1).normal(size=1000)
        assert dn.silverman_bandwidth(x) == pytest.approx(1.06 * np.std(x, ddof=1) * 1000 ** -0.2)


class TestDecayCriterion:
    def test_gaussian_decays(self):
        x = np.random.default_rng(2).normal(size=200_000)
        phi = [dn.bump_function(0.0, 2.0, 0.5)]
        rep = dn.criterion_decay(x, phi, 2, 0.5, list(np.geomspace(0.02, 0.5, 8)))
        assert rep.a >= 1.5

    def test_gaussian_oracle_expectation(self):
        # E[Delta_h^2 phi(U)] for U ~ N(0,1) by quadrature matches the sample mean
        x = np.random.default_rng(3).normal(size=200_000)
        phi = dn.bump_function(0.3, 1.5, 0.5)
        h = 0.2
        exact = integrate.quad(lambda u: (phi(u + 2 * h) - 2 * phi(u + h) + phi(u)) * dn.gaussian_pdf(u),
                               -8, 8, limit=200)[0]
        mean, se = dn.difference_expectation(x, phi, h, 2)
        assert abs(mean - exact) <= 4 * se

    def test_point_mass_fails(self):
        x = np.full(5000, 0.3)
        fam = [dn.spike_function(0.3, 0.5, 1.0)]
        rep = dn.criterion_decay(x, fam, 3, 0.5, list(np.geomspace(1e-3, 0.3, 10)))
        # the atom only reproduces the Hölder order of phi: no gain beyond alpha
        assert rep.a < 1.0

    def test_holder_norm_of_spike(self):
        phi = dn.spike_function(0.0, 0.5, 1.0)
        sup = float(np.max(phi(np.linspace(-1, 1, 4001))))
        assert phi.norm >= sup + 0.99 * (phi(0.01) - phi(0.0)) / 0.01 ** 0.5


class TestMasterBound:
    def test_linear_model_holds_everywhere(self):
        m = make_model("wave", 2, 0.5, beta=1.0)
        rep = dn.master_bound_check(m, 0.5, [0.125, 0.25], [0.0, 0.05, 0.1, 0.2], 2, 0.5, 400, dt=0.0625)
        assert rep.fraction_holding == 1.0
        # u^eps = u for constant coefficients: the smoothing gap vanishes
        h0 = [r for r in rep.table if r["h"] == 0.0]
        assert all(r["lhs"] == 0.0 for r in h0)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            dn.master_bound_check(make_model("wave", 2, 0.5, beta=1.0), 0.5, [0.25], [0.1], 2, 1.0, 10)


def test_kde_of_discrete_law_is_not_a_stable_besov_function():
    # a two-point law: the estimate has bandwidth-sized bumps whose norm blows up under refinement
    x = np.repeat([-1.0, 1.0], 5000) + np.random.default_rng(4).normal(scale=1e-4, size=10000)
    est = dn.kde(x, bandwidth=1e-3)
    assert stats.kurtosis(x) < 0
    rep = dn.besov_report(est.grid, 2, [0.5, 0.9], h_min=est.grid.dx)
    assert rep.s_empirical < 0.9
