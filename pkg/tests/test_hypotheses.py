import json
import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest

from spdelab.hypotheses import (ExponentFamily, ExponentReport, Provenance, analytic_exponents, check_A1,
                                check_A3, compute_g, compute_g1, compute_g2, compute_increments, family_of,
                                fit_exponent, fitted_exponents, g2_is_exact, optimal_parameters)
from spdelab.kernels import ModelSpec, make_model, radial_density_measure
from spdelab.quadrature import QuadratureConfig


def _wave_g(t, beta, d):
    omega = 2 * mp.pi ** (mp.mpf(d) / 2) / mp.gamma(mp.mpf(d) / 2)
    mu = mp.mpf(beta) - 2
    mellin = mp.pi / 2 if mu == -1 else -mp.gamma(mu) * mp.cos(mp.pi * mu / 2) / 2 ** (mu + 1)
    return float(omega * mellin * mp.mpf(t) ** (3 - beta) / (3 - beta))


def _heat_g(t, beta, d):
    omega = 2 * mp.pi ** (mp.mpf(d) / 2) / mp.gamma(mp.mpf(d) / 2)
    dens = omega * mp.gamma(beta / 2) / (2 * (8 * mp.pi ** 2) ** (beta / 2))
    return float(dens * mp.mpf(t) ** (1 - beta / 2) / (1 - beta / 2))


class TestFunctionals:
    @pytest.mark.parametrize("d,beta,t", [(2, 1.0, 0.5), (3, 0.5, 1.0), (5, 1.5, 0.2)])
    def test_wave_g_closed_form(self, d, beta, t):
        m = make_model("wave", d, 1.0, beta=beta)
        assert compute_g(m, t=t) == pytest.approx(_wave_g(t, beta, d), rel=1e-6)

    @pytest.mark.parametrize("d,beta,t", [(2, 1.0, 0.5), (3, 0.5, 1.0), (2, 1.8, 0.05)])
    def test_heat_g_closed_form(self, d, beta, t):
        m = make_model("heat", d, 1.0, beta=beta)
        assert compute_g(m, t=t) == pytest.approx(_heat_g(t, beta, d), rel=1e-6)

    def test_heat_g1_equals_g(self):
        # the Gaussian profile against a Riesz density is largest at zero shift
        m = make_model("heat", 2, 1.0, beta=1.0)
        assert compute_g1(m, t=0.3) == pytest.approx(compute_g(m, t=0.3), rel=1e-6)

    def test_wave_g1_dominates_g(self):
        m = make_model("wave", 2, 1.0, beta=1.0)
        cfg = QuadratureConfig(refine_iters=4)
        assert compute_g1(m, cfg, 0.5) >= compute_g(m, cfg, 0.5) * (1 - 1e-9)

    def test_g2_exact(self):
        assert compute_g2(make_model("wave", 2, 2.0, beta=1.0), t=1.5) == 1.5 ** 3 / 3
        assert compute_g2(make_model("heat", 3, 2.0, beta=1.0), t=1.5) == 1.5
        assert g2_is_exact(make_model("wave", 2, beta=1.0))

    def test_single_atom_g(self):
        # one atom of mass m at |xi| = r: g(t) = m int_0^t sin^2(s r)/r^2 ds
        mass, r, t = 1.5, 2.0, 0.8
        model = make_model("wave", 2, 1.0, atoms=[[r, 0.0]], masses=[mass])
        exact = mass * (t / 2 - math.sin(2 * t * r) / (4 * r)) / r ** 2
        assert compute_g(model, t=t) == pytest.approx(exact, rel=1e-9)

    def test_atom_at_origin_wave(self):
        # sin^2(s r)/r^2 -> s^2 at r = 0, so g = t^3 / 3
        model = make_model("wave", 2, 1.0)
        assert compute_g(model, t=0.6) == pytest.approx(0.6 ** 3 / 3, rel=1e-9)

    def test_time_outside_horizon(self):
        with pytest.raises(ValueError):
            compute_g(make_model("wave", 2, 1.0, beta=1.0), t=1.5)


class TestIncrements:
    def test_zero_start(self):
        m = make_model("wave", 2, 1.0, beta=1.0)
        inc = compute_increments(m, s=0.0, t=0.3)
        assert inc.I1 == 0.0 and inc.I3 == 0.0
        assert inc.I4 == pytest.approx(0.3 ** 3 / 3)
        assert inc.I2 == pytest.approx(compute_g1(m, t=0.3), rel=1e-9)

    def test_wave_I3_exact(self):
        # sup_eta |F(u+h) - F(u)|^2 = h^2 for the wave kernel, so I3 = s h^2
        m = make_model("wave", 2, 1.0, beta=1.0)
        inc = compute_increments(m, s=0.5, t=0.6)
        assert inc.I3 == pytest.approx(0.5 * 0.1 ** 2, rel=1e-9)

    def test_equal_times(self):
        assert compute_increments(make_model("heat", 2, beta=1.0), s=0.4, t=0.4) == (0, 0, 0, 0)


class TestHypothesisChecks:
    def test_A1_holds_for_riesz(self):
        rep = check_A1(make_model("wave", 2, 1.0, beta=1.0))
        assert rep.finite and rep.values[1] == pytest.approx(1 / 3)

    def test_A1_fails_for_flat_density_in_d3(self):
        # sin^2(s r)/r^2 against a constant density in d = 3 diverges at large r
        m = make_model("wave", 3, 1.0, beta=1.0)
        flat = ModelSpec(m.kernel, radial_density_measure(lambda r: np.ones_like(r), 3), 1.0,
                         m.sigma, m.b, m.sigma0)
        rep = check_A1(flat)
        assert not rep.finite

    @pytest.mark.parametrize("family", ["wave", "heat"])
    def test_A3_limits_decrease(self, family):
        rep = check_A3(make_model(family, 2, 1.0, beta=1.0), h_grid=(1e-1, 1e-2, 1e-3))
        assert rep.monotone
        assert rep.limits[-1][1] < rep.limits[0][1]


class TestExponents:
    @pytest.mark.parametrize("beta", [Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(3, 2)])
    def test_wave_riesz(self, beta):
        r = analytic_exponents("WaveRiesz", beta, 2)
        assert (r.delta, r.gamma, r.gamma1, r.gamma2) == (2 - beta, 3 - beta, 3 - beta, 3)
        assert r.s_max == (2 - beta) / (5 - 2 * beta)

    def test_finite_and_heat(self):
        assert analytic_exponents("WaveFinite").s_max == Fraction(2, 5)
        assert analytic_exponents("HeatFinite").gamma_bar == 2
        assert analytic_exponents("HeatRiesz", 0.5, 3).s_max == Fraction(1, 2)

    @pytest.mark.parametrize("beta,d", [(0, 2), (2, 3), (1.5, 1), (None, 2)])
    def test_invalid_beta(self, beta, d):
        with pytest.raises(ValueError):
            analytic_exponents("WaveRiesz", beta, d)

    def test_family_of(self):
        assert family_of(make_model("heat", 2, beta=1.0)) is ExponentFamily.HEAT_RIESZ
        assert family_of(make_model("wave", 2)) is ExponentFamily.WAVE_FINITE

    def test_json_has_exact_fractions(self):
        out = json.loads(analytic_exponents("WaveRiesz", 1, 2).to_json())
        assert out["s_max"]["exact"] == "1/3"
        assert out["gamma_bar"]["exact"] == "3/2"
        assert out["provenance"]["delta"] == Provenance.ANALYTIC.value

    def test_fitted_matches_analytic_for_heat(self):
        rep, _ = fitted_exponents(make_model("heat", 2, 1.0, beta=1.0))
        assert rep.gamma == pytest.approx(0.5, abs=0.02)
        assert rep.gamma2 == pytest.approx(1.0, abs=1e-9)


class TestFitExponent:
    def test_exact_power_law(self):
        t = np.geomspace(0.01, 1, 9)
        fit = fit_exponent(np.column_stack([t, 3.0 * t ** 2.5]))
        assert fit.slope == pytest.approx(2.5, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert fit.r2 == pytest.approx(1.0)

    def test_transposed_input(self):
        t = np.geomspace(0.1, 1, 8)
        assert fit_exponent(np.vstack([t, t ** 2])).slope == pytest.approx(2.0)

    def test_rejects_short_or_nonpositive(self):
        t = np.geomspace(0.1, 1, 8)
        with pytest.raises(ValueError):
            fit_exponent(np.column_stack([t[:7], t[:7]]))
        with pytest.raises(ValueError):
            fit_exponent(np.column_stack([t, t - 0.5]))


class TestOptimalParameters:
    def test_wave_riesz(self):
        p = optimal_parameters(analytic_exponents("WaveRiesz", 1, 2))
        assert p.alpha == Fraction(2, 3) and p.rho == 2 and p.boundary_product == 1
        assert p.epsilon(0.01, 1.0) == pytest.approx(0.5 * 0.01 ** (2 / 2))

    def test_heat_epsilon_rule(self):
        p = optimal_parameters(analytic_exponents("HeatRiesz", 1, 2))
        assert p.epsilon(0.25, 2.0) == pytest.approx(1.0 * 0.25 ** 4)

    def test_degenerate_gamma_bar(self):
        with pytest.raises(ValueError):
            optimal_parameters(ExponentReport(Fraction(0), Fraction(1), Fraction(1), Fraction(1)))
