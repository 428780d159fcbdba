import math

import mpmath as mp
import numpy as np
import pytest

from spdelab.kernels import atom_measure, make_model, riesz_measure, wave_kernel
from spdelab.quadrature import (DivergenceError, QuadratureConfig, atom_sum, cumulative_time_integral,
                                gauss_panels, interval_integral, radial_integral, sup_over_shift)


def _wave_density_oracle(s, beta, d):
    # omega_{d-1} s^(2-beta) int_0^inf sin^2(x) x^(mu-1) dx with mu = beta - 2, in closed form
    omega = 2 * mp.pi ** (mp.mpf(d) / 2) / mp.gamma(mp.mpf(d) / 2)
    mu = mp.mpf(beta) - 2
    mellin = mp.pi / 2 if mu == -1 else -mp.gamma(mu) * mp.cos(mp.pi * mu / 2) / 2 ** (mu + 1)
    return float(omega * mp.mpf(s) ** (2 - beta) * mellin)


def _heat_shifted_oracle(s, beta, d, a):
    # Gaussian against |xi|^(beta-d), shifted by |eta| = a, via Kummer's function
    c = 8 * mp.pi ** 2 * s
    return float(mp.pi ** (mp.mpf(d) / 2) * mp.gamma(beta / 2) / mp.gamma(mp.mpf(d) / 2)
                 * c ** (-beta / 2) * mp.hyp1f1((d - beta) / 2, mp.mpf(d) / 2, -c * a * a))


class TestRadialIntegral:
    @pytest.mark.parametrize("d,beta,s", [(2, 1.0, 0.4), (3, 0.5, 1.0), (5, 1.5, 0.05), (2, 0.25, 2.0)])
    def test_wave_unshifted(self, d, beta, s):
        m = make_model("wave", d, 2.0, beta=beta)
        got = radial_integral(m.kernel.square_profile(s), m.measure).value
        assert got == pytest.approx(_wave_density_oracle(s, beta, d), rel=1e-6)

    @pytest.mark.parametrize("d,beta,s,a", [(2, 1.0, 0.3, 1.2), (3, 0.5, 0.1, 2.0), (3, 1.5, 0.05, 0.7),
                                            (2, 0.3, 1.0, 0.2), (2, 1.0, 0.3, 0.0)])
    def test_heat_shifted(self, d, beta, s, a):
        m = make_model("heat", d, 1.0, beta=beta)
        got = radial_integral(m.kernel.square_profile(s), m.measure, a).value
        assert got == pytest.approx(_heat_shifted_oracle(s, beta, d, a), rel=1e-6)

    def test_wave_shifted_d3_against_sphere_formula(self):
        # d = 3 reduces to a 1-D integral of the closed-form spherical mean
        beta, s, a = 1.5, 0.7, 0.9
        p = beta - 3
        mean = lambda r: 2 * mp.pi * ((r + a) ** (p + 2) - abs(r - a) ** (p + 2)) / ((p + 2) * r * a)
        # sin^2 = (1 - cos) / 2: the smooth half integrates directly, the cosine half by periods
        smooth = mp.quad(lambda r: mean(r) / 2, [0, a, a + 1, 10, 100, mp.inf])
        osc = lambda r: mp.cos(2 * s * r) * mean(r) / 2
        oracle = float(smooth - mp.quad(osc, [0, a, a + 1]) - mp.quadosc(osc, [a + 1, mp.inf], period=mp.pi / s))
        m = make_model("wave", 3, 1.0, beta=beta)
        got = radial_integral(m.kernel.square_profile(s), m.measure, a).value
        assert got == pytest.approx(oracle, rel=1e-8)

    def test_atoms_use_the_exact_sum(self):
        m = atom_measure([[1.0, 0.0], [0.0, 2.0]], [0.5, 2.0], 2)
        prof = wave_kernel().square_profile(0.8)
        expected = 0.5 * math.sin(0.8) ** 2 + 2.0 * (math.sin(1.6) / 2) ** 2
        assert atom_sum(prof, m) == pytest.approx(expected, rel=1e-14)
        with pytest.raises(TypeError):
            radial_integral(prof, m)


class TestSupOverShift:
    def test_never_below_unshifted(self):
        m = make_model("wave", 2, 1.0, beta=1.0)
        prof = m.kernel.square_profile(0.5)
        sup = sup_over_shift(prof, m.measure, QuadratureConfig(refine_iters=4))
        assert sup.value >= radial_integral(prof, m.measure).value * (1 - 1e-12)

    def test_heat_sup_is_at_zero_shift(self):
        # Kummer's function decreases in the shift, so the sup sits at eta = 0
        m = make_model("heat", 2, 1.0, beta=1.0)
        sup = sup_over_shift(m.kernel.square_profile(0.2), m.measure)
        assert sup.value == pytest.approx(_heat_shifted_oracle(0.2, 1.0, 2, 0.0), rel=1e-6)

    def test_atoms_sup_finds_the_atom(self):
        # one atom: sup over eta of m F(|xi_1 + eta|) is m sup F = m s^2 for the wave kernel
        m = atom_measure([[3.0, 0.0]], [2.0], 2)
        sup = sup_over_shift(wave_kernel().square_profile(0.5), m)
        assert sup.value == pytest.approx(2.0 * 0.25, rel=1e-8)


class TestTimeIntegrals:
    def test_gauss_panels_polynomial(self):
        edges = np.array([0.0, 0.3, 1.0, 2.5])
        assert gauss_panels(lambda x: x ** 5 - x, edges, 4) == pytest.approx(2.5 ** 6 / 6 - 2.5 ** 2 / 2, rel=1e-13)

    @pytest.mark.parametrize("p", [-0.5, 0.0, 1.0, 2.0])
    def test_power_laws_are_exact(self, p):
        times = np.geomspace(0.01, 1.0, 9)
        got = cumulative_time_integral(lambda s: s ** p, times)
        # Gauss-Legendre is exact for the polynomials and close for the singular case
        assert got == pytest.approx(times ** (p + 1) / (p + 1), rel=1e-9 if p >= 0 else 1e-6)

    def test_nonintegrable_singularity_is_reported(self):
        with pytest.raises(DivergenceError):
            interval_integral(lambda s: s ** -1.2, 1.0)

    def test_zero_length(self):
        assert interval_integral(lambda s: 1.0, 0.0) == 0.0
        assert cumulative_time_integral(lambda s: 1.0, [0.0, 0.5]).tolist() == [0.0, 0.5]


class TestConfig:
    @pytest.mark.parametrize("kw", [{"radial_cutoff": 0}, {"tail_tolerance": -1}, {"panel_count": 0},
                                    {"time_grid": (0.1, 1.0)}])
    def test_rejects_bad_settings(self, kw):
        with pytest.raises(ValueError):
            QuadratureConfig(**kw)


def test_riesz_spherical_mean_matches_density_at_zero_shift():
    m = riesz_measure(0.7, 3)
    assert float(m.spherical_mean(2.0, 0.0)) == pytest.approx(4 * math.pi * 2.0 ** (0.7 - 3), rel=1e-14)
