import math

import numpy as np
import pytest

from spdelab.hypotheses import compute_g
from spdelab.kernels import make_model
from spdelab.simulator import (FieldState, LatticeGrid, NoiseSynth, Simulator, cell_masses, increment_moments,
                               increment_variance_oracle, isometry_check, linear_variance_oracle, simulate,
                               simulate_at_origin, simulate_linear_exact, smoothing_pair, smoothing_pairs, step,
                               synthesize_increment)


def _wave(**kw):
    return make_model("wave", 2, 0.5, beta=1.0, **kw)


def _within(mean, se, target, k=3.0):
    return abs(mean - target) <= k * se


class TestGrid:
    @pytest.mark.parametrize("N", [6, 12, 4])
    def test_rejects_bad_sizes(self, N):
        with pytest.raises(ValueError):
            LatticeGrid(2, N, 1.0)

    def test_roundtrip(self):
        g = LatticeGrid(2, 16, 3.0)
        f = np.random.default_rng(0).normal(size=g.shape)
        assert np.allclose(g.to_physical(g.to_spectral(f)), f, atol=1e-13)
        # the value at the origin is the full-spectrum sum of the coefficients
        assert g.value_at_origin(g.to_spectral(f)) == pytest.approx(f[0, 0], abs=1e-12)

    def test_heat_scale(self):
        g = LatticeGrid.for_model(make_model("heat", 2, 2.0, beta=1.0), 32, factor=1.0)
        assert g.L == pytest.approx(2 * math.pi * math.sqrt(4.0))


class TestNoise:
    def test_draw_is_hermitian(self):
        g = LatticeGrid(3, 8, 2.0)
        z = NoiseSynth.from_measure(g, make_model("wave", 3, beta=1.0).measure).draw(np.random.default_rng(1))
        # a consistent half spectrum survives a round trip through a real field unchanged
        assert np.allclose(g.to_spectral(g.to_physical(z)), z, atol=1e-12)

    def test_site_variance(self):
        g = LatticeGrid(2, 16, 4.0)
        m = make_model("wave", 2, beta=1.0)
        noise = NoiseSynth.from_measure(g, m.measure, seed=3)
        dt, n = 0.1, 4000
        x = np.array([synthesize_increment(g, noise, dt, noise.stream(i))[5, 9] for i in range(n)])
        target = dt * float(np.sum(cell_masses(g, m.measure) * g.multiplicity()))
        v = float(np.var(x))
        assert _within(v, v * math.sqrt(2.0 / n), target)

    def test_atom_at_origin_is_spatially_constant(self):
        g = LatticeGrid(2, 8, 1.0)
        m = make_model("wave", 2, atoms=[[0.0, 0.0]], masses=[2.0])
        noise = NoiseSynth.from_measure(g, m.measure)
        fields = np.array([synthesize_increment(g, noise, 0.5, noise.stream(i)) for i in range(3000)])
        assert np.allclose(fields, fields[:, :1, :1], atol=1e-12)
        v = float(np.var(fields[:, 0, 0]))
        assert _within(v, v * math.sqrt(2 / 3000), 2.0 * 0.5)

    def test_atom_beyond_cutoff(self):
        g = LatticeGrid(1, 8, 1.0)
        m = make_model("wave", 1, atoms=[[100.0]], masses=[1.0])
        with pytest.raises(ValueError):
            cell_masses(g, m.measure)


class TestDynamics:
    def test_zero_model(self):
        m = _wave(sigma="zero")
        g = LatticeGrid.for_model(m, 16)
        assert np.all(simulate(m, g, 0.125, 0.5, 5, seed=0) == 0.0)

    def test_heat_constant_drift(self):
        # spatially constant forcing b = 1 without noise gives u(t) = t
        m = make_model("heat", 2, 1.0, beta=1.0, sigma="zero", b="const:1")
        g = LatticeGrid.for_model(m, 16)
        assert simulate(m, g, 0.1, 0.7, 3, seed=0) == pytest.approx(0.7, rel=1e-12)

    def test_wave_constant_drift(self):
        # u'' = 1: the midpoint kick is exact for constant forcing, u = t^2 / 2
        m = make_model("wave", 1, 1.0, beta=0.5, sigma="zero", b="const:1")
        g = LatticeGrid.for_model(m, 16)
        assert simulate(m, g, 0.125, 1.0, 2, seed=0) == pytest.approx(0.5, rel=1e-12)

    def test_determinism_and_batch_independence(self):
        m = _wave(sigma="sin1p:1,0.5")
        g = LatticeGrid.for_model(m, 16)
        a = Simulator(m, g, 0.125, seed=7).run(0.5, 6).u_t0
        b = Simulator(m, g, 0.125, seed=7, memory_mb=0.01, workers=2).run(0.5, 6).u_t0
        assert np.array_equal(a, b)
        assert simulate_at_origin(m, g, 0.125, 0.5, seed=7, replica=4) == a[4]
        assert not np.array_equal(a, Simulator(m, g, 0.125, seed=8).run(0.5, 6).u_t0)

    def test_single_step_matches_batched_engine(self):
        m = _wave(sigma="sin1p:1,0.5")
        g = LatticeGrid.for_model(m, 16)
        sim = Simulator(m, g, 0.125, seed=2)
        inc = synthesize_increment(g, sim.noise, 0.125, sim.noise.stream(0))
        st = step(m, g, FieldState.zeros(m, g), 0.125, inc)
        assert g.value_at_origin(st.u_hat) == pytest.approx(sim.run(0.125, [0]).u_t0[0], abs=1e-12)

    def test_stationary_across_sites(self):
        m = _wave()
        g = LatticeGrid.for_model(m, 16)
        out = Simulator(m, g, 0.125, seed=0).run(0.5, 2000, keep_fields=True)
        v0 = np.var(out.fields[:, 0, 0])
        v1 = np.var(out.fields[:, 7, 3])
        assert abs(v0 - v1) <= 3 * v0 * math.sqrt(4 / 2000)
        assert np.allclose(out.fields[:, 0, 0], out.u_t0)

    @pytest.mark.parametrize("family", ["wave", "heat"])
    def test_linear_variance_matches_lattice_oracle(self, family):
        m = make_model(family, 2, 0.5, beta=1.0)
        g = LatticeGrid.for_model(m, 32)
        x = simulate(m, g, 0.0625, 0.5, 4000, seed=1)
        v = float(np.var(x, ddof=1))
        assert _within(v, v * math.sqrt(2 / 4000), linear_variance_oracle(m, g, 0.0625, 0.5))

    def test_lattice_oracle_approaches_continuum(self):
        m = make_model("wave", 2, 0.5, beta=1.0)
        g = LatticeGrid.for_model(m, 256)
        assert linear_variance_oracle(m, g, 0.0625, 0.5) == pytest.approx(compute_g(m, t=0.5), rel=0.03)

    def test_increment_oracle(self):
        m = make_model("heat", 2, 1.0, beta=1.0)
        g = LatticeGrid.for_model(m, 32)
        est = increment_moments(m, g, 0.0625, 0.5, [0.0625, 0.25], 3000, seed=4)
        for e, h in zip(est, [0.0625, 0.25]):
            assert _within(e.mean, e.stderr, increment_variance_oracle(m, g, 0.0625, 0.5, h))


class TestSmoothing:
    def test_constant_sigma_gives_identical_pair(self):
        m = _wave(sigma="const:1.3")
        g = LatticeGrid.for_model(m, 16)
        r = smoothing_pair(m, g, 0.125, 0.5, 0.25, seed=0, replica=3)
        assert r.u_t0 == pytest.approx(r.u_eps_t0, abs=1e-12)

    def test_eps_equal_t_freezes_at_zero(self):
        # u = 0 at time 0, so the frozen branch is the linear solution with sigma(0)
        m = _wave(sigma="sin1p:1,0.5")
        lin = _wave(sigma=f"const:{m.sigma(0.0)}")
        g = LatticeGrid.for_model(m, 16)
        a = smoothing_pair(m, g, 0.125, 0.5, 0.5, seed=5, replica=1)
        b = simulate_at_origin(lin, g, 0.125, 0.5, seed=5, replica=1)
        assert a.u_eps_t0 == pytest.approx(b, abs=1e-12)

    def test_eps_zero_is_the_solution(self):
        m = _wave(sigma="sin1p:1,0.5")
        g = LatticeGrid.for_model(m, 16)
        out = smoothing_pairs(m, g, 0.125, 0.5, [0.0, 0.125], 4, seed=0)
        assert np.array_equal(out.frozen[:, 0], out.u_t0)

    def test_eps_must_be_a_step_multiple(self):
        m = _wave(sigma="sin1p:1,0.5")
        g = LatticeGrid.for_model(m, 16)
        with pytest.raises(ValueError):
            smoothing_pair(m, g, 0.125, 0.5, 0.2, seed=0)


class TestOracles:
    def test_isometry(self):
        m = make_model("wave", 2, 0.5, beta=1.0, sigma="sin1p:1,0.5", b="affine:0.3,0.2")
        g = LatticeGrid.for_model(m, 32)
        rep = isometry_check(m, g, 0.0625, 0.5, 500, seed=0)
        assert rep.holds, rep

    def test_exact_linear_law(self):
        m = _wave(sigma="const:2")
        x = simulate_linear_exact(2.0, m, 0.5, seed=0, size=20000)
        target = 4.0 * compute_g(m, t=0.5)
        v = float(np.var(x))
        assert _within(v, v * math.sqrt(2 / 20000), target)

    def test_exact_linear_law_rejects_nonlinear(self):
        with pytest.raises(ValueError):
            simulate_linear_exact(1.0, _wave(sigma="sin1p:1"), 0.5, seed=0)
        with pytest.raises(ValueError):
            simulate_linear_exact(2.0, _wave(), 0.5, seed=0)
