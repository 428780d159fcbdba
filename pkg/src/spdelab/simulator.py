"""Spectral Galerkin Monte Carlo for the mild solution on a periodic lattice.

The state is kept as Fourier-series coefficients ``u_hat[k]`` on the
``rfftn`` half spectrum, so ``u(x) = sum_k u_hat[k] exp(i xi_k . x)`` with
``xi_k = 2 pi k / L``. Noise increments are synthesised from i.i.d. lattice
normals weighted by ``w_k = sqrt(mu(cell_k))``.

One step of length ``dt`` from ``t_n``:

* wave: half free propagation, kick ``v_hat += (sigma(u_n) dW + b(u_n) dt)^``,
  half free propagation (the kick sits at the midpoint, coefficients at the
  left endpoint);
* heat: exponential integrator, exact for additive noise.

Each replica draws from its own Philox stream keyed by ``(seed, replica)``, so
results do not depend on batching.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .kernels import Family, MeasureKind, ModelSpec, SpectralMeasure
from .quadrature import _legendre

FOUR_PI_SQ = 4.0 * math.pi ** 2


class InstabilityError(FloatingPointError):
    """A coefficient evaluation produced non-finite values."""


# ---------------------------------------------------------------------------
# lattice


@dataclass(frozen=True)
class LatticeGrid:
    """Periodic lattice with ``N`` points per axis on ``[0, L)^d``."""

    d: int
    N: int
    L: float
    max_points: int = 1 << 22

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError("lattice simulation supports d = 1, 2, 3")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two and at least 8")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.N ** self.d > self.max_points:
            raise ValueError(f"N^d = {self.N ** self.d} exceeds the memory budget {self.max_points}")

    @classmethod
    def for_model(cls, model: ModelSpec, N: int, horizon: Optional[float] = None, factor: float = 8.0):
        """Torus side ``factor`` times the physical spread at ``horizon``.

        The spread is ``T`` for the wave kernel (unit speed) and the standard
        deviation ``2 pi sqrt(2 T)`` of the heat kernel ``exp(-4 pi^2 t |xi|^2)``.
        """
        T = model.T if horizon is None else horizon
        scale = T if model.kernel.family is Family.WAVE else 2.0 * math.pi * math.sqrt(2.0 * T)
        return cls(model.d, N, factor * scale)

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def spectral_shape(self) -> tuple:
        return (self.N,) * (self.d - 1) + (self.N // 2 + 1,)

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.d, 0))

    @property
    def cutoff(self) -> float:
        """Largest axial frequency ``pi N / L``."""
        return math.pi * self.N / self.L

    def integer_modes(self) -> list:
        """Integer wave vectors on the half spectrum, one broadcastable array per axis."""
        full = np.fft.fftfreq(self.N, 1.0 / self.N)
        half = np.arange(self.N // 2 + 1, dtype=float)
        out = []
        for ax in range(self.d):
            v = half if ax == self.d - 1 else full
            shape = [1] * self.d
            shape[ax] = len(v)
            out.append(v.reshape(shape))
        return out

    def wavenumber(self) -> np.ndarray:
        """``|xi_k|`` on the half spectrum."""
        k2 = sum(m ** 2 for m in self.integer_modes())
        return (2.0 * math.pi / self.L) * np.sqrt(np.broadcast_to(k2, self.spectral_shape))

    def multiplicity(self) -> np.ndarray:
        """How many full-spectrum modes each half-spectrum entry stands for (1 or 2)."""
        m = np.full(self.spectral_shape, 2.0)
        m[..., 0] = 1.0
        if self.N % 2 == 0:
            m[..., -1] = 1.0
        return m

    def to_physical(self, coeffs: np.ndarray, workers: int = 1) -> np.ndarray:
        return sfft.irfftn(coeffs, s=self.shape, axes=self.axes, workers=workers) * self.N ** self.d

    def to_spectral(self, field: np.ndarray, workers: int = 1) -> np.ndarray:
        return sfft.rfftn(field, axes=self.axes, workers=workers) / self.N ** self.d

    def value_at_origin(self, coeffs: np.ndarray) -> np.ndarray:
        """``u(0) = sum_k u_hat[k]`` over the full spectrum, from half-spectrum coefficients."""
        axes = self.axes
        return np.sum(coeffs.real * self.multiplicity(), axis=axes)


# ---------------------------------------------------------------------------
# noise


def _riesz_zero_cell(beta: float, d: int, half_width: float) -> float:
    """``int_{[-c, c]^d} |x|^(beta - d) dx`` by splitting the cube into 2d pyramids."""
    if d == 1:
        return 2.0 * half_width ** beta / beta
    x, w = _legendre(32)
    grids = np.meshgrid(*([x] * (d - 1)), indexing="ij")
    wts = np.prod(np.meshgrid(*([w] * (d - 1)), indexing="ij"), axis=0)
    r2 = sum(g ** 2 for g in grids)
    face = float(np.sum(wts * (1.0 + r2) ** ((beta - d) / 2.0)))
    return 2.0 * d / beta * face * half_width ** beta


def cell_masses(grid: LatticeGrid, measure: SpectralMeasure, near: int = 3, order: int = 12) -> np.ndarray:
    """``mu(cell_k)`` on the half spectrum; cells are cubes of side ``2 pi / L``.

    Riesz cells within ``near`` lattice steps of the origin use tensor
    Gauss-Legendre, the origin cell its exact value, the rest the midpoint
    rule. Atoms are snapped to the nearest lattice frequency and symmetrised.
    """
    dk = 2.0 * math.pi / grid.L
    modes = grid.integer_modes()
    if measure.kind is MeasureKind.ATOMS:
        full = np.zeros(grid.shape)
        idx = np.rint(measure.atoms / dk).astype(int)
        for k, m in zip(idx, measure.masses):
            if np.any(np.abs(k) > grid.N // 2):
                raise ValueError(f"atom at integer mode {k} lies beyond the lattice cutoff")
            full[tuple(k % grid.N)] += 0.5 * m
            full[tuple((-k) % grid.N)] += 0.5 * m
        return full[..., : grid.N // 2 + 1].copy()
    weight = measure.radial_weight
    xi = grid.wavenumber()
    with np.errstate(divide="ignore"):
        out = weight(np.where(xi > 0, xi, 1.0)) * dk ** grid.d
    kinf = np.max(np.abs(np.broadcast_arrays(*modes)), axis=0)
    x, w = _legendre(order)
    local = [g.ravel() for g in np.meshgrid(*([x] * grid.d), indexing="ij")]
    lw = np.prod(np.meshgrid(*([w] * grid.d), indexing="ij"), axis=0).ravel()
    for pos in zip(*np.nonzero((kinf <= near) & (kinf > 0))):
        centre = np.array([float(np.broadcast_to(m, grid.spectral_shape)[pos]) for m in modes])
        pts = [dk * (c + 0.5 * l) for c, l in zip(centre, local)]
        r = np.sqrt(sum(p ** 2 for p in pts))
        out[pos] = float(np.sum(lw * weight(r))) * (0.5 * dk) ** grid.d
    zero = (0,) * grid.d
    if measure.kind is MeasureKind.RIESZ:
        out[zero] = _riesz_zero_cell(measure.beta, grid.d, 0.5 * dk)
    else:
        pts = [dk * 0.5 * l for l in local]
        r = np.maximum(np.sqrt(sum(p ** 2 for p in pts)), 1e-300)
        out[zero] = float(np.sum(lw * weight(r))) * (0.5 * dk) ** grid.d
    return out


@dataclass
class NoiseSynth:
    """Spectral weights ``w_k`` and the per-replica counter-based streams."""

    grid: LatticeGrid
    weights: np.ndarray
    seed: int = 0

    @classmethod
    def from_measure(cls, grid: LatticeGrid, measure: SpectralMeasure, seed: int = 0) -> "NoiseSynth":
        return cls(grid, np.sqrt(cell_masses(grid, measure)), seed)

    def stream(self, replica: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(replica),))
        return np.random.Generator(np.random.Philox(ss))

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Standard complex Gaussians on the half spectrum with Hermitian symmetry.

        Same law as ``rfftn(white) / N^(d/2)`` for lattice white noise: unit
        ``E|z_k|^2``, ``z_{-k} = conj(z_k)`` inside the self-conjugate planes
        (last index 0 and N/2), real normals at self-conjugate modes.
        """
        g = self.grid
        raw = rng.standard_normal((2,) + g.spectral_shape)
        z = (raw[0] + 1j * raw[1]) * math.sqrt(0.5)
        for j in (0, g.N // 2):
            plane = z[..., j]
            mirror = plane
            for ax in range(g.d - 1):
                mirror = np.roll(np.flip(mirror, axis=ax), 1, axis=ax)
            z[..., j] = (plane + np.conj(mirror)) * math.sqrt(0.5)
        return z

    def coefficients(self, z: np.ndarray, dt: float) -> np.ndarray:
        """Fourier coefficients ``w_k sqrt(dt) z_k`` of one noise increment."""
        return (self.weights * math.sqrt(dt)) * z


def synthesize_increment(grid: LatticeGrid, noise: NoiseSynth, dt: float,
                         rng: Optional[np.random.Generator] = None, workers: int = 1) -> np.ndarray:
    """Real lattice field with covariance ``dt * sum_k w_k^2 cos(xi_k . (x - y))``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = rng if rng is not None else noise.stream(0)
    return grid.to_physical(noise.coefficients(noise.draw(rng), dt), workers)


# ---------------------------------------------------------------------------
# state and propagators


@dataclass
class FieldState:
    """Fourier coefficients of ``u`` (and of ``du/dt`` for the wave equation).

    A leading batch axis is allowed.
    """

    time: float
    u_hat: np.ndarray
    v_hat: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, model: ModelSpec, grid: LatticeGrid, batch: tuple = ()) -> "FieldState":
        shape = tuple(batch) + grid.spectral_shape
        v = np.zeros(shape, complex) if model.kernel.family is Family.WAVE else None
        return cls(0.0, np.zeros(shape, complex), v)

    def copy(self) -> "FieldState":
        return FieldState(self.time, self.u_hat.copy(), None if self.v_hat is None else self.v_hat.copy())


class _Propagator:
    """Linear pieces of one time step for a given kernel family.

    Multipliers are stored interleaved so they act on the float64 view of the
    complex coefficient arrays, which keeps every update in place.
    """

    def __init__(self, model: ModelSpec, grid: LatticeGrid, dt: float):
        self.family = model.kernel.family
        if self.family not in (Family.WAVE, Family.HEAT):
            raise ValueError("lattice simulation needs the wave or heat kernel")
        xi = grid.wavenumber()
        self.dt = dt
        pair = lambda a: np.repeat(np.ascontiguousarray(a), 2, axis=-1)
        if self.family is Family.WAVE:
            h = 0.5 * dt
            self.c = pair(np.cos(h * xi))
            self.s_over = pair(h * np.sinc(h * xi / math.pi))  # sin(h xi) / xi
            self.s_times = pair(-xi * np.sin(h * xi))
        else:
            lam = FOUR_PI_SQ * xi ** 2
            x = lam * dt
            with np.errstate(invalid="ignore", divide="ignore"):
                noise = np.sqrt(-np.expm1(-2.0 * x) / (2.0 * x))
                drift = -np.expm1(-x) / x
            self.decay = pair(np.exp(-x))
            self.noise_mult = pair(np.where(x > 0, noise, 1.0))
            self.drift_mult = pair(np.where(x > 0, drift, 1.0))

    def half(self, u: np.ndarray, v: np.ndarray) -> None:
        """Free propagation over ``dt / 2`` of the float views ``u``, ``v``, in place."""
        tmp = self.s_over * v
        v *= self.c
        v += self.s_times * u
        u *= self.c
        u += tmp

    def step(self, state: FieldState, noise_hat, drift_hat) -> None:
        """Advance in place; ``noise_hat`` and ``drift_hat`` already include ``dt``."""
        u = state.u_hat.view(np.float64)
        if self.family is Family.WAVE:
            v = state.v_hat.view(np.float64)
            self.half(u, v)
            if not np.isscalar(noise_hat):
                state.v_hat += noise_hat
            if not np.isscalar(drift_hat):
                state.v_hat += drift_hat
            self.half(u, v)
        else:
            u *= self.decay
            if not np.isscalar(noise_hat):
                u += self.noise_mult * np.ascontiguousarray(noise_hat).view(np.float64)
            if not np.isscalar(drift_hat):
                u += self.drift_mult * np.ascontiguousarray(drift_hat).view(np.float64)
        state.time += self.dt


def _zero_mode(grid: LatticeGrid) -> tuple:
    return (Ellipsis,) + (0,) * grid.d


def _forcing(model: ModelSpec, grid: LatticeGrid, state: FieldState, w_hat: np.ndarray,
             dt: float, workers: int = 1):
    """Fourier coefficients of ``sigma(u) dW`` and ``b(u) dt`` at the current state."""
    sig, b = model.sigma, model.b
    if sig.is_constant and b.is_constant:
        noise_hat = sig.constant_value * w_hat
        drift_hat = np.zeros_like(w_hat)
        drift_hat[_zero_mode(grid)] = b.constant_value * dt
        return noise_hat, drift_hat
    u = grid.to_physical(state.u_hat, workers)
    dw = grid.to_physical(w_hat, workers)
    s_val = sig(u)
    b_val = b(u)
    if not (np.all(np.isfinite(s_val)) and np.all(np.isfinite(b_val))):
        raise InstabilityError("non-finite coefficient values")
    noise_hat = grid.to_spectral(s_val * dw, workers)
    if b.is_constant:
        drift_hat = np.zeros_like(w_hat)
        drift_hat[_zero_mode(grid)] = b.constant_value * dt
    else:
        drift_hat = grid.to_spectral(b_val * dt, workers)
    return noise_hat, drift_hat


def step(model: ModelSpec, grid: LatticeGrid, state: FieldState, dt: float, increment: np.ndarray,
         workers: int = 1) -> FieldState:
    """One step driven by a physical noise increment field; returns a new state."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    w_hat = grid.to_spectral(np.asarray(increment, dtype=float), workers)
    new = state.copy()
    noise_hat, drift_hat = _forcing(model, grid, new, w_hat, dt, workers)
    _Propagator(model, grid, dt).step(new, noise_hat, drift_hat)
    return new


# ---------------------------------------------------------------------------
# batched engine


def _n_steps(t: float, dt: float) -> int:
    n = t / dt
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9 * max(n, 1.0):
        raise ValueError(f"t = {t} must be a positive integer multiple of dt = {dt}")
    return k


@dataclass
class RunOutput:
    """Everything one batched run can record; arrays have one row per replica."""

    replicas: np.ndarray
    u_t0: np.ndarray
    path: Optional[np.ndarray] = None
    frozen: Optional[np.ndarray] = None
    noise_part: Optional[np.ndarray] = None
    drift_part: Optional[np.ndarray] = None
    sigma_sq_path: Optional[np.ndarray] = None
    b_sq_path: Optional[np.ndarray] = None
    fields: Optional[np.ndarray] = None


class Simulator:
    """Batched Monte Carlo driver.

    Parameters
    ----------
    model, grid, dt
        Problem, lattice and time step.
    seed
        Root seed; replica ``i`` uses ``SeedSequence(seed, spawn_key=(i,))``.
    workers
        Threads for the FFTs; results do not depend on it.
    memory_mb
        Budget used to pick the batch size.
    """

    def __init__(self, model: ModelSpec, grid: LatticeGrid, dt: float, seed: int = 0,
                 workers: int = 1, memory_mb: float = 32.0):
        if model.d != grid.d:
            raise ValueError("model and grid dimensions differ")
        self.model, self.grid, self.dt = model, grid, float(dt)
        self.noise = NoiseSynth.from_measure(grid, model.measure, seed)
        self.prop = _Propagator(model, grid, self.dt)
        self.workers = workers
        per_replica = 16.0 * 12 * grid.N ** grid.d
        self.batch = max(1, int(memory_mb * 2 ** 20 / per_replica))

    def run(self, t: float, replicas, record_steps: Sequence[int] = (), branch_eps: Sequence[float] = (),
            split: bool = False, keep_fields: bool = False) -> RunOutput:
        """Simulate ``replicas`` (count or explicit ids) up to time ``t``.

        ``record_steps`` lists step indices at which ``u(., 0)`` is stored;
        ``branch_eps`` lists ``eps`` values for frozen-coefficient branches
        started at ``t - eps``; ``split`` tracks the stochastic and drift parts
        separately together with ``E[sigma(u)^2]``-type paths.
        """
        ids = np.arange(replicas) if np.isscalar(replicas) else np.asarray(replicas, dtype=np.int64)
        n = _n_steps(t, self.dt)
        branch_at = {}
        for j, eps in enumerate(branch_eps):
            if eps == 0:
                continue
            if not 0 < eps <= t:
                raise ValueError("need 0 < eps <= t")
            branch_at.setdefault(n - _n_steps(eps, self.dt), []).append(j)
        record_steps = sorted(set(int(s) for s in record_steps))
        chunks = [self._run_batch(ids[i:i + self.batch], n, record_steps, branch_at, len(branch_eps),
                                  branch_eps, split, keep_fields)
                  for i in range(0, len(ids), self.batch)]
        if not chunks:
            empty = np.zeros(0)
            return RunOutput(ids, empty)
        cat = lambda name: (None if getattr(chunks[0], name) is None
                            else np.concatenate([getattr(c, name) for c in chunks]))
        return RunOutput(ids, cat("u_t0"), cat("path"), cat("frozen"), cat("noise_part"),
                         cat("drift_part"), cat("sigma_sq_path"), cat("b_sq_path"), cat("fields"))

    def _run_batch(self, ids, n, record_steps, branch_at, n_eps, branch_eps, split, keep_fields):
        g, model, dt = self.grid, self.model, self.dt
        B = len(ids)
        gens = [self.noise.stream(i) for i in ids]
        state = FieldState.zeros(model, g, (B,))
        parts = (FieldState.zeros(model, g, (B,)), FieldState.zeros(model, g, (B,))) if split else None
        frozen = {}
        frozen_coef = {}
        path = np.zeros((B, len(record_steps))) if record_steps else None
        sig_path = np.zeros((B, n)) if split else None
        b_path = np.zeros((B, n)) if split else None
        rec_index = {s: i for i, s in enumerate(record_steps)}
        if 0 in rec_index:
            path[:, rec_index[0]] = 0.0
        zero = _zero_mode(g)
        for k in range(n):
            if k in branch_at:
                u0 = g.value_at_origin(state.u_hat)
                for j in branch_at[k]:
                    frozen[j] = state.copy()
                    frozen_coef[j] = (model.sigma(u0), model.b(u0))
            w_hat = self.noise.coefficients(np.stack([self.noise.draw(gen) for gen in gens]), dt)
            if split:
                u0 = g.value_at_origin(state.u_hat)
                sig_path[:, k] = model.sigma(u0) ** 2
                b_path[:, k] = model.b(u0) ** 2
            noise_hat, drift_hat = _forcing(model, g, state, w_hat, dt, self.workers)
            if split:
                self.prop.step(parts[0], noise_hat, 0.0)
                self.prop.step(parts[1], 0.0, drift_hat)
            self.prop.step(state, noise_hat, drift_hat)
            for j, st in frozen.items():
                s_bar, b_bar = frozen_coef[j]
                shape = (B,) + (1,) * g.d
                drift = np.zeros_like(w_hat)
                drift[zero] = b_bar * dt
                self.prop.step(st, s_bar.reshape(shape) * w_hat, drift)
            if k + 1 in rec_index:
                path[:, rec_index[k + 1]] = g.value_at_origin(state.u_hat)
        u_t0 = g.value_at_origin(state.u_hat)
        fr = None
        if n_eps:
            fr = np.empty((B, n_eps))
            for j, eps in enumerate(branch_eps):
                fr[:, j] = u_t0 if eps == 0 else g.value_at_origin(frozen[j].u_hat)
        out = RunOutput(ids, u_t0, path, fr)
        if split:
            out.noise_part = g.value_at_origin(parts[0].u_hat)
            out.drift_part = g.value_at_origin(parts[1].u_hat)
            out.sigma_sq_path, out.b_sq_path = sig_path, b_path
        if keep_fields:
            out.fields = g.to_physical(state.u_hat, self.workers)
        return out


# ---------------------------------------------------------------------------
# public operations


@dataclass
class ReplicaResult:
    u_t0: float
    u_eps_t0: Optional[float]
    seed: int
    replica: int = 0


@dataclass
class MomentEstimate:
    mean: float
    stderr: float
    replicas: int


def _moment(x: np.ndarray) -> MomentEstimate:
    x = np.asarray(x, dtype=float)
    n = len(x)
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return MomentEstimate(float(np.mean(x)) if n else math.nan, se, n)


def simulate_at_origin(model: ModelSpec, grid: LatticeGrid, dt: float, t: float, seed: int,
                       replica: int = 0, workers: int = 1) -> float:
    """``u(t, 0)`` for one replica from zero initial data."""
    return float(Simulator(model, grid, dt, seed, workers).run(t, [replica]).u_t0[0])


def simulate(model: ModelSpec, grid: LatticeGrid, dt: float, t: float, replicas: int, seed: int,
             workers: int = 1) -> np.ndarray:
    """``u(t, 0)`` for replicas ``0 .. replicas-1``."""
    return Simulator(model, grid, dt, seed, workers).run(t, replicas).u_t0


def simulate_linear_exact(sigma1: float, model: ModelSpec, t: float, seed: int, size=None,
                          cfg=None) -> np.ndarray:
    """Draw from ``N(0, sigma1^2 g(t))``, the exact law of the linear solution.

    The model must have constant ``sigma`` equal to ``sigma1`` and ``b == 0``.
    """
    from .hypotheses import compute_g

    if not model.is_linear():
        raise ValueError("simulate_linear_exact needs constant sigma and b == 0")
    if not math.isclose(model.sigma.constant_value, sigma1, rel_tol=0, abs_tol=1e-15):
        raise ValueError("sigma1 differs from the model's constant sigma")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    if sigma1 == 0.0:
        return np.zeros(() if size is None else size)
    sd = abs(sigma1) * math.sqrt(compute_g(model, cfg, t))
    return rng.normal(0.0, sd, size=size)


def smoothing_pair(model: ModelSpec, grid: LatticeGrid, dt: float, t: float, eps: float, seed: int,
                   replica: int = 0, workers: int = 1) -> ReplicaResult:
    """``u(t,0)`` and the frozen-coefficient ``u^eps(t,0)`` under identical noise."""
    if eps != 0 and not 0 < eps < t + 1e-15:
        raise ValueError("need 0 < eps <= t")
    out = Simulator(model, grid, dt, seed, workers).run(t, [replica], branch_eps=[eps])
    return ReplicaResult(float(out.u_t0[0]), float(out.frozen[0, 0]), seed, replica)


def smoothing_pairs(model: ModelSpec, grid: LatticeGrid, dt: float, t: float, eps_grid, replicas: int,
                    seed: int, workers: int = 1) -> RunOutput:
    """All ``eps`` branches for many replicas; ``frozen[:, j]`` pairs with ``eps_grid[j]``."""
    return Simulator(model, grid, dt, seed, workers).run(t, replicas, branch_eps=list(eps_grid))


def smoothing_moments(model: ModelSpec, grid: LatticeGrid, dt: float, t: float, eps_grid,
                      replicas: int, seed: int, workers: int = 1) -> list:
    """``E[(u - u^eps)^2]`` with standard errors for each ``eps``."""
    out = smoothing_pairs(model, grid, dt, t, eps_grid, replicas, seed, workers)
    return [_moment((out.u_t0 - out.frozen[:, j]) ** 2) for j in range(len(eps_grid))]


def increment_moments(model: ModelSpec, grid: LatticeGrid, dt: float, s: float, lags, replicas: int,
                      seed: int, workers: int = 1) -> list:
    """``E[(u(s+h,0) - u(s,0))^2]`` for each lag ``h``, all lags on one path per replica."""
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0):
        raise ValueError("lags must be nonnegative")
    s_step = _n_steps(s, dt) if s > 0 else 0
    steps = [s_step + (_n_steps(h, dt) if h > 0 else 0) for h in lags]
    t_end = max(steps) * dt
    if t_end > model.T * (1 + 1e-12):
        raise ValueError("s + lag exceeds the horizon T")
    if t_end == 0:
        return [MomentEstimate(0.0, 0.0, replicas) for _ in lags]
    out = Simulator(model, grid, dt, seed, workers).run(t_end, replicas, record_steps=[s_step] + steps)
    recorded = sorted(set([s_step] + steps))
    col = {st: i for i, st in enumerate(recorded)}
    base = out.path[:, col[s_step]]
    return [_moment((out.path[:, col[st]] - base) ** 2) for st in steps]


def increment_moment(model: ModelSpec, grid: LatticeGrid, dt: float, s: float, t: float, replicas: int,
                     seed: int, workers: int = 1) -> MomentEstimate:
    """Monte Carlo ``E[(u(t,0) - u(s,0))^2]`` with its standard error."""
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if s == t:
        return MomentEstimate(0.0, 0.0, replicas)
    return increment_moments(model, grid, dt, s, [t - s], replicas, seed, workers)[0]


# ---------------------------------------------------------------------------
# oracles and checks


def linear_variance_oracle(model: ModelSpec, grid: LatticeGrid, dt: float, t: float,
                           sigma1: float = 1.0) -> float:
    """Exact variance of the lattice scheme's ``u(t,0)`` for constant ``sigma`` and ``b = 0``."""
    n = _n_steps(t, dt)
    w2 = cell_masses(grid, model.measure) * grid.multiplicity()
    xi = grid.wavenumber()
    if model.kernel.family is Family.WAVE:
        acc = np.zeros_like(xi)
        for j in range(n):
            lag = t - (j + 0.5) * dt
            acc += (lag * np.sinc(lag * xi / math.pi)) ** 2
        per_mode = acc * dt
    else:
        lam = FOUR_PI_SQ * xi ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            per_mode = np.where(lam > 0, -np.expm1(-2.0 * lam * n * dt) / (2.0 * lam), n * dt)
    return float(sigma1 ** 2 * np.sum(w2 * per_mode))


def increment_variance_oracle(model: ModelSpec, grid: LatticeGrid, dt: float, s: float, lag: float) -> float:
    """Exact lattice ``E[(u(s+h,0) - u(s,0))^2]`` for ``sigma = 1``, ``b = 0``."""
    n_s = _n_steps(s, dt) if s > 0 else 0
    n_t = n_s + _n_steps(lag, dt)
    t, s = n_t * dt, n_s * dt
    w2 = cell_masses(grid, model.measure) * grid.multiplicity()
    xi = grid.wavenumber()
    acc = np.zeros_like(xi)
    for j in range(n_t):
        if model.kernel.family is Family.WAVE:
            mid = (j + 0.5) * dt
            a = (t - mid) * np.sinc((t - mid) * xi / math.pi)
            b = (s - mid) * np.sinc((s - mid) * xi / math.pi) if j < n_s else 0.0
            acc += (a - b) ** 2 * dt
        else:
            lam = FOUR_PI_SQ * xi ** 2
            x = lam * dt
            with np.errstate(invalid="ignore", divide="ignore"):
                var = np.where(x > 0, -np.expm1(-2.0 * x) / (2.0 * lam), dt)
            end = (j + 1) * dt
            a = np.exp(-lam * (t - end))
            b = np.exp(-lam * (s - end)) if j < n_s else 0.0
            acc += (a - b) ** 2 * var
    return float(np.sum(w2 * acc))


@dataclass
class IsometryReport:
    lhs_noise: MomentEstimate
    rhs_noise: float
    lhs_drift: MomentEstimate
    rhs_drift: float
    holds: bool
    details: dict = field(default_factory=dict)


def isometry_check(model: ModelSpec, grid: LatticeGrid, dt: float, t: float, replicas: int,
                   seed: int = 0, cfg=None, workers: int = 1) -> IsometryReport:
    """Monte Carlo second moments of the stochastic and drift parts against their bounds.

    Noise part: ``int_0^t E[sigma(u(s,0))^2] G1(t - s) ds`` with
    ``G1(r) = sup_eta int |F(r)(xi + eta)|^2 mu(d xi)``.
    Drift part: ``max(t, 1) * int_0^t E[b(u(s,0))^2] sup_eta |F(t-s)(eta)|^2 ds``
    (the factor comes from Cauchy-Schwarz in time). Both hold within
    3 standard errors when ``holds`` is true.
    """
    from .kernels import sup_kernel_sq
    from .quadrature import QuadratureConfig, sup_over_shift

    cfg = cfg or QuadratureConfig()
    n = _n_steps(t, dt)
    out = Simulator(model, grid, dt, seed, workers).run(t, replicas, split=True)
    lhs_n = _moment(out.noise_part ** 2)
    lhs_d = _moment(out.drift_part ** 2)
    e_sig = np.mean(out.sigma_sq_path, axis=0)
    e_b = np.mean(out.b_sq_path, axis=0)
    # coefficients are frozen over each step, so integrate the kernel factor per step
    from .quadrature import cumulative_time_integral

    kernel, measure = model.kernel, model.measure
    G1 = lambda r: sup_over_shift(kernel.square_profile(r), measure, cfg).value
    G2 = lambda r: sup_kernel_sq(kernel, r)
    lags = dt * np.arange(1, n + 1)
    c1 = np.concatenate([[0.0], cumulative_time_integral(G1, lags, cfg)])
    c2 = np.concatenate([[0.0], cumulative_time_integral(G2, lags, cfg)])
    # step j covers lags (t - (j+1) dt, t - j dt], i.e. cells n-1-j of the cumulative grid
    cell1, cell2 = np.diff(c1)[::-1], np.diff(c2)[::-1]
    rhs_n = float(np.sum(e_sig * cell1))
    rhs_d = float(np.sum(e_b * cell2))
    rhs_d *= max(t, 1.0)
    ok_n = lhs_n.mean <= rhs_n + 3.0 * lhs_n.stderr + 1e-300
    ok_d = lhs_d.mean <= rhs_d + 3.0 * lhs_d.stderr + 1e-300
    return IsometryReport(lhs_n, rhs_n, lhs_d, rhs_d, bool(ok_n and ok_d),
                          {"noise_ok": bool(ok_n), "drift_ok": bool(ok_d), "steps": n})


def write_samples_csv(path, seed: int, t: float, u_t0, u_eps_t0=None) -> None:
    """CSV with columns ``seed, t, u_t0, u_eps_t0`` (one row per replica)."""
    u_t0 = np.asarray(u_t0, dtype=float)
    eps = np.full_like(u_t0, np.nan) if u_eps_t0 is None else np.asarray(u_eps_t0, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "t", "u_t0", "u_eps_t0"])
        for a, b in zip(u_t0, eps):
            w.writerow([seed, repr(float(t)), repr(float(a)), "" if math.isnan(b) else repr(float(b))])
