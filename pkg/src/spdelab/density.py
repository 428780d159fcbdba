"""Besov-space toolkit for one-dimensional laws.

Iterated differences on uniform grids, the discrete ``B^s_{1,inf}`` norm,
Gaussian-derivative ``L^1`` norms, kernel density estimation and Monte Carlo
checks of the difference-decay criterion for the existence of a density.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, signal, special

_ALIGN_TOL = 1e-9


# ---------------------------------------------------------------------------
# grid functions and differences


@dataclass(frozen=True)
class GridFunction:
    """Samples ``values[i] = f(x0 + i dx)`` on a uniform grid."""

    x0: float
    dx: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, fn: Callable, lo: float, hi: float, n: int) -> "GridFunction":
        """Cell-centred samples of ``fn`` on ``n`` cells covering ``[lo, hi]``."""
        dx = (hi - lo) / n
        x = lo + dx * (np.arange(n) + 0.5)
        return cls(float(x[0]), dx, fn(x))

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(len(self.values))

    def l1(self) -> float:
        """Rectangle-rule ``L^1`` norm."""
        return float(np.sum(np.abs(self.values)) * self.dx)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.dx)

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation, zero outside the grid."""
        return np.interp(x, self.x, self.values, left=0.0, right=0.0)


def grid_steps(f: GridFunction, h: float) -> int:
    """Number of grid cells in ``h``; raises unless ``h`` is a multiple of ``dx``."""
    m = h / f.dx
    k = int(round(m))
    if abs(m - k) > _ALIGN_TOL * max(1.0, abs(m)):
        raise ValueError(f"h = {h} is not a multiple of dx = {f.dx}")
    return k


def _binomial_weights(n: int) -> np.ndarray:
    """``(-1)^(n-j) binom(n, j)`` for ``j = 0..n``."""
    j = np.arange(n + 1)
    return special.comb(n, j, exact=False) * (-1.0) ** (n - j)


def finite_difference(f: GridFunction, h: float, n: int, mode: str = "overlap") -> GridFunction:
    """``(Delta_h^n f)(x) = sum_j (-1)^(n-j) binom(n, j) f(x + j h)``.

    Parameters
    ----------
    f : GridFunction
    h : float
        Step, a (possibly negative) multiple of ``f.dx`` with ``|h| <= 1``.
    n : int
        Order, at least 1.
    mode : {"overlap", "full"}
        ``"overlap"`` keeps the points where every ``x + j h`` lies on the grid.
        ``"full"`` extends ``f`` by zero, so the result covers every ``x`` at
        which some ``x + j h`` does.
    """
    if n < 1:
        raise ValueError("order n must be at least 1")
    if abs(h) > 1.0 + _ALIGN_TOL:
        raise ValueError("|h| must not exceed 1")
    if mode not in ("overlap", "full"):
        raise ValueError("mode must be 'overlap' or 'full'")
    k = grid_steps(f, h)
    w = _binomial_weights(n)
    v = f.values
    if k < 0:
        # Delta_{-h} f (x) = (-1)^n Delta_h f (x - n h)
        out = finite_difference(f, -h, n, mode)
        return GridFunction(out.x0 - n * h, f.dx, (-1.0) ** n * out.values)
    if k == 0:
        return GridFunction(f.x0, f.dx, np.zeros_like(v))
    if mode == "full":
        pad = np.zeros(n * k)
        v = np.concatenate([pad, v, pad])
        x0 = f.x0 - n * k * f.dx
    else:
        x0 = f.x0
    m = len(v) - n * k
    if m <= 0:
        return GridFunction(x0, f.dx, np.zeros(0))
    out = np.zeros(m)
    for j, wj in enumerate(w):
        out += wj * v[j * k: j * k + m]
    return GridFunction(x0, f.dx, out)


def difference_norms(f: GridFunction, h_grid, n: int, mode: str = "full") -> np.ndarray:
    """``||Delta_h^n f||_{L^1}`` for each ``h``."""
    return np.array([finite_difference(f, h, n, mode).l1() for h in h_grid])


def besov_norm(f: GridFunction, s: float, n: int, h_grid, mode: str = "full") -> float:
    """Discrete ``||f||_{L^1} + max_h |h|^(-s) ||Delta_h^n f||_{L^1}``.

    A lower estimate of the ``B^s_{1,inf}`` norm; the sup runs over ``h_grid``
    only. ``mode="full"`` treats ``f`` as zero off its grid.
    """
    if not 0 < s < n:
        raise ValueError("need 0 < s < n")
    h = np.asarray(h_grid, dtype=float)
    if h.size == 0:
        return f.l1()
    if np.any(h < f.dx * (1 - _ALIGN_TOL)) or np.any(h > 1 + _ALIGN_TOL):
        raise ValueError("h_grid must lie in [dx, 1]")
    if not np.any(f.values):
        return 0.0
    return f.l1() + float(np.max(h ** (-s) * difference_norms(f, h, n, mode)))


def aligned_h_grid(dx: float, count: int, h_min: Optional[float] = None, h_max: float = 1.0) -> np.ndarray:
    """Geometric grid of distinct multiples of ``dx`` in ``[h_min, h_max]``."""
    lo = max(1, int(math.ceil((h_min or dx) / dx - _ALIGN_TOL)))
    hi = int(math.floor(h_max / dx + _ALIGN_TOL))
    if hi < lo:
        raise ValueError("no grid multiple in the requested range")
    k = np.unique(np.rint(np.geomspace(lo, hi, count)).astype(int))
    return k * dx


# ---------------------------------------------------------------------------
# Gaussian pieces


def hermite(n: int, y):
    """Physicists' Hermite polynomial by the three-term recurrence."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    y = np.asarray(y, dtype=float)
    h_prev, h = np.ones_like(y), 2.0 * y
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for k in range(1, n):
        h_prev, h = h, 2.0 * y * h - 2.0 * k * h_prev
    return h if h.ndim else float(h)


@lru_cache(maxsize=None)
def _hermite_abs_moment(n: int) -> float:
    """``int |H_n(y)| exp(-y^2) dy / sqrt(pi)``, split at the roots of ``H_n``."""
    if n == 0:
        return 1.0
    roots = special.roots_hermite(n)[0]
    f = lambda y: abs(hermite(n, y)) * math.exp(-y * y)
    edges = [-np.inf, *roots, np.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return total / math.sqrt(math.pi)


def gaussian_derivative_l1(n: int, variance: float) -> float:
    """``||phi^(n)||_{L^1}`` for the centred Gaussian density of the given variance.

    ``phi^(n)(x) = (-1)^n (2 v)^(-n/2) H_n(x / sqrt(2 v)) phi(x)``, so the norm
    is ``(2 v)^(-n/2) int |H_n| exp(-y^2) dy / sqrt(pi)``; the integral is
    computed once per ``n``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not variance > 0:
        raise ValueError("variance must be positive")
    return (2.0 * variance) ** (-0.5 * n) * _hermite_abs_moment(n)


def gaussian_pdf(x, variance: float = 1.0, mean: float = 0.0) -> np.ndarray:
    return np.exp(-0.5 * (np.asarray(x) - mean) ** 2 / variance) / math.sqrt(2 * math.pi * variance)


# ---------------------------------------------------------------------------
# kernel density estimation


@dataclass(frozen=True)
class DensityEstimate:
    grid: GridFunction
    bandwidth: float
    sample_count: int

    def l1_distance(self, pdf: Callable) -> float:
        """Rectangle-rule ``L^1`` distance to ``pdf`` on the estimate's grid plus the outside mass."""
        x = self.grid.x
        p = pdf(x)
        inside = float(np.sum(np.abs(self.grid.values - p)) * self.grid.dx)
        outside = max(0.0, 1.0 - float(np.sum(p) * self.grid.dx))
        return inside + outside


def silverman_bandwidth(samples: np.ndarray) -> float:
    return 1.06 * float(np.std(samples, ddof=1)) * len(samples) ** (-0.2)


def kde(samples, bandwidth: Optional[float] = None, cells_per_bandwidth: int = 8,
        max_points: int = 1 << 16) -> DensityEstimate:
    """Gaussian kernel density estimate on a uniform grid.

    The grid covers ``mean +- 6 sd`` and ``[min - 4 bw, max + 4 bw]``.
    Samples are linearly binned, then convolved with the sampled kernel.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ValueError("kde needs at least 100 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise ValueError("samples have zero variance")
    bw = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not bw > 0:
        raise ValueError("bandwidth must be positive")
    mu = float(np.mean(x))
    lo = min(mu - 6 * sd, x.min() - 4 * bw)
    hi = max(mu + 6 * sd, x.max() + 4 * bw)
    dx = bw / cells_per_bandwidth
    if (hi - lo) / dx > max_points:
        dx = (hi - lo) / max_points
    m = int(math.ceil((hi - lo) / dx)) + 1
    # linear binning keeps the total mass exactly
    pos = (x - lo) / dx
    i = np.clip(np.floor(pos).astype(int), 0, m - 2)
    frac = pos - i
    counts = np.bincount(i, 1.0 - frac, minlength=m) + np.bincount(i + 1, frac, minlength=m)
    half = int(math.ceil(6 * bw / dx))
    kx = dx * np.arange(-half, half + 1)
    kern = np.exp(-0.5 * (kx / bw) ** 2)
    kern /= kern.sum()
    dens = signal.fftconvolve(counts, kern, mode="full")[half: half + m] / (x.size * dx)
    dens = np.maximum(dens, 0.0)
    return DensityEstimate(GridFunction(lo, dx, dens), bw, int(x.size))


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Bounded test function with a numerically computed ``C^alpha_b`` norm."""

    name: str
    fn: Callable
    support: tuple
    norm: float

    def __call__(self, x):
        return self.fn(x)


def _bump(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1
    out[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
    return out


def holder_norm(fn: Callable, lo: float, hi: float, alpha: float, points: int = 4001,
                lags: int = 200) -> float:
    """``sup|f| + sup |f(x) - f(y)| / |x - y|^alpha`` on a uniform grid of ``[lo, hi]``.

    Lags run over a geometric subset of grid offsets; the result is a
    lower estimate that converges as the grid is refined.
    """
    x = np.linspace(lo, hi, points)
    v = fn(x)
    dx = x[1] - x[0]
    ks = np.unique(np.rint(np.geomspace(1, points - 1, lags)).astype(int))
    best = 0.0
    for k in ks:
        best = max(best, float(np.max(np.abs(v[k:] - v[:-k]))) / (k * dx) ** alpha)
    return float(np.max(np.abs(v))) + best


def bump_function(centre: float = 0.0, width: float = 1.0, alpha: float = 0.5) -> TestFunction:
    """``exp(-1 / (1 - z^2))`` with ``z = (x - centre) / width``."""
    fn = lambda x: _bump((np.asarray(x, dtype=float) - centre) / width)
    lo, hi = centre - width, centre + width
    return TestFunction(f"bump({centre:g},{width:g})", fn, (lo, hi), holder_norm(fn, lo, hi, alpha))


def spike_function(centre: float = 0.0, alpha: float = 0.5, width: float = 1.0) -> TestFunction:
    """``|x - centre|^alpha`` damped by a bump of half-width ``width``; exactly ``alpha``-Hölder at the centre."""
    def fn(x):
        z = (np.asarray(x, dtype=float) - centre) / width
        return np.abs(z) ** alpha * _bump(z) * math.e
    lo, hi = centre - width, centre + width
    return TestFunction(f"spike({centre:g},{alpha:g},{width:g})", fn, (lo, hi), holder_norm(fn, lo, hi, alpha))


def default_phi_family(samples, alpha: float) -> list:
    """Spikes at the median and at +-1 sd plus a smooth bump, scaled to the sample spread."""
    x = np.asarray(samples, dtype=float)
    sd = float(np.std(x))
    sd = sd if sd > 0 else 1.0
    med = float(np.median(x))
    fam = [spike_function(med + k * sd, alpha, 2.0 * sd) for k in (-1.0, 0.0, 1.0)]
    fam.append(bump_function(med, 2.0 * sd, alpha))
    return fam


# ---------------------------------------------------------------------------
# Monte Carlo criteria


@dataclass
class FitResult:
    slope: float
    intercept: float
    r2: float
    points: int


def _loglog_fit(h, y) -> FitResult:
    h, y = np.asarray(h, float), np.asarray(y, float)
    if len(h) < 2:
        return FitResult(math.nan, math.nan, math.nan, len(h))
    lx, ly = np.log(h), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return FitResult(float(slope), float(icpt), r2, len(h))


def difference_expectation(samples, phi: Callable, h: float, n: int):
    """Monte Carlo ``E[Delta_h^n phi(u)]`` and its standard error."""
    x = np.asarray(samples, dtype=float)
    w = _binomial_weights(n)
    vals = sum(wj * phi(x + j * h) for j, wj in enumerate(w))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    return float(np.mean(vals)), se


@dataclass
class DecayReport:
    """Per-``(phi, h)`` table of ``|E Delta_h^n phi(u)| / ||phi||_{C^alpha}`` with fits."""

    n: int
    alpha: float
    table: list
    fits: dict
    a: float

    @property
    def besov_index(self) -> float:
        return self.a - self.alpha


def criterion_decay(samples, phi_family: Optional[Sequence[TestFunction]], n: int, alpha: float,
                    h_grid) -> DecayReport:
    """Fit ``a`` in ``|E[Delta_h^n phi(u)]| <= C ||phi||_{C^alpha} |h|^a``.

    Each test function gets its own log-log fit over the ``h`` where the mean
    exceeds two standard errors; the reported ``a`` is the smallest of them,
    since the criterion asks for a bound uniform over the family.
    """
    x = np.asarray(samples, dtype=float)
    fam = default_phi_family(x, alpha) if phi_family is None else list(phi_family)
    rows, fits = [], {}
    for phi in fam:
        hs, ys = [], []
        for h in h_grid:
            mean, se = difference_expectation(x, phi, h, n)
            resolved = abs(mean) > 2.0 * se
            rows.append({"phi": phi.name, "h": float(h), "mean": mean, "stderr": se,
                         "scaled": abs(mean) / phi.norm, "resolved": bool(resolved)})
            if resolved:
                hs.append(h)
                ys.append(abs(mean) / phi.norm)
        fits[phi.name] = _loglog_fit(hs, ys)
    slopes = [f.slope for f in fits.values() if f.points >= 3 and np.isfinite(f.slope)]
    a = min(slopes) if slopes else math.nan
    return DecayReport(n, float(alpha), rows, fits, a)


@dataclass
class MasterBoundReport:
    """Outcome of the ``Delta_h^n`` master bound with a constant fitted on the coarsest ``h``."""

    n: int
    alpha: float
    constant: float
    table: list
    fraction_holding: float
    optimal_eps_table: list
    lhs_slope: float
    target_exponent: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


def master_bound_check(model, t: float, eps_grid, h_grid, n: int, alpha: float, replicas: int,
                       grid=None, dt: Optional[float] = None, seed: int = 0, phi=None, cfg=None,
                       optimal=None, workers: int = 1) -> MasterBoundReport:
    """Compare ``|E Delta_h^n phi(u(t,0))|`` with ``C (|h|^n g(eps)^(-n/2) + E|u^eps - u|^2^(alpha/2))``.

    ``g`` comes from quadrature and ``E|u^eps - u|^2`` from coupled smoothing
    pairs. ``C`` is fitted at the coarsest ``h`` (largest ratio over ``eps``)
    and the bound is then tested with three standard errors of slack on the
    remaining grid. ``optimal`` (an ``OptimalParameters``) adds the curve
    ``eps = (t/2)|h|^(rho/gamma)`` when those ``eps`` are available.
    """
    from .hypotheses import compute_g
    from .simulator import LatticeGrid, smoothing_pairs

    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    eps_grid = [float(e) for e in eps_grid]
    h_grid = np.sort(np.asarray(h_grid, dtype=float))[::-1]
    grid = grid if grid is not None else LatticeGrid.for_model(model, 32, horizon=t)
    dt = dt if dt is not None else min(eps_grid)
    out = smoothing_pairs(model, grid, dt, t, eps_grid, replicas, seed, workers)
    u = out.u_t0
    gap = [float(np.mean((u - out.frozen[:, j]) ** 2)) for j in range(len(eps_grid))]
    g_eps = [compute_g(model, cfg, e) for e in eps_grid]
    phi = phi if phi is not None else spike_function(float(np.median(u)), alpha, 2.0 * float(np.std(u)))
    lhs = []
    for h in h_grid:
        if h == 0:
            lhs.append((0.0, 0.0))
        else:
            lhs.append(difference_expectation(u, phi, h, n))
    rhs = lambda h, j: abs(h) ** n * g_eps[j] ** (-n / 2.0) + gap[j] ** (alpha / 2.0)
    coarse = h_grid[0]
    c = max(abs(lhs[0][0]) / rhs(coarse, j) for j in range(len(eps_grid)) if rhs(coarse, j) > 0)
    table, ok = [], []
    for (mean, se), h in zip(lhs, h_grid):
        for j, eps in enumerate(eps_grid):
            bound = c * rhs(h, j)
            holds = abs(mean) <= bound + 3.0 * se
            ok.append(holds)
            table.append({"h": float(h), "eps": eps, "lhs": abs(mean), "stderr": se,
                          "bound": bound, "holds": bool(holds)})
    opt_rows, lhs_slope, target = [], math.nan, math.nan
    if optimal is not None:
        target = optimal.boundary_product
        for (mean, se), h in zip(lhs, h_grid):
            e = optimal.epsilon(h, t)
            near = int(np.argmin([abs(math.log(x / e)) for x in eps_grid])) if e > 0 else 0
            opt_rows.append({"h": float(h), "eps_rule": e, "eps_used": eps_grid[near],
                             "lhs": abs(mean), "bound": c * rhs(h, near)})
    res = [(h, abs(m)) for (m, se), h in zip(lhs, h_grid) if h > 0 and abs(m) > 2 * se]
    if len(res) >= 3:
        lhs_slope = _loglog_fit(*zip(*res)).slope
    return MasterBoundReport(n, float(alpha), float(c), table, float(np.mean(ok)), opt_rows,
                             float(lhs_slope), float(target))


# ---------------------------------------------------------------------------
# Besov report


@dataclass
class BesovReport:
    n: int
    s_grid: list
    norm_estimates: list
    decay_slope: float
    s_empirical: float
    refined_norms: list = field(default_factory=list)
    h_grid: list = field(default_factory=list)
    difference_norms: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


def s_empirical(f: GridFunction, s_grid, n: int, h_grid, refined_h_grid, rel_tol: float = 0.05):
    """Largest ``s`` such that every probed ``s' <= s`` changes by at most ``rel_tol`` under refinement.

    Returns ``(s_emp, coarse_norms, refined_norms)``; ``s_emp`` is 0 when even the
    smallest probed ``s`` is unstable.
    """
    s_grid = sorted(float(s) for s in s_grid)
    coarse = [besov_norm(f, s, n, h_grid) for s in s_grid]
    fine = [besov_norm(f, s, n, refined_h_grid) for s in s_grid]
    best = 0.0
    for s, a, b in zip(s_grid, coarse, fine):
        if abs(b - a) > rel_tol * abs(a):
            break
        best = s
    return best, coarse, fine


def besov_report(f: GridFunction, n: int, s_grid, h_count: int = 12, h_min: Optional[float] = None,
                 rel_tol: float = 0.05) -> BesovReport:
    """Norms on an aligned ``h``-grid and on its refinement (twice the points, half the smallest ``h``)."""
    if any(s >= n for s in s_grid):
        raise ValueError("n must exceed every probed s")
    h_min = h_min or 8 * f.dx
    coarse_h = aligned_h_grid(f.dx, h_count, h_min)
    fine_h = aligned_h_grid(f.dx, 2 * h_count, max(f.dx, 0.5 * h_min))
    s_emp, coarse, fine = s_empirical(f, s_grid, n, coarse_h, fine_h, rel_tol)
    dn = difference_norms(f, coarse_h, n)
    pos = dn > 0
    slope = _loglog_fit(coarse_h[pos], dn[pos]).slope if pos.sum() >= 2 else math.nan
    return BesovReport(n, [float(s) for s in s_grid], coarse, float(slope), s_emp, fine,
                       coarse_h.tolist(), dn.tolist())


def write_table_csv(path, rows: list) -> None:
    import csv

    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
