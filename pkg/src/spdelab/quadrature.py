"""Radial and temporal quadrature for spectral functionals.

The workhorse is :func:`radial_integral`, which evaluates

    J(a) = int_{R^d} F(|xi + eta|) mu(d xi),   |eta| = a,

for a radial profile ``F`` and a radial spectral density, by integrating
``F(r) r^(d-1) S(r, a)`` over ``r`` where ``S`` is the shifted spherical
integral of the density. Oscillatory profiles are integrated panel by panel
(one Gauss-Legendre panel per half period) up to a cutoff; the tail beyond the
cutoff comes from the large-``r`` cosine expansion of the profile: a power
series in the shift for Riesz densities, Fourier-weighted QUADPACK otherwise.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import mpmath
import numpy as np
from scipy import integrate
from scipy.optimize import minimize, minimize_scalar

from .kernels import MeasureKind, Profile, SpectralMeasure, sphere_area


class DivergenceError(ArithmeticError):
    """A spectral integral failed to stabilise, i.e. the integrability hypothesis fails."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Tuning knobs for every quadrature in the package.

    ``radial_cutoff`` is measured in units of the profile's frequency scale.
    ``panel_count`` is the number of geometrically graded time panels placed
    below the smallest requested time.
    """

    radial_cutoff: float = 600.0
    tail_tolerance: float = 1e-7
    panel_count: int = 4
    eta_grid: tuple = tuple(np.geomspace(1e-2, 1e2, 13))
    time_grid: tuple = tuple(np.geomspace(0.01, 1.0, 9))
    gauss_order: int = 16
    time_order: int = 6
    grading_ratio: float = 0.25
    refine_iters: int = 16
    max_doublings: int = 8
    max_panels: int = 200_000
    t0_fraction: float = 0.5

    def __post_init__(self):
        if not self.radial_cutoff > 0:
            raise ValueError("radial_cutoff must be positive")
        if not self.tail_tolerance > 0:
            raise ValueError("tail_tolerance must be positive")
        if self.panel_count < 1:
            raise ValueError("panel_count must be a positive integer")
        if len(self.time_grid) < 8:
            raise ValueError("time_grid needs at least 8 points")


@lru_cache(maxsize=64)
def _legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def gauss_panels(fn: Callable, edges, order: int = 16) -> float:
    """Composite Gauss-Legendre rule over consecutive ``edges`` (vectorised)."""
    edges = np.asarray(edges, dtype=float)
    if len(edges) < 2:
        return 0.0
    x, w = _legendre(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = lo + half * (x + 1.0)
    vals = np.asarray(fn(nodes.ravel()), dtype=float).reshape(nodes.shape)
    return float(np.sum(vals * w * half))


@dataclass
class RadialResult:
    value: float
    tail: float
    tail_error: float
    cutoff: float


def _quad(fn, lo, hi, epsabs=0.0, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(fn, lo, hi, limit=200, epsabs=epsabs, epsrel=1e-11, **kw)
    return val


def _quad_err(fn, lo, hi, epsabs=0.0, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(fn, lo, hi, limit=200, limlst=100, epsabs=epsabs, epsrel=1e-11, **kw)


def _weight_fn(measure: SpectralMeasure, a: float):
    d = measure.d
    if measure.kind is MeasureKind.RIESZ and a == 0.0:
        omega = sphere_area(d)
        beta = measure.beta
        return lambda r: omega * np.asarray(r, dtype=float) ** (beta - 1.0)
    return lambda r: np.asarray(r, dtype=float) ** (d - 1) * measure.spherical_mean(r, a)


def _panel_edges(profile: Profile, a: float, R: float, cfg: QuadratureConfig) -> np.ndarray:
    if profile.half_period is not None:
        hp = profile.half_period
        n = int(math.ceil(R / hp))
        if n > cfg.max_panels:
            raise DivergenceError(f"radial cutoff {R:.3g} needs {n} panels (> {cfg.max_panels})")
        edges = np.minimum(hp * np.arange(n + 1, dtype=float), R)
    else:
        lo = 1e-3 * min(profile.scales)
        edges = np.concatenate([[0.0], np.geomspace(lo, R, 48)])
    if 0.0 < a < edges[-1]:
        edges = np.union1d(edges, [a])
    return edges


def _tail(profile: Profile, measure: SpectralMeasure, a: float, R: float):
    """Tail beyond ``R`` from the cosine expansion of the profile.

    Returns ``(value, error_estimate)``. Terms are never bounded one at a time
    because for kernel differences they nearly cancel.
    """
    terms = profile.tail_terms or ()
    if not terms:
        return 0.0, 0.0
    if measure.kind is MeasureKind.RIESZ:
        return _riesz_tail(terms, measure, a, R), 0.0
    weight = _weight_fn(measure, a)
    phi = lambda r: float(np.asarray(weight(np.array([r])))[0]) / (r * r)
    value = err = 0.0
    mean_amp = sum(amp for amp, kappa in terms if kappa == 0.0)
    if mean_amp != 0.0:
        value += mean_amp * _mean_tail(phi, measure, a, R)
    # QAWF needs an absolute tolerance; phi(R) * R is the size of the tail
    tol = 1e-14 * phi(R) * R
    for amp, kappa in terms:
        if kappa != 0.0 and amp != 0.0:
            v, e = _quad_err(phi, R, np.inf, epsabs=tol, weight="cos", wvar=kappa)
            value += amp * v
            err += abs(amp) * e
    return value, err


_SERIES_TOL = 1e-16
_SERIES_MAX = 60


def _riesz_tail(terms, measure: SpectralMeasure, a: float, R: float) -> float:
    """Riesz tail via the expansion of the shifted spherical mean in ``(a/r)^2``.

    For ``r > a``, ``r^(d-1) S(r, a) / r^2 = omega * sum_k c_k a^(2k) r^(beta-3-2k)``
    with hypergeometric coefficients ``c_k``, so the tail is a power series in
    ``a^2`` whose moments ``int_R^inf cos(kappa r) r^(-nu) dr`` do not depend on
    ``a`` and are cached across shifts.
    """
    beta, d = measure.beta, measure.d
    if beta >= 2.0:
        raise DivergenceError("r^(beta-3) tail is not integrable for beta >= 2")
    if a >= R:
        raise ValueError("tail series needs the cutoff beyond the shift")
    lam = d - beta
    p, q, c = lam / 2.0, lam / 2.0 - d / 2.0 + 1.0, d / 2.0
    x = (a / R) ** 2
    coef, total = 1.0, 0.0
    for k in range(_SERIES_MAX):
        nu = 3.0 - beta + 2.0 * k
        moment = sum(amp * _power_moment(kappa, nu, R) for amp, kappa in terms)
        contrib = coef * a ** (2 * k) * moment
        total += contrib
        if k > 0 and abs(coef) * x ** k < _SERIES_TOL:
            break
        if a == 0.0:
            break
        coef *= (p + k) * (q + k) / ((c + k) * (k + 1.0))
    return sphere_area(d) * total


@lru_cache(maxsize=1 << 16)
def _power_moment(kappa: float, nu: float, R: float) -> float:
    """``int_R^inf cos(kappa r) r^(-nu) dr`` via the generalized exponential integral."""
    if kappa == 0.0:
        return R ** (1.0 - nu) / (nu - 1.0)
    return float(mpmath.re(mpmath.expint(nu, -1j * kappa * R))) * R ** (1.0 - nu)


def _mean_tail(phi, measure: SpectralMeasure, a: float, R: float) -> float:
    if measure.kind is MeasureKind.RIESZ:
        beta = measure.beta
        if beta >= 2.0:
            raise DivergenceError("r^(beta-3) tail is not integrable for beta >= 2")
        if a == 0.0:
            return sphere_area(measure.d) * R ** (beta - 2.0) / (2.0 - beta)
        # r = R / u maps the tail onto (0, 1]; QAWS absorbs the u^(1 - beta) factor
        omega = sphere_area(measure.d)
        g = lambda u: phi(R / u) * R / (u * u) * u ** (beta - 1.0) if u > 0 else omega * R ** (beta - 2.0)
        return _quad(g, 0.0, 1.0, weight="alg", wvar=(1.0 - beta, 0.0))
    return _quad(phi, R, np.inf)


def radial_integral(profile: Profile, measure: SpectralMeasure, a: float = 0.0,
                    cfg: Optional[QuadratureConfig] = None) -> RadialResult:
    """Integrate ``F(|xi + eta|)`` against a radial spectral density, ``|eta| = a``."""
    cfg = cfg or QuadratureConfig()
    if measure.kind is MeasureKind.ATOMS:
        raise TypeError("use atom_sum for atomic measures")
    a = float(abs(a))
    weight = _weight_fn(measure, a)
    integrand = lambda r: profile(r) * weight(r)
    if profile.decay_radius is not None:
        R = max(profile.decay_radius, 0.0)
        body = _radial_body(integrand, profile, measure, a, R, cfg)
        return RadialResult(body, 0.0, 0.0, R)
    R = max(cfg.radial_cutoff * min(profile.scales), 4.0 * a)
    if profile.tail_terms is None:
        return _radial_extrapolated(integrand, profile, measure, a, R, cfg)

    for _ in range(cfg.max_doublings + 1):
        body = _radial_body(integrand, profile, measure, a, R, cfg)
        tail, err = _tail(profile, measure, a, R)
        total = body + tail
        if err <= cfg.tail_tolerance * max(abs(total), 1e-300):
            break
        R *= 2.0
    return RadialResult(total, tail, err, R)


def _radial_body(integrand, profile, measure, a, R, cfg) -> float:
    edges = _panel_edges(profile, a, R, cfg)
    if measure.kind is not MeasureKind.RIESZ or a >= edges[-1]:
        return gauss_panels(integrand, edges, cfg.gauss_order)
    # the Riesz weight is singular at r = a (at r = 0 when unshifted); the panels
    # touching that radius go to adaptive QUADPACK, the rest to Gauss-Legendre
    k = int(np.searchsorted(edges, a))
    lo_edge, hi_edge = max(k - 1, 0), min(k + 1, len(edges) - 1)
    total = gauss_panels(integrand, edges[: lo_edge + 1], cfg.gauss_order)
    total += gauss_panels(integrand, edges[hi_edge:], cfg.gauss_order)
    if a == 0.0:
        omega = sphere_area(measure.d)
        smooth = lambda r: float(profile(np.array([r]))[0]) * omega
        return total + _quad(smooth, 0.0, edges[hi_edge], weight="alg", wvar=(measure.beta - 1.0, 0.0))
    return (total + graded_toward(integrand, edges[lo_edge], a, cfg.gauss_order)
            + graded_toward(integrand, edges[hi_edge], a, cfg.gauss_order))


def graded_toward(fn: Callable, far: float, near: float, order: int = 16,
                  ratio: float = 0.15, floor: float = 1e-12) -> float:
    """Signed integral from ``far`` to ``near`` of a function with an integrable
    endpoint singularity at ``near`` (power or logarithmic type).

    Panels shrink geometrically towards ``near``; the last sliver is integrated
    as the power law fitted on the innermost panel.
    """
    width = abs(far - near)
    if width == 0.0:
        return 0.0
    sign = 1.0 if far < near else -1.0
    # stop grading where nodes would no longer resolve from ``near`` in floating point
    smallest = floor * max(abs(near), width)
    levels = max(int(math.ceil(math.log(smallest / width) / math.log(ratio))), 1)
    dist = width * ratio ** np.arange(levels + 1)  # distances from the singular point
    x, w = _legendre(order)
    lo, hi = dist[1:, None], dist[:-1, None]
    half = 0.5 * (hi - lo)
    nodes = lo + half * (x + 1.0)
    vals = np.asarray(fn(near - sign * nodes.ravel()), dtype=float).reshape(nodes.shape)
    body = float(np.sum(vals * w * half))
    head = _power_law_head(nodes[-1], vals[-1], dist[-1])
    return body + head


def _radial_extrapolated(integrand, profile, measure, a, R, cfg) -> RadialResult:
    """Generic path for profiles with unknown tail: extrapolate over cutoff doublings."""
    body = _radial_body(integrand, profile, measure, a, R, cfg)
    incs = []
    for _ in range(3):
        incs.append(_quad(lambda r: float(integrand(np.array([r]))[0]), R, 2.0 * R))
        R *= 2.0
    body += sum(incs)
    if abs(incs[-1]) <= cfg.tail_tolerance * max(abs(body), 1e-300):
        return RadialResult(body, 0.0, abs(incs[-1]), R)
    q = incs[-1] / incs[-2] if incs[-2] != 0 else math.inf
    if not (0.0 <= q < 1.0 - 1e-3) or abs(incs[-1]) > abs(incs[-2]):
        raise DivergenceError("radial integral does not stabilise; tail looks non-integrable")
    tail = incs[-1] * q / (1.0 - q)
    return RadialResult(body + tail, tail, abs(tail), R)


def atom_sum(profile: Profile, measure: SpectralMeasure, shift=None) -> float:
    """Exact ``sum_j m_j F(|xi_j + eta|)`` for an atomic measure."""
    pts = measure.atoms
    if shift is not None:
        pts = pts + np.asarray(shift, dtype=float)
    return float(np.sum(measure.masses * profile(np.linalg.norm(pts, axis=1))))


@dataclass
class SupResult:
    value: float
    argmax: object
    evaluations: int = 0


def inner_integral(profile: Profile, measure: SpectralMeasure, shift=0.0,
                   cfg: Optional[QuadratureConfig] = None) -> float:
    if measure.kind is MeasureKind.ATOMS:
        vec = np.zeros(measure.d) if np.isscalar(shift) and shift == 0.0 else shift
        return atom_sum(profile, measure, vec)
    return radial_integral(profile, measure, float(np.linalg.norm(shift)), cfg).value


def sup_over_shift(profile: Profile, measure: SpectralMeasure,
                   cfg: Optional[QuadratureConfig] = None) -> SupResult:
    """Grid search plus bounded refinement for ``sup_eta int F(|xi+eta|) mu(d xi)``.

    The zero shift is always a candidate, so the result is never below the
    unshifted integral.
    """
    cfg = cfg or QuadratureConfig()
    if measure.kind is MeasureKind.ATOMS:
        return _sup_atoms(profile, measure)
    grid = np.unique(np.concatenate([[0.0]] + [np.asarray(cfg.eta_grid) * s for s in profile.scales]))
    vals = np.array([radial_integral(profile, measure, a, cfg).value for a in grid])
    i = int(np.argmax(vals))
    best_a, best_v = grid[i], vals[i]
    evals = len(grid)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi > lo and cfg.refine_iters > 0:
        res = minimize_scalar(lambda a: -radial_integral(profile, measure, a, cfg).value,
                              bounds=(lo, hi), method="bounded",
                              options={"maxiter": cfg.refine_iters, "xatol": 1e-4 * hi})
        evals += res.nfev
        if -res.fun > best_v:
            best_a, best_v = float(res.x), float(-res.fun)
    return SupResult(float(best_v), float(best_a), evals)


def _sup_atoms(profile: Profile, measure: SpectralMeasure) -> SupResult:
    cands = [np.zeros(measure.d)] + [-p for p in measure.atoms]
    vals = [atom_sum(profile, measure, c) for c in cands]
    order = np.argsort(vals)[::-1][:3]
    best_v, best_x = vals[order[0]], cands[order[0]]
    scale = max(profile.scales)
    for j in order:
        res = minimize(lambda x: -atom_sum(profile, measure, x), cands[j], method="Nelder-Mead",
                       options={"initial_simplex": cands[j] + 0.05 * scale * np.vstack(
                           [np.zeros(measure.d), np.eye(measure.d)]),
                                "xatol": 1e-10 * scale, "fatol": 1e-14, "maxiter": 400})
        if -res.fun > best_v:
            best_v, best_x = float(-res.fun), res.x
    return SupResult(float(best_v), best_x, 0)


# ---------------------------------------------------------------------------
# time integrals


def _power_law_head(nodes: np.ndarray, vals: np.ndarray, edge: float) -> float:
    """Integral over ``[0, edge]`` of the power law fitted to the innermost panel."""
    if np.all(vals == 0.0):
        return 0.0
    if np.any(vals <= 0.0):
        return float(np.mean(vals)) * edge
    p, logc = np.polyfit(np.log(nodes), np.log(vals), 1)
    if p <= -1.0:
        raise DivergenceError(f"time integrand behaves like s^{p:.3f} near 0 (not integrable)")
    return float(math.exp(logc) * edge ** (p + 1.0) / (p + 1.0))


def graded_edges(times, cfg: QuadratureConfig) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    t0 = times.min()
    q = cfg.grading_ratio
    head = t0 * q ** np.arange(cfg.panel_count, 0, -1)
    edges = [head, np.unique(times)]
    out = np.concatenate(edges)
    # keep neighbouring edges within a factor 1/q of each other
    refined = [out[0]]
    for e in out[1:]:
        prev = refined[-1]
        if e / prev > 1.0 / q + 1e-12:
            k = int(math.ceil(math.log(e / prev) / math.log(1.0 / q)))
            refined.extend(np.geomspace(prev, e, k + 1)[1:])
        else:
            refined.append(e)
    return np.asarray(refined)


def cumulative_time_integral(G: Callable[[float], float], times, cfg: Optional[QuadratureConfig] = None):
    """``int_0^t G(s) ds`` for each ``t`` in ``times`` sharing one graded panel set.

    Panels shrink geometrically towards ``s = 0``; below the innermost panel a
    power law fitted on that panel is integrated in closed form.
    """
    cfg = cfg or QuadratureConfig()
    times = np.asarray(times, dtype=float)
    out = np.zeros_like(times)
    pos = times > 0
    if not np.any(pos):
        return out
    edges = graded_edges(times[pos], cfg)
    x, w = _legendre(cfg.time_order)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    panel_sums = np.empty(len(lo))
    first_nodes = first_vals = None
    for k in range(len(lo)):
        nodes = lo[k] + half[k] * (x + 1.0)
        vals = np.array([G(s) for s in nodes], dtype=float)
        if k == 0:
            first_nodes, first_vals = nodes, vals
        panel_sums[k] = np.sum(vals * w) * half[k]
    head = _power_law_head(first_nodes, first_vals, edges[0])
    cum = head + np.concatenate([[0.0], np.cumsum(panel_sums)])
    idx = np.searchsorted(edges, times[pos])
    out[pos] = cum[idx]
    return out


def interval_integral(G: Callable[[float], float], length: float,
                      cfg: Optional[QuadratureConfig] = None) -> float:
    """``int_0^length G(u) du`` with grading towards ``u = 0``."""
    if length <= 0:
        return 0.0
    return float(cumulative_time_integral(G, [length], cfg)[0])
