"""Fourier-side kernels, spectral measures and model descriptions.

Everything here is expressed in frequency variables: a kernel is the map
``(t, xi) -> F Lambda(t)(xi)`` and a spectral measure is either a Riesz
density ``|xi|^(beta - d)``, a finite sum of atoms, or a finite radial density.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .coefficients import Coefficient, resolve_coefficient

FOUR_PI_SQ = 4.0 * math.pi ** 2


class Family(enum.Enum):
    WAVE = "wave"
    HEAT = "heat"
    CUSTOM = "custom"


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (omega_{d-1}); 2 for d = 1."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True)
class Profile:
    """Radial integrand ``r -> F(r)`` together with the hints the quadrature needs.

    ``half_period`` is set for oscillatory profiles (panel edges follow it),
    ``decay_radius`` for profiles that are negligible beyond it.
    ``tail_terms`` lists ``(amplitude, kappa)`` pairs such that
    ``F(r) = sum amplitude * cos(kappa * r) / r**2`` for large ``r``; ``None``
    means the tail is unknown and must be extrapolated.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    scales: tuple
    half_period: Optional[float] = None
    decay_radius: Optional[float] = None
    tail_terms: Optional[tuple] = None

    def __call__(self, r):
        return self.fn(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class SpectralKernel:
    """Evaluator of the Fourier transform of a fundamental solution.

    Custom kernels must be radial: ``radial_fn(t, r)`` receives ``|xi|``.
    """

    family: Family
    radial_fn: Optional[Callable] = None
    sup_sq_closed_form: Optional[Callable[[float], float]] = None
    scale_fn: Optional[Callable[[float], float]] = None
    name: str = ""

    def radial(self, t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        if self.family is Family.WAVE:
            # sin(t r) / r with the removable singularity filled in by t
            return t * np.sinc(t * r / math.pi)
        if self.family is Family.HEAT:
            return np.exp(-FOUR_PI_SQ * t * r * r)
        return np.asarray(self.radial_fn(t, r), dtype=float)

    def __call__(self, t, xi):
        xi = np.asarray(xi, dtype=float)
        r = np.abs(xi) if xi.ndim == 0 else np.linalg.norm(xi, axis=-1)
        return self.radial(t, r)

    def frequency_scale(self, t: float) -> float:
        """Radius in frequency space at which the kernel at time ``t`` varies."""
        t = max(float(t), 1e-300)
        if self.family is Family.WAVE:
            return 1.0 / t
        if self.family is Family.HEAT:
            return 1.0 / (2.0 * math.pi * math.sqrt(2.0 * t))
        return self.scale_fn(t) if self.scale_fn is not None else 1.0

    def square_profile(self, s: float) -> Profile:
        s = float(s)
        scale = self.frequency_scale(s)
        if self.family is Family.WAVE:
            # sin^2(s r) / r^2 = (1 - cos(2 s r)) / (2 r^2)
            return Profile(lambda r: (s * np.sinc(s * r / math.pi)) ** 2,
                           scales=(scale,), half_period=math.pi / s,
                           tail_terms=((0.5, 0.0), (-0.5, 2.0 * s)))
        if self.family is Family.HEAT:
            c = 2.0 * FOUR_PI_SQ * s
            return Profile(lambda r: np.exp(-c * r * r), scales=(scale,),
                           decay_radius=math.sqrt(45.0 / c), tail_terms=())
        return Profile(lambda r: self.radial(s, r) ** 2, scales=(scale,))

    def difference_profile(self, t_hi: float, t_lo: float) -> Profile:
        """Profile of ``|F(t_hi)(r) - F(t_lo)(r)|**2`` with ``t_hi > t_lo >= 0``."""
        a, b = float(t_hi), float(t_lo)
        scales = (self.frequency_scale(a), self.frequency_scale(max(a - b, 1e-300)))
        if self.family is Family.WAVE:
            fn = lambda r: (a * np.sinc(a * r / math.pi) - b * np.sinc(b * r / math.pi)) ** 2
            if b > 0:
                # (sin ar - sin br)^2 expanded into cosines of 2a, 2b, a - b, a + b
                terms = ((1.0, 0.0), (-0.5, 2 * a), (-0.5, 2 * b), (-1.0, a - b), (1.0, a + b))
            else:
                terms = ((0.5, 0.0), (-0.5, 2 * a))
            return Profile(fn, scales=scales, half_period=math.pi / a, tail_terms=terms)
        if self.family is Family.HEAT:
            fn = lambda r: (np.exp(-FOUR_PI_SQ * a * r * r) - np.exp(-FOUR_PI_SQ * b * r * r)) ** 2
            decay = math.sqrt(45.0 / (2.0 * FOUR_PI_SQ * b)) if b > 0 else None
            return Profile(fn, scales=scales, decay_radius=decay, tail_terms=() if b > 0 else None)
        return Profile(lambda r: (self.radial(a, r) - self.radial(b, r)) ** 2, scales=scales)


def wave_kernel() -> SpectralKernel:
    return SpectralKernel(Family.WAVE, sup_sq_closed_form=lambda t: float(t) ** 2, name="wave")


def heat_kernel() -> SpectralKernel:
    return SpectralKernel(Family.HEAT, sup_sq_closed_form=lambda t: 1.0, name="heat")


def custom_kernel(radial_fn, sup_sq=None, frequency_scale=None, name="custom") -> SpectralKernel:
    return SpectralKernel(Family.CUSTOM, radial_fn=radial_fn, sup_sq_closed_form=sup_sq,
                          scale_fn=frequency_scale, name=name)


def eval_kernel(kernel: SpectralKernel, t, xi):
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be nonnegative")
    return kernel(t, xi)


@dataclass(frozen=True)
class SupEstimate:
    value: float
    argmax_radius: float
    exact: bool


def sup_kernel_sq(kernel: SpectralKernel, t: float, return_details: bool = False):
    """Supremum over frequencies of ``|F Lambda(t)|**2``.

    Closed forms are used for the wave (``t**2``) and heat (``1``) kernels;
    otherwise a log-spaced radial search with local refinement gives a lower
    estimate, flagged by ``exact=False``.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if kernel.sup_sq_closed_form is not None:
        est = SupEstimate(float(kernel.sup_sq_closed_form(t)), 0.0, True)
    else:
        est = _numeric_sup(lambda r: kernel.radial(t, r) ** 2, kernel.frequency_scale(t))
    return est if return_details else est.value


def _numeric_sup(fn, scale: float, grid=None) -> SupEstimate:
    from scipy.optimize import minimize_scalar

    if grid is None:
        grid = np.geomspace(1e-6, 1e3, 241)
    radii = np.concatenate([[0.0], grid * scale])
    vals = np.asarray(fn(radii), dtype=float)
    i = int(np.argmax(vals))
    best_r, best_v = radii[i], vals[i]
    lo = radii[max(i - 1, 0)]
    hi = radii[min(i + 1, len(radii) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda r: -float(fn(np.array([r]))[0]), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-10 * max(hi, 1e-300)})
        if -res.fun > best_v:
            best_r, best_v = float(res.x), float(-res.fun)
    return SupEstimate(float(best_v), float(best_r), False)


class MeasureKind(enum.Enum):
    RIESZ = "riesz"
    ATOMS = "atoms"
    RADIAL_DENSITY = "radial_density"


@dataclass(frozen=True)
class SpectralMeasure:
    kind: MeasureKind
    d: int
    beta: Optional[float] = None
    atoms: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    density: Optional[Callable] = None
    beta_exact: Optional[Fraction] = None

    @property
    def is_finite(self) -> bool:
        return self.kind is not MeasureKind.RIESZ

    def radial_weight(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind is MeasureKind.RIESZ:
            return r ** (self.beta - self.d)
        if self.kind is MeasureKind.RADIAL_DENSITY:
            return np.asarray(self.density(r), dtype=float)
        raise TypeError("atomic measures have no density")

    def total_mass(self) -> float:
        if self.kind is MeasureKind.ATOMS:
            return float(np.sum(self.masses))
        if self.kind is MeasureKind.RADIAL_DENSITY:
            from scipy.integrate import quad

            val, _ = quad(lambda r: float(self.density(np.array([r]))[0]) * r ** (self.d - 1),
                          0.0, np.inf, limit=200)
            return sphere_area(self.d) * val
        return math.inf

    def spherical_mean(self, r, a: float):
        """Integral of the density over the sphere ``|xi| = r`` shifted by ``|eta| = a``.

        Returns ``int_{S^{d-1}} w(|r*omega - eta|) d omega``; for ``a = 0`` this
        is ``omega_{d-1} * w(r)``.
        """
        r = np.asarray(r, dtype=float)
        d = self.d
        if self.kind is MeasureKind.ATOMS:
            raise TypeError("atomic measures have no density")
        if a == 0.0:
            return sphere_area(d) * self.radial_weight(r)
        if self.kind is MeasureKind.RIESZ:
            return riesz_spherical_mean(r, a, d, self.beta)
        return numeric_spherical_mean(self.radial_weight, r, a, d)


def _riesz_beta_ok(d: int, beta: float) -> bool:
    return 0.0 < beta < min(2.0, float(d))


def riesz_spherical_mean(r, a: float, d: int, beta: float):
    """Spherical mean of ``|x - eta|^(beta - d)`` in closed hypergeometric form."""
    r = np.asarray(r, dtype=float)
    if d == 1:
        return np.abs(r - a) ** (beta - 1.0) + (r + a) ** (beta - 1.0)
    lam = d - beta
    big = np.maximum(r, a)
    small = np.minimum(r, a)
    z = (small / big) ** 2
    return sphere_area(d) * big ** (-lam) * special.hyp2f1(lam / 2.0, lam / 2.0 - d / 2.0 + 1.0,
                                                          d / 2.0, z)


def numeric_spherical_mean(weight, r, a: float, d: int, order: int = 64):
    """Gauss-Gegenbauer evaluation of the shifted spherical integral of a radial weight."""
    r = np.asarray(r, dtype=float)
    if d == 1:
        return weight(np.abs(r - a)) + weight(r + a)
    alpha = (d - 3) / 2.0
    x, w = special.roots_jacobi(order, alpha, alpha)
    rr = r[..., None]
    dist = np.sqrt(np.maximum(rr * rr + a * a - 2.0 * rr * a * x, 0.0))
    return sphere_area(d - 1) * np.sum(w * weight(dist), axis=-1)


def riesz_measure(beta, d: int) -> SpectralMeasure:
    beta_exact = Fraction(str(beta)) if not isinstance(beta, Fraction) else beta
    b = float(beta)
    if not _riesz_beta_ok(d, b):
        raise ValueError(f"Riesz exponent beta={b} must lie in (0, min(2, d)) = (0, {min(2, d)})")
    return SpectralMeasure(MeasureKind.RIESZ, d, beta=b, beta_exact=beta_exact)


def atom_measure(atoms: Sequence, masses: Sequence[float], d: int) -> SpectralMeasure:
    pts = np.atleast_2d(np.asarray(atoms, dtype=float))
    if pts.shape[1] != d:
        pts = pts.reshape(-1, d)
    m = np.asarray(masses, dtype=float).reshape(-1)
    if len(m) != len(pts):
        raise ValueError("one mass per atom is required")
    if np.any(m < 0) or not np.all(np.isfinite(m)) or m.sum() <= 0:
        raise ValueError("atom masses must be finite, nonnegative and not all zero")
    return SpectralMeasure(MeasureKind.ATOMS, d, atoms=pts, masses=m)


def radial_density_measure(density: Callable, d: int) -> SpectralMeasure:
    return SpectralMeasure(MeasureKind.RADIAL_DENSITY, d, density=density)


def measure_radial_weight(measure: SpectralMeasure, r):
    if np.any(np.asarray(r) <= 0):
        raise ValueError("radius must be positive")
    return measure.radial_weight(r)


@dataclass(frozen=True)
class ModelSpec:
    """Full description of the equation: kernel, noise, horizon and coefficients."""

    kernel: SpectralKernel
    measure: SpectralMeasure
    T: float
    sigma: Coefficient
    b: Coefficient
    sigma0: float
    lipschitz_bounds: tuple = field(default=None)

    @property
    def d(self) -> int:
        return self.measure.d

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("time horizon T must be positive")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        if self.lipschitz_bounds is None:
            object.__setattr__(self, "lipschitz_bounds", (self.sigma.lipschitz, self.b.lipschitz))

    def validate(self, test_grid=None, pairs: int = 2000, seed: int = 0) -> None:
        """Sampled check of strong ellipticity and the declared Lipschitz constants."""
        if test_grid is None:
            test_grid = np.linspace(-50.0, 50.0, 20001)
        x = np.asarray(test_grid, dtype=float)
        if not self.sigma0 > 0:
            raise ValueError("ellipticity requires sigma0 > 0")
        sig = np.abs(self.sigma(x))
        if np.min(sig) < self.sigma0 * (1.0 - 1e-12):
            raise ValueError(f"ellipticity fails: min |sigma| = {np.min(sig):.6g} < sigma0 = {self.sigma0}")
        rng = np.random.default_rng(seed)
        p = rng.uniform(x.min(), x.max(), size=(pairs, 2))
        p[: pairs // 2, 1] = p[: pairs // 2, 0] + rng.normal(scale=1e-3, size=pairs // 2)
        dx = np.abs(p[:, 0] - p[:, 1])
        ok = dx > 0
        for fn, lip, label in ((self.sigma, self.lipschitz_bounds[0], "sigma"),
                               (self.b, self.lipschitz_bounds[1], "b")):
            ratio = np.abs(fn(p[ok, 0]) - fn(p[ok, 1])) / dx[ok]
            if np.max(ratio, initial=0.0) > lip * (1.0 + 1e-6) + 1e-12:
                raise ValueError(f"{label} violates its declared Lipschitz bound {lip}")

    def is_linear(self) -> bool:
        return self.sigma.is_constant and self.b.is_constant and self.b.constant_value == 0.0


def make_model(family: str, d: int, T: float = 1.0, beta=None, atoms=None, masses=None,
               sigma="const:1", b="const:0", sigma0=None) -> ModelSpec:
    """Convenience constructor from the registry names used by the config files."""
    kernel = {"wave": wave_kernel, "heat": heat_kernel}[family]()
    if beta is not None:
        measure = riesz_measure(beta, d)
    else:
        if atoms is None:
            atoms, masses = [[0.0] * d], [1.0]
        measure = atom_measure(atoms, masses, d)
    sig = resolve_coefficient(sigma)
    bb = resolve_coefficient(b)
    if sigma0 is None:
        sigma0 = sig.inf_abs
    return ModelSpec(kernel, measure, T, sig, bb, sigma0)
