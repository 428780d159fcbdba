"""Integrability and scaling hypotheses of the density theorem, checked numerically.

The functionals

    g(t)  = int_0^t int |F(s)(xi)|^2 mu(d xi) ds
    g1(t) = int_0^t sup_eta int |F(s)(xi + eta)|^2 mu(d xi) ds
    g2(t) = int_0^t sup_eta |F(s)(eta)|^2 ds

and the increment integrals I1..I4 are evaluated with the radial and graded
time quadratures of :mod:`spdelab.quadrature`; exponents are read off by
log-log least squares and compared with the closed-form exponent algebra.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .kernels import Family, MeasureKind, ModelSpec, Profile, _numeric_sup, sup_kernel_sq
from .quadrature import (DivergenceError, QuadratureConfig, _legendre, cumulative_time_integral,
                         gauss_panels, inner_integral, interval_integral, sup_over_shift)

__all__ = [
    "compute_g", "compute_g1", "compute_g2", "functional_table", "compute_increments",
    "increment_table", "check_A1", "check_A3", "analytic_exponents", "fit_exponent",
    "fitted_exponents", "optimal_parameters", "ExponentReport", "Provenance",
    "ExponentFamily", "FitResult", "Increments", "write_csv",
]


# ---------------------------------------------------------------------------
# integrands in time


def _g_density(model: ModelSpec, cfg: QuadratureConfig) -> Callable[[float], float]:
    kernel, measure = model.kernel, model.measure
    return lambda s: inner_integral(kernel.square_profile(s), measure, 0.0, cfg)


def _g1_density(model: ModelSpec, cfg: QuadratureConfig) -> Callable[[float], float]:
    kernel, measure = model.kernel, model.measure
    return lambda s: sup_over_shift(kernel.square_profile(s), measure, cfg).value


def _g2_density(model: ModelSpec) -> Callable[[float], float]:
    return lambda s: sup_kernel_sq(model.kernel, s)


def _check_time(model: ModelSpec, t: float) -> float:
    t = float(t)
    if t < 0 or t > model.T * (1 + 1e-12):
        raise ValueError(f"t = {t} outside [0, T = {model.T}]")
    return t


def compute_g(model: ModelSpec, cfg: Optional[QuadratureConfig] = None, t: float = 1.0) -> float:
    """``g(t)``; raises :class:`DivergenceError` when the spectral integral does not converge."""
    cfg = cfg or QuadratureConfig()
    return interval_integral(_g_density(model, cfg), _check_time(model, t), cfg)


def compute_g1(model: ModelSpec, cfg: Optional[QuadratureConfig] = None, t: float = 1.0) -> float:
    """``g1(t)``, with the shift supremum taken over ``cfg.eta_grid`` plus refinement."""
    cfg = cfg or QuadratureConfig()
    return interval_integral(_g1_density(model, cfg), _check_time(model, t), cfg)


def compute_g2(model: ModelSpec, cfg: Optional[QuadratureConfig] = None, t: float = 1.0) -> float:
    """``g2(t)``: ``t**3 / 3`` for the wave kernel and ``t`` for the heat kernel.

    Custom kernels use a numeric supremum, which is a lower estimate; see
    :func:`g2_is_exact`.
    """
    cfg = cfg or QuadratureConfig()
    t = _check_time(model, t)
    fam = model.kernel.family
    if fam is Family.WAVE:
        return t ** 3 / 3.0
    if fam is Family.HEAT:
        return t
    return interval_integral(_g2_density(model), t, cfg)


def g2_is_exact(model: ModelSpec) -> bool:
    return model.kernel.sup_sq_closed_form is not None


def functional_table(model: ModelSpec, cfg: Optional[QuadratureConfig] = None, times=None,
                     which: Sequence[str] = ("g", "g1", "g2")) -> dict:
    """``g``, ``g1`` and ``g2`` over a time grid, sharing one graded panel set.

    Returns a dict with key ``"t"`` and one array per requested functional.
    """
    cfg = cfg or QuadratureConfig()
    times = np.asarray(cfg.time_grid if times is None else times, dtype=float)
    for t in times:
        _check_time(model, t)
    out = {"t": times}
    if "g" in which:
        out["g"] = cumulative_time_integral(_g_density(model, cfg), times, cfg)
    if "g1" in which:
        out["g1"] = cumulative_time_integral(_g1_density(model, cfg), times, cfg)
    if "g2" in which:
        if model.kernel.family in (Family.WAVE, Family.HEAT):
            out["g2"] = np.array([compute_g2(model, cfg, t) for t in times])
        else:
            out["g2"] = cumulative_time_integral(_g2_density(model), times, cfg)
    return out


# ---------------------------------------------------------------------------
# increment integrals


class Increments(NamedTuple):
    I1: float
    I2: float
    I3: float
    I4: float


def _increment_edges(s: float, h: float, cfg: QuadratureConfig) -> np.ndarray:
    """Panels on ``[0, s]`` graded towards 0 down to the scale of ``h``."""
    q = cfg.grading_ratio
    inner = min(q * h, q * s)
    n = max(int(math.ceil(math.log(s / inner) / math.log(1.0 / q))), 1)
    return np.concatenate([[0.0], np.geomspace(inner, s, n + 1)])


def _panel_integral(G: Callable[[float], float], edges: np.ndarray, order: int) -> float:
    return gauss_panels(lambda nodes: np.array([G(u) for u in nodes]), edges, order)


def _sup_difference_sq(model: ModelSpec, hi: float, lo: float) -> float:
    """``sup_eta |F(hi)(eta) - F(lo)(eta)|**2``."""
    if model.kernel.family is Family.WAVE:
        # |sin(a r) - sin(b r)| / r <= |a - b|, attained as r -> 0
        return (hi - lo) ** 2
    kernel = model.kernel
    fn = lambda r: (kernel.radial(hi, r) - kernel.radial(lo, r)) ** 2
    return _numeric_sup(fn, kernel.frequency_scale(hi)).value


def compute_increments(model: ModelSpec, cfg: Optional[QuadratureConfig] = None,
                       s: float = 0.5, t: float = 1.0) -> Increments:
    """The four increment integrals bounding ``E[(u(t,0) - u(s,0))^2]``.

    With ``h = t - s`` and ``u = s - r``:

    * ``I1 = int_0^s sup_eta int |F(u+h) - F(u)|^2(xi + eta) mu(d xi) du``
    * ``I2 = g1(h)``
    * ``I3 = int_0^s sup_eta |F(u+h)(eta) - F(u)(eta)|^2 du``
    * ``I4 = g2(h)``
    """
    cfg = cfg or QuadratureConfig()
    s, t = float(s), float(t)
    if not 0.0 <= s <= t <= model.T * (1 + 1e-12):
        raise ValueError("need 0 <= s <= t <= T")
    h = t - s
    if h == 0.0:
        return Increments(0.0, 0.0, 0.0, 0.0)
    kernel, measure = model.kernel, model.measure
    I2 = compute_g1(model, cfg, h)
    I4 = compute_g2(model, cfg, h)
    if s == 0.0:
        return Increments(0.0, I2, 0.0, I4)
    edges = _increment_edges(s, h, cfg)
    psi1 = lambda u: sup_over_shift(kernel.difference_profile(u + h, u), measure, cfg).value
    psi3 = lambda u: _sup_difference_sq(model, u + h, u)
    I1 = _panel_integral(psi1, edges, cfg.time_order)
    I3 = _panel_integral(psi3, edges, cfg.time_order)
    return Increments(I1, I2, I3, I4)


def increment_table(model: ModelSpec, cfg: Optional[QuadratureConfig] = None, s: float = 0.5,
                    lags=None) -> dict:
    """Increment integrals at fixed ``s`` over a geometric grid of lags ``t - s``.

    ``I2`` and ``I4`` are ``g1`` and ``g2`` at the lags, so they share one
    cumulative time quadrature.
    """
    cfg = cfg or QuadratureConfig()
    if lags is None:
        lags = s * np.geomspace(1e-2, 0.5, 8)
    lags = np.asarray(lags, dtype=float)
    if np.any(lags <= 0) or s + lags.max() > model.T * (1 + 1e-12):
        raise ValueError("lags must be positive with s + lag <= T")
    base = functional_table(model, cfg, lags, which=("g1", "g2"))
    kernel, measure = model.kernel, model.measure
    I1, I3 = [], []
    for h in lags:
        if s == 0.0:
            I1.append(0.0)
            I3.append(0.0)
            continue
        edges = _increment_edges(s, h, cfg)
        psi1 = lambda u: sup_over_shift(kernel.difference_profile(u + h, u), measure, cfg).value
        psi3 = lambda u: _sup_difference_sq(model, u + h, u)
        I1.append(_panel_integral(psi1, edges, cfg.time_order))
        I3.append(_panel_integral(psi3, edges, cfg.time_order))
    return {"lag": lags, "I1": np.array(I1), "I2": base["g1"], "I3": np.array(I3), "I4": base["g2"]}


# ---------------------------------------------------------------------------
# (A1) and (A3)


@dataclass
class A1Report:
    finite: bool
    values: tuple
    message: str = ""


def check_A1(model: ModelSpec, cfg: Optional[QuadratureConfig] = None) -> A1Report:
    """Both (A1) integrals over ``[0, T]``; divergence is reported, not raised."""
    cfg = cfg or QuadratureConfig()
    try:
        v1 = compute_g1(model, cfg, model.T)
        v2 = compute_g2(model, cfg, model.T)
    except DivergenceError as exc:
        return A1Report(False, (math.inf, math.inf), str(exc))
    ok = bool(np.isfinite(v1) and np.isfinite(v2))
    return A1Report(ok, (float(v1), float(v2)), "" if ok else "non-finite value")


@dataclass
class A3Report:
    limits: list
    monotone: bool
    subgrid: int


def _light(cfg: QuadratureConfig) -> QuadratureConfig:
    """Cheaper settings for the nested suprema of (A3)."""
    return dataclasses.replace(cfg, eta_grid=tuple(np.geomspace(1e-2, 1e2, 5)), refine_iters=4,
                               panel_count=2, time_order=4)


@lru_cache(maxsize=None)
def _modulus_tail_mean(subgrid: int, points: int = 256) -> float:
    """Long-run mean of ``max_j (sin(r_j rho) - sin(s rho))^2`` over ``rho``.

    With ``r_j = s + j h / subgrid`` and incommensurable ``s, h`` the phases
    ``(s rho, h rho)`` equidistribute, so the mean is a torus average over
    ``phi`` in ``[0, 2 pi)`` and ``psi`` in ``[0, 2 pi subgrid)``.
    """
    phi = 2.0 * math.pi * (np.arange(points) + 0.5) / points
    psi = 2.0 * math.pi * subgrid * (np.arange(points * subgrid) + 0.5) / (points * subgrid)
    P, S = np.meshgrid(phi, psi, indexing="ij")
    base = np.sin(P)
    best = np.zeros_like(P)
    for j in range(1, subgrid + 1):
        np.maximum(best, (np.sin(P + S * j / subgrid) - base) ** 2, out=best)
    return float(best.mean())


def _modulus_profile(model: ModelSpec, s: float, h: float, subgrid: int) -> Profile:
    kernel = model.kernel
    rs = s + h * np.linspace(0.0, 1.0, subgrid + 1)[1:]

    def fn(rho):
        base = kernel.radial(s, rho)
        return np.max([(kernel.radial(r, rho) - base) ** 2 for r in rs], axis=0)

    scales = (kernel.frequency_scale(s + h), kernel.frequency_scale(h))
    if kernel.family is Family.WAVE:
        # beyond the cutoff only the mean of the almost periodic numerator is kept
        return Profile(fn, scales=scales, half_period=math.pi / (s + h),
                       tail_terms=((_modulus_tail_mean(subgrid), 0.0),))
    if kernel.family is Family.HEAT and s > 0:
        c = 2.0 * 4.0 * math.pi ** 2 * s
        return Profile(fn, scales=scales, decay_radius=math.sqrt(45.0 / c), tail_terms=())
    return Profile(fn, scales=scales)


def check_A3(model: ModelSpec, cfg: Optional[QuadratureConfig] = None, h_grid=(1e-1, 1e-2, 1e-3),
             subgrid: int = 8) -> A3Report:
    """Both (A3) modulus integrals for each ``h``; the inner ``sup_{s<r<s+h}`` uses
    ``subgrid`` equispaced points of ``(s, s+h]``."""
    cfg = _light(cfg or QuadratureConfig())
    kernel, measure = model.kernel, model.measure
    rows = []
    for h in h_grid:
        h = float(h)
        rs_unit = np.linspace(0.0, 1.0, subgrid + 1)[1:]
        v1_density = lambda s: sup_over_shift(_modulus_profile(model, s, h, subgrid), measure, cfg).value

        def v2_density(s):
            fn = lambda rho: np.max([(kernel.radial(s + h * x, rho) - kernel.radial(s, rho)) ** 2
                                     for x in rs_unit], axis=0)
            return _numeric_sup(fn, kernel.frequency_scale(s + h)).value

        if kernel.family is Family.WAVE:
            v1 = interval_integral(v1_density, model.T, cfg)
            v2 = interval_integral(v2_density, model.T, cfg)
        else:
            # the densities only reach their s -> 0 power law for s << h, so the
            # graded panels must extend below h before the head is fitted
            anchors = [min(h * cfg.grading_ratio ** 2, 0.5 * model.T), model.T]
            v1 = float(cumulative_time_integral(v1_density, anchors, cfg)[-1])
            v2 = float(cumulative_time_integral(v2_density, anchors, cfg)[-1])
        rows.append((h, float(v1), float(v2)))
    ordered = sorted(rows, key=lambda r: -r[0])
    tol = 1e-12
    mono = all(b[1] <= a[1] + tol and b[2] <= a[2] + tol for a, b in zip(ordered, ordered[1:]))
    return A3Report(rows, mono, subgrid)


# ---------------------------------------------------------------------------
# exponent algebra


class Provenance(str, enum.Enum):
    ANALYTIC = "analytic"
    FITTED = "fitted"


class ExponentFamily(str, enum.Enum):
    WAVE_RIESZ = "WaveRiesz"
    WAVE_FINITE = "WaveFinite"
    HEAT_RIESZ = "HeatRiesz"
    HEAT_FINITE = "HeatFinite"


class FitResult(NamedTuple):
    slope: float
    intercept: float
    r2: float


@dataclass
class ExponentReport:
    """Exponents of (A4)/(A6) and the derived Besov index.

    Analytic reports hold :class:`fractions.Fraction` values so the derived
    quantities are exact.
    """

    delta: object
    gamma: object
    gamma1: object
    gamma2: object
    provenance: dict = field(default_factory=dict)
    fit_diagnostics: dict = field(default_factory=dict)
    label: str = ""

    @property
    def gamma_bar(self):
        return (min(self.gamma1, self.gamma2) + self.delta) / self.gamma

    @property
    def s_max(self):
        return 1 - 1 / self.gamma_bar

    def as_dict(self) -> dict:
        def enc(v):
            if isinstance(v, Fraction):
                return {"value": float(v), "exact": f"{v.numerator}/{v.denominator}"}
            return {"value": float(v)}

        out = {k: enc(getattr(self, k)) for k in ("delta", "gamma", "gamma1", "gamma2",
                                                  "gamma_bar", "s_max")}
        out["provenance"] = {k: Provenance(v).value for k, v in self.provenance.items()}
        out["fit_diagnostics"] = {k: v._asdict() for k, v in self.fit_diagnostics.items()}
        out["label"] = self.label
        return out

    def to_json(self, path=None, indent: int = 2) -> str:
        text = json.dumps(self.as_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _as_fraction(beta) -> Fraction:
    if isinstance(beta, Fraction):
        return beta
    return Fraction(str(beta)) if isinstance(beta, float) else Fraction(beta)


def analytic_exponents(family, beta=None, d: Optional[int] = None) -> ExponentReport:
    """Closed-form exponent tuple for the four built-in families.

    ========== ========== ========= ======== =========
    family     delta      gamma     gamma1   gamma2
    ========== ========== ========= ======== =========
    WaveRiesz  2 - b      3 - b     3 - b    3
    WaveFinite 2          3         3        3
    HeatRiesz  1 - b/2    1 - b/2   1 - b/2  1
    HeatFinite 1          1         1        1
    ========== ========== ========= ======== =========
    """
    fam = ExponentFamily(family)
    if fam in (ExponentFamily.WAVE_RIESZ, ExponentFamily.HEAT_RIESZ):
        if beta is None:
            raise ValueError(f"{fam.value} needs beta")
        b = _as_fraction(beta)
        upper = min(Fraction(2), Fraction(d)) if d is not None else Fraction(2)
        if not 0 < b < upper:
            raise ValueError(f"beta = {b} must lie in (0, {upper})")
    one, two, three = Fraction(1), Fraction(2), Fraction(3)
    if fam is ExponentFamily.WAVE_RIESZ:
        vals = (two - b, three - b, three - b, three)
    elif fam is ExponentFamily.WAVE_FINITE:
        vals = (two, three, three, three)
    elif fam is ExponentFamily.HEAT_RIESZ:
        vals = (one - b / 2, one - b / 2, one - b / 2, one)
    else:
        vals = (one, one, one, one)
    prov = {k: Provenance.ANALYTIC for k in ("delta", "gamma", "gamma1", "gamma2")}
    label = fam.value + (f"(beta={beta})" if beta is not None else "")
    return ExponentReport(*vals, provenance=prov, label=label)


def family_of(model: ModelSpec) -> Optional[ExponentFamily]:
    fam = model.kernel.family
    riesz = model.measure.kind is MeasureKind.RIESZ
    if fam is Family.WAVE:
        return ExponentFamily.WAVE_RIESZ if riesz else ExponentFamily.WAVE_FINITE
    if fam is Family.HEAT:
        return ExponentFamily.HEAT_RIESZ if riesz else ExponentFamily.HEAT_FINITE
    return None


def fit_exponent(points) -> FitResult:
    """Least-squares slope of ``log(value)`` against ``log(t)``.

    ``points`` is a sequence of ``(t, value)`` pairs (or a 2 x n array); at
    least 8 strictly positive pairs are required.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == 2 and arr.shape[1] != 2:
        arr = arr.T
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be (t, value) pairs")
    if len(arr) < 8:
        raise ValueError(f"need at least 8 points, got {len(arr)}")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("fit_exponent needs strictly positive, finite inputs")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), r2)


def fitted_exponents(model: ModelSpec, cfg: Optional[QuadratureConfig] = None, times=None,
                     increments: Optional[dict] = None) -> tuple:
    """Fit ``gamma`` (small-t half of the grid, ``t <= t0``), ``gamma1`` and ``gamma2``
    (full grid) and, when an increment table is supplied, ``delta`` as the
    smallest increment slope.

    Returns ``(report, table)`` where ``table`` is the :func:`functional_table` output.
    """
    cfg = cfg or QuadratureConfig()
    table = functional_table(model, cfg, times)
    t = table["t"]
    t0 = cfg.t0_fraction * model.T
    small = t <= t0 * (1 + 1e-12)
    if small.sum() < 8:
        small = np.argsort(t)[: max(8, len(t) // 2)]
    diag = {
        "gamma": fit_exponent(np.column_stack([t[small], table["g"][small]])),
        "gamma1": fit_exponent(np.column_stack([t, table["g1"]])),
        "gamma2": fit_exponent(np.column_stack([t, table["g2"]])),
    }
    delta = math.nan
    if increments is not None:
        fits = {}
        for name in Increments._fields:
            vals = increments[name]
            if np.all(vals > 0):
                fits[name] = fit_exponent(np.column_stack([increments["lag"], vals]))
        diag.update({f"delta_{k}": v for k, v in fits.items()})
        delta = min(v.slope for v in fits.values())
    prov = {k: Provenance.FITTED for k in ("delta", "gamma", "gamma1", "gamma2")}
    report = ExponentReport(delta, diag["gamma"].slope, diag["gamma1"].slope, diag["gamma2"].slope,
                            provenance=prov, fit_diagnostics=diag, label="fitted")
    return report, table


# ---------------------------------------------------------------------------
# optimal parameters of the smoothing argument


@dataclass(frozen=True)
class OptimalParameters:
    alpha: Fraction
    rho: Fraction
    gamma: object
    boundary_product: object

    def epsilon(self, h, t: float):
        """``eps = (t/2) |h|^(rho/gamma)``."""
        return 0.5 * t * np.abs(np.asarray(h, dtype=float)) ** float(self.rho / self.gamma)


def optimal_parameters(report: ExponentReport) -> OptimalParameters:
    """``alpha = 1/gamma_bar``, ``rho = 2`` and the rule ``h -> (t/2)|h|^(rho/gamma)``.

    The product ``alpha * rho * gamma_bar / 2`` sits exactly on the boundary 1,
    which is why the admissible Besov indices form an open interval.
    """
    gb = report.gamma_bar
    if not gb > 1:
        raise ValueError(f"gamma_bar = {gb} <= 1: the Besov index would be nonpositive")
    alpha = 1 / gb
    rho = Fraction(2)
    product = alpha * rho * gb / 2
    if abs(float(product) - 1.0) > 1e-12:
        raise ArithmeticError("optimal parameters left the boundary alpha*rho*gamma_bar/2 = 1")
    return OptimalParameters(alpha, rho, report.gamma, product)


# ---------------------------------------------------------------------------
# emitters


def write_csv(path, table: dict, columns: Optional[Sequence[str]] = None) -> None:
    """Write equally long columns of ``table`` to ``path`` with a header row."""
    columns = list(columns or table.keys())
    n = len(table[columns[0]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for i in range(n):
            w.writerow([repr(float(table[c][i])) for c in columns])
