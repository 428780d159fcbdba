"""Named registry of Lipschitz coefficient functions.

Names look like ``"const:c"``, ``"affine:a,b"`` (``a*x + b``), ``"sin1p:c"``
or ``"sin1p:c,k"`` (``c*(1 + k*sin(x))``, ``k`` defaults to 1/2 so that the
function stays bounded away from zero) and ``"zero"``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Coefficient:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    inf_abs: float
    is_constant: bool = False
    constant_value: float = float("nan")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.fn(x), x.shape).astype(float)


def _params(arg: str, count: int, defaults=()):
    vals = [float(v) for v in arg.split(",")] if arg else []
    missing = count - len(vals)
    if 0 < missing <= len(defaults):
        vals += list(defaults[len(defaults) - missing:])
    if len(vals) != count:
        raise ValueError(f"expected {count} parameter(s), got {arg!r}")
    return vals


def const(c: float) -> Coefficient:
    c = float(c)
    return Coefficient(f"const:{c:g}", lambda x: np.full_like(x, c), 0.0, abs(c), True, c)


def affine(a: float, b: float) -> Coefficient:
    a, b = float(a), float(b)
    inf_abs = abs(b) if a == 0 else 0.0
    return Coefficient(f"affine:{a:g},{b:g}", lambda x: a * x + b, abs(a), inf_abs, a == 0, b)


def sin1p(c: float, k: float = 0.5) -> Coefficient:
    c, k = float(c), float(k)
    if abs(k) >= 1:
        raise ValueError("sin1p needs |k| < 1 to stay elliptic")
    return Coefficient(f"sin1p:{c:g},{k:g}", lambda x: c * (1.0 + k * np.sin(x)),
                       abs(c * k), abs(c) * (1.0 - abs(k)))


REGISTRY = {
    "const": lambda arg: const(*_params(arg, 1)),
    "zero": lambda arg: const(0.0),
    "affine": lambda arg: affine(*_params(arg, 2)),
    "sin1p": lambda arg: sin1p(*_params(arg, 2, defaults=(1.0, 0.5))),
}


def resolve_coefficient(label) -> Coefficient:
    if isinstance(label, Coefficient):
        return label
    if isinstance(label, (int, float)):
        return const(label)
    name, _, arg = str(label).partition(":")
    if name not in REGISTRY:
        raise ValueError(f"unknown coefficient {label!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](arg)
