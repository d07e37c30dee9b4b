"""Sigmoid growth-fraction curves for individual fish body weight.

An individual's weight at day t is modelled as K * fraction(t), where K is
the (random) asymptotic weight handled by the spectrum module and fraction
is a deterministic sigmoid in (0, 1).  Three variants are supported:

* Von Bertalanffy: cube-law anabolism/catabolism balance,
  fraction(t) = (1 - (1 - f0^(1/3)) exp(-r t / 3))^3.
* Logistic: fraction(t) = 1 / ((1/f0 - 1) exp(-r t) + 1).
* Logistic with a linearly time-varying rate r0 + r1 t, which integrates to
  fraction(t) = 1 / ((1/f0 - 1) exp(-(r0 t + r1 t^2 / 2)) + 1).

A fixed-step fourth-order integrator of the underlying rate ODEs is kept
alongside the closed forms as an independent cross-check.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class CurveVariant(enum.Enum):
    VON_BERTALANFFY = "von-bertalanffy"
    LOGISTIC = "logistic"
    LOGISTIC_TV = "logistic-tv"


@dataclass(frozen=True)
class GrowthCurve:
    """Parameters of one growth-fraction curve.

    ``r`` is used by the Von Bertalanffy and logistic variants; ``r0`` and
    ``r1`` by the time-varying logistic.  The initial fraction ``f0`` must be
    strictly inside (0, 1): a zero initial fraction makes the fitted initial
    weight collapse to zero, which is biologically impossible.
    """

    variant: CurveVariant
    f0: float
    r: float | None = None
    r0: float | None = None
    r1: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.f0) and 0.0 < self.f0 < 1.0):
            raise ValueError(f"f0 must lie strictly in (0, 1), got {self.f0}")
        if self.variant in (CurveVariant.VON_BERTALANFFY, CurveVariant.LOGISTIC):
            if self.r is None or not math.isfinite(self.r) or self.r <= 0.0:
                raise ValueError(f"{self.variant.value} requires a rate r > 0, got {self.r}")
            if self.r0 is not None or self.r1 is not None:
                raise ValueError(f"{self.variant.value} does not use r0/r1")
        elif self.variant is CurveVariant.LOGISTIC_TV:
            if self.r is not None:
                raise ValueError("logistic-tv uses r0/r1, not r")
            if self.r0 is None or self.r1 is None:
                raise ValueError("logistic-tv requires both r0 and r1")
            if not (math.isfinite(self.r0) and math.isfinite(self.r1)):
                raise ValueError("r0 and r1 must be finite")
            if self.r0 < 0.0 or self.r1 < 0.0 or self.r0 + self.r1 <= 0.0:
                raise ValueError(
                    f"logistic-tv requires r0 >= 0, r1 >= 0 and r0 + r1 > 0, got ({self.r0}, {self.r1})"
                )
        else:
            raise ValueError(f"unknown curve variant {self.variant!r}")


def von_bertalanffy(f0: float, r: float) -> GrowthCurve:
    return GrowthCurve(CurveVariant.VON_BERTALANFFY, f0, r=r)


def logistic(f0: float, r: float) -> GrowthCurve:
    return GrowthCurve(CurveVariant.LOGISTIC, f0, r=r)


def logistic_time_varying(f0: float, r0: float, r1: float) -> GrowthCurve:
    return GrowthCurve(CurveVariant.LOGISTIC_TV, f0, r0=r0, r1=r1)


def growth_fraction(curve: GrowthCurve, t):
    """Closed-form growth fraction at day(s) ``t``.

    Accepts a scalar or array of nonnegative times and returns the matching
    shape.  Values are strictly increasing in t, start at f0 and stay below 1
    (up to floating-point saturation at extreme times).
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("time must be nonnegative")
    if curve.variant is CurveVariant.VON_BERTALANFFY:
        core = 1.0 - (1.0 - curve.f0 ** (1.0 / 3.0)) * np.exp(-(curve.r / 3.0) * t_arr)
        out = core * core * core
    elif curve.variant is CurveVariant.LOGISTIC:
        out = 1.0 / ((1.0 / curve.f0 - 1.0) * np.exp(-curve.r * t_arr) + 1.0)
    else:
        accumulated = curve.r0 * t_arr + 0.5 * curve.r1 * t_arr * t_arr
        out = 1.0 / ((1.0 / curve.f0 - 1.0) * np.exp(-accumulated) + 1.0)
    if t_arr.ndim == 0:
        return float(out)
    return out


def _rate(curve: GrowthCurve, s: float, f: float) -> float:
    if curve.variant is CurveVariant.VON_BERTALANFFY:
        return curve.r * f ** (2.0 / 3.0) * (1.0 - f ** (1.0 / 3.0))
    if curve.variant is CurveVariant.LOGISTIC:
        return curve.r * f * (1.0 - f)
    return (curve.r0 + curve.r1 * s) * f * (1.0 - f)


def _max_rate(curve: GrowthCurve, t: float) -> float:
    if curve.variant is CurveVariant.LOGISTIC_TV:
        return curve.r0 + curve.r1 * t
    return curve.r


def growth_fraction_ode_oracle(curve: GrowthCurve, t: float) -> float:
    """Growth fraction by classical fourth-order integration of the rate ODE.

    Independent of the closed forms; the step size is tied to the rate scale
    so the local truncation error stays below 1e-10.  Intended as a test
    oracle, not for production evaluation.
    """
    t = float(t)
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    if t == 0.0:
        return curve.f0
    rate_scale = max(_max_rate(curve, t), 1e-12)
    h_max = min(0.015 / rate_scale, 1.0)
    n = max(1, math.ceil(t / h_max))
    h = t / n
    s = 0.0
    f = curve.f0
    for _ in range(n):
        k1 = _rate(curve, s, f)
        k2 = _rate(curve, s + 0.5 * h, f + 0.5 * h * k1)
        k3 = _rate(curve, s + 0.5 * h, f + 0.5 * h * k2)
        k4 = _rate(curve, s + h, f + h * k3)
        f += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s += h
    return f
