"""Gamma-distributed asymptotic weight and the induced body-weight law.

The asymptotic weight K follows a gamma law with shape ``alpha`` and scale
``beta`` (grams).  Composing it with a growth curve gives the weight law at
day t: W_t = K * fraction(t), so its density is a rescaled gamma density and
its moments are available in closed form (mean alpha*beta*fraction, variance
alpha*beta^2*fraction^2).

The module also carries the incomplete-gamma machinery needed to place
quantile points (used to collapse the weight law into weighted point masses
for the control solver) and the allometric weight-length map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .growth import GrowthCurve, growth_fraction

_MAX_SERIES_TERMS = 600
_MAX_CF_TERMS = 600
_QUANTILE_MAX_ITER = 200


@dataclass(frozen=True)
class SizeSpectrum:
    """Gamma law of the asymptotic weight, tied to a growth curve."""

    alpha: float
    beta: float
    curve: GrowthCurve

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha > 0.0):
            raise ValueError(f"shape alpha must be > 0, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise ValueError(f"scale beta must be > 0, got {self.beta}")

    @property
    def mean_asymptotic(self) -> float:
        return self.alpha * self.beta

    @property
    def var_asymptotic(self) -> float:
        return self.alpha * self.beta * self.beta


@dataclass(frozen=True)
class Allometry:
    """Power-law weight-length relationship w = a * l**b."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and self.a > 0.0):
            raise ValueError(f"coefficient a must be > 0, got {self.a}")
        if not (math.isfinite(self.b) and self.b > 0.0):
            raise ValueError(f"exponent b must be > 0, got {self.b}")

    def weight(self, length):
        """Weight in grams for body length in centimetres."""
        l_arr = np.asarray(length, dtype=float)
        if np.any(l_arr <= 0.0):
            raise ValueError("length must be positive")
        out = self.a * l_arr**self.b
        if l_arr.ndim == 0:
            return float(out)
        return out


def pdf_asymptotic_weight(spectrum: SizeSpectrum, k):
    """Gamma density of the asymptotic weight at k > 0 (units 1/g)."""
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr <= 0.0):
        raise ValueError("weight must be positive")
    a, b = spectrum.alpha, spectrum.beta
    log_pdf = (a - 1.0) * np.log(k_arr) - k_arr / b - math.lgamma(a) - a * math.log(b)
    out = np.exp(log_pdf)
    if k_arr.ndim == 0:
        return float(out)
    return out


def pdf_weight(spectrum: SizeSpectrum, t: float, w):
    """Density of the body weight at day t, a pure rescaling of the gamma law."""
    f = growth_fraction(spectrum.curve, t)
    return pdf_asymptotic_weight(spectrum, np.asarray(w, dtype=float) / f) / f


def mean_weight(spectrum: SizeSpectrum, t):
    """Mean body weight alpha*beta*fraction(t); nondecreasing in t."""
    return spectrum.alpha * spectrum.beta * growth_fraction(spectrum.curve, t)


def std_weight(spectrum: SizeSpectrum, t):
    """Standard deviation sqrt(alpha)*beta*fraction(t)."""
    return math.sqrt(spectrum.alpha) * spectrum.beta * growth_fraction(spectrum.curve, t)


def var_weight(spectrum: SizeSpectrum, t):
    return spectrum.alpha * (spectrum.beta * growth_fraction(spectrum.curve, t)) ** 2


def regularized_gamma_p(shape: float, x: float) -> float:
    """Regularized lower incomplete gamma P(shape, x).

    Power series for x < shape + 1, Lentz continued fraction for the upper
    tail otherwise; log-gamma from the C library.  Accurate to well below
    1e-12 in absolute terms over the parameter ranges used here.
    """
    if not (math.isfinite(shape) and shape > 0.0):
        raise ValueError(f"shape must be > 0, got {shape}")
    if not (math.isfinite(x) and x >= 0.0):
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return 0.0
    log_prefactor = shape * math.log(x) - x - math.lgamma(shape)
    if x < shape + 1.0:
        term = 1.0 / shape
        total = term
        denom = shape
        for _ in range(_MAX_SERIES_TERMS):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        else:
            raise RuntimeError(f"incomplete-gamma series failed to converge (shape={shape}, x={x})")
        return min(total * math.exp(log_prefactor), 1.0)
    # modified Lentz evaluation of the continued fraction for Q(shape, x)
    tiny = 1e-300
    b = x + 1.0 - shape
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    frac = d
    for i in range(1, _MAX_CF_TERMS + 1):
        an = -i * (i - shape)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        frac *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    else:
        raise RuntimeError(
            f"incomplete-gamma continued fraction failed to converge (shape={shape}, x={x})"
        )
    q = math.exp(log_prefactor) * frac
    return max(1.0 - q, 0.0)


def _gamma_log_pdf(shape: float, x: float) -> float:
    return (shape - 1.0) * math.log(x) - x - math.lgamma(shape)


def gamma_quantile(shape: float, p: float) -> float:
    """Inverse of ``regularized_gamma_p`` in x for fixed shape.

    Bracketed bisection followed by a Newton polish; raises if the combined
    iteration budget is exhausted before |P(x) - p| <= 1e-12 is reached
    rather than returning a possibly wrong value.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    iterations = 0
    hi = shape + 10.0 * math.sqrt(shape) + 10.0
    while regularized_gamma_p(shape, hi) < p:
        hi *= 2.0
        iterations += 1
        if iterations > 60:
            raise RuntimeError(f"quantile bracketing failed (shape={shape}, p={p})")
    lo = 0.0
    for _ in range(90):
        iterations += 1
        if iterations >= _QUANTILE_MAX_ITER:
            break
        mid = 0.5 * (lo + hi)
        if regularized_gamma_p(shape, mid) < p:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    while iterations < _QUANTILE_MAX_ITER:
        iterations += 1
        err = regularized_gamma_p(shape, x) - p
        if abs(err) <= 1e-12:
            return x
        step = err * math.exp(-_gamma_log_pdf(shape, x))
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if err > 0.0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        x = x_new
    err = regularized_gamma_p(shape, x) - p
    if abs(err) <= 1e-10:
        return x
    raise RuntimeError(
        f"gamma quantile did not converge within {_QUANTILE_MAX_ITER} iterations "
        f"(shape={shape}, p={p}, residual={err:.3e})"
    )


def quantile_weight(spectrum: SizeSpectrum, t: float, p: float) -> float:
    """p-quantile of the body weight at day t."""
    f = growth_fraction(spectrum.curve, t)
    return f * spectrum.beta * gamma_quantile(spectrum.alpha, p)


def quantize_weight(spectrum: SizeSpectrum, t: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapse the weight law at day t into n equal-probability point masses.

    Points sit at the quantiles of the midpoint probabilities (q - 0.5)/n and
    each carries mass 1/n, so the discrete law is unbiased in probability and
    its moments converge to the exact ones as n grows.
    """
    if n < 1:
        raise ValueError(f"need at least one quantile point, got {n}")
    f = growth_fraction(spectrum.curve, t)
    scale = f * spectrum.beta
    points = np.array(
        [scale * gamma_quantile(spectrum.alpha, (q - 0.5) / n) for q in range(1, n + 1)]
    )
    weights = np.full(n, 1.0 / n)
    return points, weights
