"""Survey ingestion and two-stage growth/spectrum calibration.

Calibration proceeds in two nested stages.  The one-day intensive survey
pins the gamma law by moment matching: its empirical mean and variance give
alpha = mean^2/var and beta = var/(mean * fraction(survey day)).  Daily mean
catch weights then pin the curve parameters by minimizing a count-weighted
least-squares error between data means and the model means implied by the
moment match.  The weighting by daily sample count reflects that a day with
more samples estimates the true mean with smaller error.

The weighted error is minimized by multi-start Nelder-Mead over transformed
parameters (logit for the initial fraction, log for the rates) on a fixed,
deterministic start schedule.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .growth import CurveVariant, GrowthCurve, growth_fraction, logistic_time_varying
from .spectrum import Allometry, SizeSpectrum

_F0_MIN = 1e-12  # calibration clamp; construction itself rejects f0 = 0
_RATE_MAX = 1e6
_NM_MAX_ITER = 2000


class DailyRecord(NamedTuple):
    day: float
    mean_weight: float
    count: int


@dataclass(frozen=True)
class SurveyDataset:
    """Daily mean-weight records plus one intensive-survey weight sample.

    Daily records are stored sorted by (day, mean, count) so results do not
    depend on input ordering.  ``season_origin`` documents the calendar date
    mapped to day 0 (May 1 for the study system) and is metadata only.
    """

    daily: tuple[DailyRecord, ...]
    intensive_day: float
    intensive_weights: np.ndarray
    season_origin: str = "05-01"

    def __post_init__(self) -> None:
        records = tuple(sorted(DailyRecord(*r) for r in self.daily))
        object.__setattr__(self, "daily", records)
        weights = np.asarray(self.intensive_weights, dtype=float)
        object.__setattr__(self, "intensive_weights", weights)
        if len(records) == 0:
            raise ValueError("dataset needs at least one daily record")
        for rec in records:
            if not (math.isfinite(rec.day) and rec.day >= 0.0):
                raise ValueError(f"daily record day must be >= 0, got {rec.day}")
            if not (math.isfinite(rec.mean_weight) and rec.mean_weight > 0.0):
                raise ValueError(f"daily mean weight must be > 0, got {rec.mean_weight}")
            if rec.count < 1:
                raise ValueError(f"daily sample count must be >= 1, got {rec.count}")
        if not (math.isfinite(self.intensive_day) and self.intensive_day >= 0.0):
            raise ValueError(f"intensive survey day must be >= 0, got {self.intensive_day}")
        if weights.size < 2:
            raise ValueError("intensive survey needs >= 2 weights: variance undefined")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0.0):
            raise ValueError("intensive weights must be positive and finite")

    @property
    def intensive_mean(self) -> float:
        return float(np.mean(self.intensive_weights))

    @property
    def intensive_var(self) -> float:
        return float(np.var(self.intensive_weights, ddof=1))


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    restarts: int
    converged: bool


@dataclass(frozen=True)
class FittedModel:
    spectrum: SizeSpectrum
    min_err: float
    diagnostics: FitDiagnostics

    def __post_init__(self) -> None:
        if not (math.isfinite(self.min_err) and self.min_err >= 0.0):
            raise ValueError(f"min_err must be finite and >= 0, got {self.min_err}")

    def to_json_dict(self) -> dict:
        curve = self.spectrum.curve
        return {
            "variant": curve.variant.value,
            "f0": curve.f0,
            "r": curve.r,
            "r0": curve.r0,
            "r1": curve.r1,
            "alpha": self.spectrum.alpha,
            "beta": self.spectrum.beta,
            "min_err": self.min_err,
        }


def curve_from_json_dict(doc: dict) -> GrowthCurve:
    variant = CurveVariant(doc["variant"])
    if variant is CurveVariant.LOGISTIC_TV:
        return logistic_time_varying(doc["f0"], doc["r0"], doc["r1"])
    return GrowthCurve(variant, doc["f0"], r=doc["r"])


def spectrum_from_json_dict(doc: dict) -> SizeSpectrum:
    return SizeSpectrum(doc["alpha"], doc["beta"], curve_from_json_dict(doc))


def moment_match(intensive_mean: float, intensive_var: float, f_at_survey: float) -> tuple[float, float]:
    """Gamma (shape, scale) matching the intensive survey's mean and variance."""
    if not (math.isfinite(intensive_mean) and intensive_mean > 0.0):
        raise ValueError(f"intensive mean must be > 0, got {intensive_mean}")
    if not (math.isfinite(intensive_var) and intensive_var > 0.0):
        raise ValueError(f"intensive variance must be > 0, got {intensive_var}")
    if not (0.0 < f_at_survey <= 1.0):
        raise ValueError(f"growth fraction at survey must lie in (0, 1], got {f_at_survey}")
    alpha = intensive_mean * intensive_mean / intensive_var
    beta = intensive_var / (intensive_mean * f_at_survey)
    return alpha, beta


def wls_error(dataset: SurveyDataset, curve: GrowthCurve) -> float:
    """Count-weighted mean squared error of daily means against the model.

    The gamma parameters implied by the intensive survey make the model mean
    at day t equal intensive_mean * fraction(t)/fraction(survey day), so the
    error depends on the curve alone.
    """
    f_survey = growth_fraction(curve, dataset.intensive_day)
    days = np.array([rec.day for rec in dataset.daily])
    data_means = np.array([rec.mean_weight for rec in dataset.daily])
    counts = np.array([rec.count for rec in dataset.daily], dtype=float)
    model_means = dataset.intensive_mean * (growth_fraction(curve, days) / f_survey)
    return float(np.sum(counts * (data_means - model_means) ** 2) / np.sum(counts))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _expit(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _clamped_f0(u: float) -> float:
    return min(max(_expit(u), _F0_MIN), 1.0 - 1e-12)


def _clamped_rate(u: float) -> float:
    return min(math.exp(min(u, 50.0)), _RATE_MAX)


def _curve_from_params(variant: CurveVariant, u: np.ndarray) -> GrowthCurve:
    f0 = _clamped_f0(u[0])
    if variant is CurveVariant.LOGISTIC_TV:
        return logistic_time_varying(f0, _clamped_rate(u[1]), _clamped_rate(u[2]))
    return GrowthCurve(variant, f0, r=_clamped_rate(u[1]))


def _start_schedule(variant: CurveVariant) -> list[np.ndarray]:
    f0_starts = np.linspace(_logit(0.005), _logit(0.8), 8)
    if variant is CurveVariant.LOGISTIC_TV:
        r0_starts = np.log(np.geomspace(1e-4, 0.3, 4))
        r1_starts = np.log(np.geomspace(1e-8, 1e-3, 4))
        return [
            np.array([u0, u1, u2])
            for u0 in f0_starts
            for u1 in r0_starts
            for u2 in r1_starts
        ]
    rate_starts = np.log(np.geomspace(1e-4, 0.5, 8))
    return [np.array([u0, u1]) for u0 in f0_starts for u1 in rate_starts]


def fit_growth(dataset: SurveyDataset, variant: CurveVariant) -> FittedModel:
    """Fit the curve parameters and moment-matched gamma law for one dataset.

    Multi-start Nelder-Mead on the fixed schedule; ties between starts break
    on the lexicographically smallest parameter vector so the result is
    deterministic regardless of evaluation order.
    """

    def objective(u: np.ndarray) -> float:
        try:
            return wls_error(dataset, _curve_from_params(variant, u))
        except (ValueError, OverflowError):
            return math.inf

    best_err = math.inf
    best_u: np.ndarray | None = None
    total_iterations = 0
    converged = False
    starts = _start_schedule(variant)
    for u0 in starts:
        result = minimize(
            objective,
            u0,
            method="Nelder-Mead",
            options={
                "maxiter": _NM_MAX_ITER,
                "fatol": 1e-15,
                "xatol": 1e-10,
            },
        )
        total_iterations += int(result.nit)
        err = float(result.fun)
        if not math.isfinite(err):
            continue
        converged = converged or bool(result.success)
        candidate = np.asarray(result.x, dtype=float)
        if err < best_err or (err == best_err and best_u is not None and tuple(candidate) < tuple(best_u)):
            best_err = err
            best_u = candidate
    if best_u is None:
        raise RuntimeError(
            f"growth fit failed: no start converged to a finite error "
            f"({len(starts)} starts, {total_iterations} iterations)"
        )
    curve = _curve_from_params(variant, best_u)
    alpha, beta = moment_match(
        dataset.intensive_mean,
        dataset.intensive_var,
        growth_fraction(curve, dataset.intensive_day),
    )
    diagnostics = FitDiagnostics(
        iterations=total_iterations, restarts=len(starts), converged=converged
    )
    return FittedModel(
        spectrum=SizeSpectrum(alpha, beta, curve),
        min_err=best_err,
        diagnostics=diagnostics,
    )


def loglog_estimate(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Allometry (a, b) from a linear regression on log length vs log weight."""
    lengths = np.array([p[0] for p in pairs], dtype=float)
    weights = np.array([p[1] for p in pairs], dtype=float)
    slope, intercept = np.polyfit(np.log(lengths), np.log(weights), 1)
    return float(math.exp(intercept)), float(slope)


def fit_allometry(pairs: Sequence[tuple[float, float]]) -> Allometry:
    """Least squares on raw (length, weight) pairs for w = a * l**b.

    Initialized from the log-log regression, then refined on untransformed
    residuals so heavy individuals are not downweighted.
    """
    if len(pairs) < 3:
        raise ValueError(f"allometry fit needs >= 3 pairs, got {len(pairs)}")
    lengths = np.array([p[0] for p in pairs], dtype=float)
    weights = np.array([p[1] for p in pairs], dtype=float)
    if np.any(lengths <= 0.0) or np.any(weights <= 0.0):
        raise ValueError("lengths and weights must be positive")
    if np.ptp(lengths) == 0.0:
        raise ValueError("degenerate data: all lengths equal")
    a0, b0 = loglog_estimate(pairs)

    def residuals(p: np.ndarray) -> np.ndarray:
        return math.exp(p[0]) * lengths ** p[1] - weights

    result = least_squares(residuals, x0=np.array([math.log(a0), b0]), method="lm")
    if not result.success:
        raise RuntimeError(f"allometry fit did not converge: {result.message}")
    return Allometry(float(math.exp(result.x[0])), float(result.x[1]))


_DAILY_HEADER = ["day", "mean_weight_g", "sample_count"]
_INTENSIVE_HEADER = ["weight_g"]


def _read_rows(path: str, expected_header: list[str]) -> list[tuple[int, list[str]]]:
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=1) if row]
    if not rows:
        raise ValueError(f"{path}: empty file, expected header {','.join(expected_header)}")
    header_line, header = rows[0]
    if [h.strip() for h in header] != expected_header:
        raise ValueError(
            f"{path}:{header_line}: expected header {','.join(expected_header)}, got {','.join(header)}"
        )
    return rows[1:]


def load_dataset(
    daily_csv: str,
    intensive_csv: str,
    intensive_day: float,
    season_origin: str = "05-01",
) -> SurveyDataset:
    """Read and validate the daily and intensive survey CSV files.

    The daily file has columns day,mean_weight_g,sample_count; the intensive
    file a single weight_g column; both need a header row.  The intensive
    survey day is not part of the file format and is passed explicitly.
    """
    daily: list[DailyRecord] = []
    for lineno, row in _read_rows(daily_csv, _DAILY_HEADER):
        if len(row) != 3:
            raise ValueError(f"{daily_csv}:{lineno}: expected 3 columns, got {len(row)}")
        try:
            day = float(row[0])
            mean = float(row[1])
            count = int(row[2])
        except ValueError as exc:
            raise ValueError(f"{daily_csv}:{lineno}: {exc}") from exc
        if mean <= 0.0:
            raise ValueError(f"{daily_csv}:{lineno}: mean weight must be > 0, got {mean}")
        if day < 0.0:
            raise ValueError(f"{daily_csv}:{lineno}: day must be >= 0, got {day}")
        if count < 1:
            raise ValueError(f"{daily_csv}:{lineno}: sample count must be >= 1, got {count}")
        daily.append(DailyRecord(day, mean, count))
    if not daily:
        raise ValueError(f"{daily_csv}: no data rows")

    weights: list[float] = []
    for lineno, row in _read_rows(intensive_csv, _INTENSIVE_HEADER):
        if len(row) != 1:
            raise ValueError(f"{intensive_csv}:{lineno}: expected 1 column, got {len(row)}")
        try:
            w = float(row[0])
        except ValueError as exc:
            raise ValueError(f"{intensive_csv}:{lineno}: {exc}") from exc
        if w <= 0.0:
            raise ValueError(f"{intensive_csv}:{lineno}: weight must be > 0, got {w}")
        weights.append(w)
    if len(weights) < 2:
        raise ValueError(f"{intensive_csv}: needs >= 2 weights, variance undefined")

    return SurveyDataset(
        daily=tuple(daily),
        intensive_day=intensive_day,
        intensive_weights=np.array(weights),
        season_origin=season_origin,
    )


def save_fitted_model(model: FittedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model.to_json_dict(), handle, indent=2)
        handle.write("\n")


def load_fitted_spectrum(path: str) -> SizeSpectrum:
    with open(path, encoding="utf-8") as handle:
        return spectrum_from_json_dict(json.load(handle))
