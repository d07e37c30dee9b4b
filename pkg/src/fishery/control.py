"""Equilibrium harvesting control via an explicit backward sweep.

The controlled state is the fish population X, which only decreases: each
angler arrival (an inhomogeneous Poisson event with intensity theta chosen
in [0, u_bar]) removes min(h_bar, X) individuals, and an independent
catastrophe process with intensity d + k*theta^gamma collapses X to
(1 - kappa) X.  The objective couples the expected harvested biomass with a
certainty-equivalent terminal utility: the expectation of the remaining
biomass is taken through a power transform with shape psi, which makes the
problem time-inconsistent for psi != 0, so the usual dynamic programming
value function is replaced by an equilibrium-policy system.

That system couples the value grid with a family of auxiliary expectation
fields, one per terminal-weight quantile point: each field tracks the
expected transformed terminal biomass for that weight under the equilibrium
policy, and their certainty-equivalent aggregate feeds back into the value
update.  Everything is discretized explicitly on a uniform lattice with
spatial step equal to the harvest size, so one harvest moves exactly one
node; the backward sweep is stable (all updates are convex combinations)
whenever dt < 1 / (u_bar + d + k*u_bar^gamma), and under that bound the
value grid stays within known a-priori bounds that the solver asserts as it
sweeps.

The per-node intensity maximization is exact: the objective in theta is
a*theta + k*b*theta^gamma plus a theta-independent part, which is concave
for b < 0 (interior candidate available in closed form) and convex
otherwise (endpoint comparison).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectrum import SizeSpectrum, mean_weight, quantize_weight

_LAMBDA_CLAMP = 1e-12  # floor under the inverse-transform derivative for psi > 0
_BOUND_RTOL = 1e-9


class SolverDivergenceError(RuntimeError):
    """Raised when the sweep produces NaN values."""


class BoundViolationError(RuntimeError):
    """Raised when a sweep slice leaves the a-priori solution bounds."""


@dataclass(frozen=True)
class ControlProblem:
    """All constants of the harvesting-control problem.

    ``d`` is the base catastrophe rate, ``k`` and ``gamma`` shape how the
    catastrophe intensity grows with the harvesting intensity, ``kappa`` the
    fraction of the population lost per catastrophe, ``eta`` the weight of
    the terminal utility, ``psi`` the shape of its power transform, and
    [t0, t_end] the harvesting horizon in absolute season days.
    """

    spectrum: SizeSpectrum
    d: float
    k: float
    gamma: float
    kappa: float
    eta: float
    psi: float
    u_bar: float
    h_bar: float
    x_bar: float
    t0: float
    t_end: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and self.gamma > 1.0):
            raise ValueError(f"gamma must be > 1, got {self.gamma}")
        if not (math.isfinite(self.psi) and self.psi > -1.0):
            raise ValueError(f"psi must be > -1, got {self.psi}")
        if not (0.0 < self.kappa <= 1.0):
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.d < 0.0 or self.k < 0.0:
            raise ValueError("catastrophe rates d and k must be >= 0")
        if self.u_bar < 0.0:
            raise ValueError(f"u_bar must be >= 0, got {self.u_bar}")
        if self.eta < 0.0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not (0.0 < self.t0 < self.t_end):
            raise ValueError(f"need 0 < t0 < t_end, got [{self.t0}, {self.t_end}]")
        if not (math.isfinite(self.h_bar) and self.h_bar > 0.0):
            raise ValueError(f"h_bar must be > 0, got {self.h_bar}")
        ratio = self.x_bar / self.h_bar
        if not (self.x_bar > 0.0 and abs(ratio - round(ratio)) <= 1e-9 * max(ratio, 1.0)):
            raise ValueError(
                f"x_bar must be a positive integer multiple of h_bar, got {self.x_bar}/{self.h_bar}"
            )

    def harvest(self, x: float) -> float:
        """Individuals removed by one arrival: min(h_bar, x)."""
        if x < 0.0:
            raise ValueError(f"population must be >= 0, got {x}")
        return min(self.h_bar, x)

    def catastrophe_rate(self, theta) -> float:
        return self.d + self.k * theta**self.gamma


def utility(psi: float, y):
    """Power transform y**(psi+1) / (psi+1) on y >= 0; identity at psi = 0."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0):
        raise ValueError("transform argument must be >= 0")
    if psi == 0.0:
        out = y_arr.copy()
    else:
        out = y_arr ** (psi + 1.0) / (psi + 1.0)
    if y_arr.ndim == 0:
        return float(out)
    return out


def utility_inv(psi: float, y):
    """Inverse of the power transform: ((psi+1) y)**(1/(psi+1))."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0):
        raise ValueError("transform argument must be >= 0")
    if psi == 0.0:
        out = y_arr.copy()
    else:
        out = ((psi + 1.0) * y_arr) ** (1.0 / (psi + 1.0))
    if y_arr.ndim == 0:
        return float(out)
    return out


def utility_inv_deriv(psi: float, y):
    """Derivative of the inverse transform: ((psi+1) y)**(-psi/(psi+1)).

    Infinite at y = 0 when psi > 0; callers inside the sweep clamp their
    argument away from zero (the interior fields stay strictly positive, so
    the clamp only guards round-off).
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0):
        raise ValueError("transform argument must be >= 0")
    if psi == 0.0:
        out = np.ones_like(y_arr)
    else:
        with np.errstate(divide="ignore"):
            out = ((psi + 1.0) * y_arr) ** (-psi / (psi + 1.0))
    if y_arr.ndim == 0:
        return float(out)
    return out


def utility_inv_tangent_gap(psi: float, x: float, y: float) -> float:
    """Tangent-line excess of the inverse transform between x and y.

    Returns deriv(x)*(y - x) - (inv(y) - inv(x)).  Nonnegative when the
    transform is convex (psi > 0), nonpositive when concave (psi < 0) and
    identically zero at psi = 0; infinite at x = 0, y > x for psi > 0 where
    the derivative blows up.
    """
    if x < 0.0 or y < 0.0:
        raise ValueError("arguments must be >= 0")
    if psi == 0.0:
        return 0.0
    if x == 0.0 and psi > 0.0:
        return math.inf if y > x else 0.0
    lam = utility_inv_deriv(psi, x)
    return lam * (y - x) - (utility_inv(psi, y) - utility_inv(psi, x))


def stability_limit(problem: ControlProblem) -> float:
    """Largest admissible time step, 1 / (u_bar + d + k*u_bar^gamma)."""
    denom = problem.u_bar + problem.d + problem.k * problem.u_bar**problem.gamma
    if denom <= 0.0:
        return math.inf
    return 1.0 / denom


def check_stability_bound(problem: ControlProblem, dt: float) -> bool:
    """True iff dt is strictly below the explicit-scheme stability limit."""
    return dt < stability_limit(problem)


def optimal_intensity(a: float, b: float, problem: ControlProblem) -> tuple[float, float]:
    """Exact maximizer of a*theta + k*b*theta**gamma on [0, u_bar].

    ``a`` collects everything in the node update that scales linearly with
    the arrival intensity (value shift per harvest plus the harvest payoff);
    ``b`` is the value shift per catastrophe.  For b < 0 the objective is
    strictly concave and the stationary point (a / (-gamma k b))^(1/(gamma-1))
    is clamped to the interval; otherwise it is convex so only the endpoints
    compete.  Ties resolve to the smaller intensity.
    """
    u, k, g = problem.u_bar, problem.k, problem.gamma
    if b < 0.0 and k > 0.0:
        if a <= 0.0:
            theta = 0.0
        else:
            base = a / (-g * k * b)
            try:
                cand = base ** (1.0 / (g - 1.0))
            except OverflowError:
                cand = math.inf
            theta = min(cand, u)
    else:
        theta = u if a * u + k * b * u**g > 0.0 else 0.0
    return theta, a * theta + k * b * theta**g


def _optimal_intensity_grid(
    a: np.ndarray, b: np.ndarray, u: float, k: float, g: float
) -> tuple[np.ndarray, np.ndarray]:
    # vectorized twin of optimal_intensity over all interior nodes
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        base = np.where(b < 0.0, a / (-g * k * b) if k > 0.0 else 1.0, 1.0)
        cand = base ** (1.0 / (g - 1.0))
    interior = np.minimum(np.where(a > 0.0, cand, 0.0), u)
    endpoint = np.where(a * u + k * b * u**g > 0.0, u, 0.0)
    theta = np.where((b < 0.0) & (k > 0.0), interior, endpoint)
    return theta, a * theta + (k * b) * theta**g


@dataclass(frozen=True)
class Lattice:
    """Uniform space-time lattice plus the quantized terminal-weight law.

    The spatial step equals the harvest size so a single harvest moves the
    state exactly one node down, and the terminal-weight quantile points are
    placed once, at the end of the horizon, because the auxiliary fields all
    integrate against the terminal weight law.
    """

    dt: float
    dx: float
    n_t: int
    n_x: int
    n_w: int
    w_points: np.ndarray
    w_weights: np.ndarray

    @classmethod
    def build(cls, problem: ControlProblem, dt: float, n_w: int = 64) -> "Lattice":
        if not check_stability_bound(problem, dt):
            raise ValueError(
                f"dt={dt} violates the stability bound dt < {stability_limit(problem):.6g}"
            )
        if dt <= 0.0:
            raise ValueError(f"dt must be > 0, got {dt}")
        horizon = problem.t_end - problem.t0
        n_t = int(round(horizon / dt))
        if n_t < 1 or abs(n_t * dt - horizon) > 1e-9 * horizon:
            raise ValueError(f"dt={dt} does not divide the horizon {horizon}")
        n_x = int(round(problem.x_bar / problem.h_bar))
        points, weights = quantize_weight(problem.spectrum, problem.t_end, n_w)
        return cls(
            dt=dt,
            dx=problem.h_bar,
            n_t=n_t,
            n_x=n_x,
            n_w=n_w,
            w_points=points,
            w_weights=weights,
        )

    def x_grid(self) -> np.ndarray:
        return np.arange(self.n_x + 1) * self.dx

    def times(self, problem: ControlProblem) -> np.ndarray:
        return problem.t0 + np.arange(self.n_t + 1) * self.dt


@dataclass
class SolverOutput:
    """Grids produced by the backward sweep.

    ``value`` and ``intensity`` cover every lattice node (the last intensity
    row is zero: no decision is taken at the terminal time).
    ``terminal_biomass`` is the certainty-equivalent predicted terminal
    biomass.  ``utility_field`` holds the auxiliary expectation fields at the
    time slices listed in ``saved_steps`` (always including both ends), with
    shape (len(saved_steps), n_x + 1, n_w).
    """

    value: np.ndarray
    intensity: np.ndarray
    terminal_biomass: np.ndarray
    utility_field: np.ndarray
    saved_steps: np.ndarray
    problem: ControlProblem
    lattice: Lattice
    bound_report: dict

    def utility_slice(self, step: int) -> np.ndarray:
        idx = np.searchsorted(self.saved_steps, step)
        if idx >= len(self.saved_steps) or self.saved_steps[idx] != step:
            raise KeyError(f"step {step} was not saved (stride misses it)")
        return self.utility_field[idx]


def _interp_rows(values: np.ndarray, pos: np.ndarray) -> np.ndarray:
    # linear interpolation of grid rows at fractional node positions
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, values.shape[0] - 1)
    frac = pos - lo
    if values.ndim == 1:
        return (1.0 - frac) * values[lo] + frac * values[hi]
    return (1.0 - frac)[:, None] * values[lo] + frac[:, None] * values[hi]


def solve(
    problem: ControlProblem,
    lattice: Lattice,
    g_stride: int = 1,
    check_bounds: bool = True,
) -> SolverOutput:
    """Backward sweep of the coupled value / auxiliary-field recursion.

    At each interior node the update assembles the linear-in-intensity gain
    ``a`` (value shift per harvest, harvest payoff and, when the terminal
    utility is active, the certainty-equivalent correction terms) and the
    per-catastrophe gain ``b``, maximizes exactly over the intensity,
    advances the value, then advances every auxiliary field with the chosen
    intensity.  Complete extinction (kappa = 1) reads the boundary row
    directly; partial extinction interpolates the previous slice linearly at
    (1 - kappa) x.

    With ``check_bounds`` the sweep asserts after every step that the fields
    stay inside their a-priori bounds (value nonnegative only for psi >= 0,
    where the transform is convex) and aborts on NaN, naming the offending
    node.
    """
    if not check_stability_bound(problem, lattice.dt):
        raise ValueError(
            f"dt={lattice.dt} violates the stability bound dt < {stability_limit(problem):.6g}"
        )
    if g_stride < 1:
        raise ValueError(f"g_stride must be >= 1, got {g_stride}")

    n_t, n_x, n_w = lattice.n_t, lattice.n_x, lattice.n_w
    dt = lattice.dt
    eta, psi, kappa = problem.eta, problem.psi, problem.kappa
    d, k, gamma, u_bar, h_bar = problem.d, problem.k, problem.gamma, problem.u_bar, problem.h_bar
    w = lattice.w_points
    om = lattice.w_weights
    x = lattice.x_grid()

    wbar_end = mean_weight(problem.spectrum, problem.t_end)
    wbar_steps = mean_weight(problem.spectrum, lattice.times(problem))

    value = np.empty((n_t + 1, n_x + 1))
    intensity = np.zeros((n_t + 1, n_x + 1))
    terminal_biomass = np.empty((n_t + 1, n_x + 1))

    g_next = utility(psi, x[:, None] * w[None, :])  # (n_x+1, n_w)
    rinv_next = utility_inv(psi, g_next)
    value[n_t] = eta * wbar_end * x
    terminal_biomass[n_t] = rinv_next @ om

    saved: dict[int, np.ndarray] = {n_t: g_next.copy()}

    # a-priori bounds (valid whenever the transform maps [0, inf) into itself)
    g_upper = utility(psi, w * problem.x_bar)  # (n_w,)
    lam_upper = utility_inv_deriv(psi, np.maximum(g_upper, _LAMBDA_CLAMP))
    growth_const = u_bar * h_bar * wbar_end + (
        u_bar + d + k * u_bar**gamma
    ) * eta * (wbar_end * problem.x_bar + float(om @ (lam_upper * g_upper)))
    terminal_cap = eta * wbar_end * problem.x_bar

    use_coupling = eta > 0.0 and psi != 0.0

    if kappa == 1.0:
        cat_pos = None
    else:
        cat_pos = (1.0 - kappa) * np.arange(n_x + 1)

    for i in range(n_t - 1, -1, -1):
        phi_next = value[i + 1]
        if kappa == 1.0:
            phi_cat = np.full(n_x, phi_next[0])
            g_cat = np.broadcast_to(g_next[0], (n_x, n_w))
        else:
            phi_cat = _interp_rows(phi_next, cat_pos)[1:]
            g_cat = _interp_rows(g_next, cat_pos)[1:]

        dphi_h = phi_next[:-1] - phi_next[1:]
        dphi_c = phi_cat - phi_next[1:]
        dg_h = g_next[:-1] - g_next[1:]
        dg_c = g_cat - g_next[1:]

        a = dphi_h + h_bar * wbar_steps[i]
        b = dphi_c
        if use_coupling:
            if kappa == 1.0:
                rinv_cat = np.broadcast_to(rinv_next[0], (n_x, n_w))
            else:
                rinv_cat = utility_inv(psi, g_cat)
            if psi > 0.0:
                lam_next = utility_inv_deriv(psi, np.maximum(g_next[1:], _LAMBDA_CLAMP))
            else:
                lam_next = utility_inv_deriv(psi, g_next[1:])
            a = a - eta * ((rinv_next[:-1] - rinv_next[1:]) @ om) + eta * ((lam_next * dg_h) @ om)
            b = b - eta * ((rinv_cat - rinv_next[1:]) @ om) + eta * ((lam_next * dg_c) @ om)

        theta, gain = _optimal_intensity_grid(a, b, u_bar, k, gamma)
        nu = d + k * theta**gamma

        phi_new = np.empty(n_x + 1)
        phi_new[0] = 0.0
        phi_new[1:] = phi_next[1:] + dt * (gain + d * b)

        g_new = np.empty_like(g_next)
        g_new[0] = g_next[0]
        g_new[1:] = g_next[1:] + dt * (theta[:, None] * dg_h + nu[:, None] * dg_c)

        if np.isnan(phi_new).any() or np.isnan(g_new).any():
            j = int(np.argmax(np.isnan(phi_new) | np.isnan(g_new).any(axis=-1)))
            raise SolverDivergenceError(f"NaN detected at step i={i}, node j={j}")

        value[i] = phi_new
        intensity[i, 1:] = theta
        rinv_new = utility_inv(psi, g_new)
        terminal_biomass[i] = rinv_new @ om

        if check_bounds:
            _assert_bounds(
                phi_new, g_new, g_upper, psi,
                terminal_cap + growth_const * (n_t - i) * dt, i,
            )

        if i % g_stride == 0:
            saved[i] = g_new.copy()
        g_next = g_new
        rinv_next = rinv_new

    saved_steps = np.array(sorted(saved))
    utility_field = np.stack([saved[s] for s in saved_steps])
    bound_report = {
        "stability_limit": stability_limit(problem),
        "dt": dt,
        "stability_ok": True,
        "bounds_checked": bool(check_bounds),
        "bounds_ok": True,
        "value_growth_constant": growth_const,
        "value_upper_at_start": terminal_cap + growth_const * n_t * dt,
        "value_min": float(value.min()),
        "value_max": float(value.max()),
    }
    return SolverOutput(
        value=value,
        intensity=intensity,
        terminal_biomass=terminal_biomass,
        utility_field=utility_field,
        saved_steps=saved_steps,
        problem=problem,
        lattice=lattice,
        bound_report=bound_report,
    )


def _assert_bounds(
    phi: np.ndarray,
    g: np.ndarray,
    g_upper: np.ndarray,
    psi: float,
    phi_cap: float,
    step: int,
) -> None:
    scale = max(abs(phi_cap), 1.0)
    if psi >= 0.0 and phi.min() < -_BOUND_RTOL * scale:
        j = int(np.argmin(phi))
        raise BoundViolationError(
            f"value lower bound violated at step i={step}, node j={j}: {phi[j]:.6g} < 0"
        )
    if phi.max() > phi_cap + _BOUND_RTOL * scale:
        j = int(np.argmax(phi))
        raise BoundViolationError(
            f"value upper bound violated at step i={step}, node j={j}: {phi[j]:.6g} > {phi_cap:.6g}"
        )
    g_tol = _BOUND_RTOL * (g_upper + 1.0)
    if (g < -g_tol).any():
        j, q = np.unravel_index(int(np.argmin(g)), g.shape)
        raise BoundViolationError(
            f"auxiliary field lower bound violated at step i={step}, node j={j}, point q={q}"
        )
    if (g > g_upper[None, :] + g_tol).any():
        j, q = np.unravel_index(int(np.argmax(g - g_upper[None, :])), g.shape)
        raise BoundViolationError(
            f"auxiliary field upper bound violated at step i={step}, node j={j}, point q={q}"
        )
