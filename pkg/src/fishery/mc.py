"""Monte Carlo simulation of the controlled population under a policy grid.

Paths step the population forward with one Bernoulli draw per step for each
event type: an arrival fires with probability theta*dt (theta read from the
policy at the nearest lattice node) and a catastrophe independently with
probability (d + k*theta^gamma)*dt.  Both may fire in the same step; the
harvest is applied first, on the pre-event population.  The per-step
scheme carries an O(dt) discretization error matched to the solver's, which
is the point: the simulated chain is the probabilistic twin of the explicit
sweep, so path averages should reproduce the value grid up to statistical
noise plus an O(dt) allowance.

Randomness is counter-based: path p consumes its own Philox stream keyed by
(seed, p), so results are bit-for-bit reproducible and independent of how
paths are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import ControlProblem, Lattice, utility, utility_inv, utility_inv_deriv
from .spectrum import mean_weight

_BLOCK_SIZE = 1024


@dataclass
class SimulationConfig:
    """Inputs of one simulation run.

    ``policy`` is either the solver's intensity grid, shaped
    (n_t + 1, n_x + 1), or a plain float for a constant-intensity override.
    ``dt_sim`` defaults to the lattice step.
    """

    problem: ControlProblem
    lattice: Lattice
    policy: np.ndarray | float
    x0: float
    n_paths: int
    seed: int
    dt_sim: float | None = None

    def __post_init__(self) -> None:
        if self.dt_sim is None:
            self.dt_sim = self.lattice.dt
        p = self.problem
        total_rate = p.u_bar + p.d + p.k * p.u_bar**p.gamma
        if self.dt_sim <= 0.0 or self.dt_sim * total_rate >= 1.0:
            raise ValueError(
                f"dt_sim={self.dt_sim} makes per-step event probabilities invalid "
                f"(need dt_sim * {total_rate:.6g} < 1)"
            )
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not (0.0 <= self.x0 <= p.x_bar):
            raise ValueError(f"x0 must lie in [0, {p.x_bar}], got {self.x0}")
        if np.ndim(self.policy) != 0:
            policy = np.asarray(self.policy, dtype=float)
            expected = (self.lattice.n_t + 1, self.lattice.n_x + 1)
            if policy.shape != expected:
                raise ValueError(f"policy grid must have shape {expected}, got {policy.shape}")
            if np.any(policy < 0.0) or np.any(policy > p.u_bar):
                raise ValueError("policy intensities must lie in [0, u_bar]")
            self.policy = policy


@dataclass
class SimulationResult:
    j_estimate: float
    j_se: float
    harvest_term: float
    harvest_se: float
    terminal_term: float
    terminal_se: float
    extinction_fraction: float
    terminal_population: dict = field(default_factory=dict)
    n_paths: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "j_estimate": self.j_estimate,
            "j_se": self.j_se,
            "harvest_term": self.harvest_term,
            "harvest_se": self.harvest_se,
            "terminal_term": self.terminal_term,
            "terminal_se": self.terminal_se,
            "extinction_fraction": self.extinction_fraction,
            "terminal_population": self.terminal_population,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }


def _path_generator(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=path_index << 128))


def run_paths(
    problem: ControlProblem,
    lattice: Lattice,
    policy: np.ndarray | float,
    t_start: float,
    x0: float,
    n_paths: int,
    seed: int,
    dt_sim: float,
    record: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Simulate paths from (t_start, x0) to the end of the horizon.

    Returns (per-path harvested biomass, per-path terminal population) and,
    with ``record``, the full population trajectories (small runs only).
    """
    span = problem.t_end - t_start
    n_steps = int(round(span / dt_sim))
    if n_steps < 0 or abs(n_steps * dt_sim - span) > 1e-9 * max(span, 1.0):
        raise ValueError(f"dt_sim={dt_sim} does not divide the remaining horizon {span}")

    constant_policy = np.ndim(policy) == 0
    if constant_policy:
        theta_const = float(policy)
        if not (0.0 <= theta_const <= problem.u_bar):
            raise ValueError("constant policy must lie in [0, u_bar]")
        policy_rows = None
    else:
        # nearest lattice row in time for every simulation step
        step_times = t_start + np.arange(max(n_steps, 1)) * dt_sim
        rows = np.rint((step_times - problem.t0) / lattice.dt).astype(int)
        policy_rows = np.clip(rows, 0, lattice.n_t - 1)

    wbar_steps = (
        mean_weight(problem.spectrum, t_start + np.arange(n_steps) * dt_sim)
        if n_steps > 0
        else np.empty(0)
    )

    benefits = np.empty(n_paths)
    x_terminal = np.empty(n_paths)
    trajectories = np.empty((n_paths, n_steps + 1)) if record else None

    d, k, gamma, kappa = problem.d, problem.k, problem.gamma, problem.kappa
    h_bar, dx, n_x = problem.h_bar, lattice.dx, lattice.n_x

    for start in range(0, n_paths, _BLOCK_SIZE):
        stop = min(start + _BLOCK_SIZE, n_paths)
        block = stop - start
        draws = np.empty((block, n_steps, 2))
        for offset in range(block):
            gen = _path_generator(seed, start + offset)
            draws[offset] = gen.random((n_steps, 2))

        x = np.full(block, float(x0))
        gained = np.zeros(block)
        if record:
            trajectories[start:stop, 0] = x
        for s in range(n_steps):
            if constant_policy:
                theta = theta_const
            else:
                nodes = np.clip(np.rint(x / dx).astype(int), 0, n_x)
                theta = policy[policy_rows[s], nodes]
            harvested = draws[:, s, 0] < theta * dt_sim
            take = np.minimum(h_bar, x)
            gained += np.where(harvested, wbar_steps[s] * take, 0.0)
            x = np.where(harvested, x - take, x)
            nu = d + k * theta**gamma
            collapsed = draws[:, s, 1] < nu * dt_sim
            x = np.where(collapsed, (1.0 - kappa) * x, x)
            if record:
                trajectories[start:stop, s + 1] = x
        benefits[start:stop] = gained
        x_terminal[start:stop] = x

    return benefits, x_terminal, trajectories


def simulate_paths(config: SimulationConfig) -> SimulationResult:
    """Estimate the controlled objective from (t0, x0) by simulation.

    The harvest term is a plain path average.  The terminal term applies the
    certainty-equivalent transform across paths: for every terminal-weight
    quantile point the transformed terminal biomass is averaged over paths
    first and inverse-transformed afterwards.  Its standard error comes from
    the delta method (per-path contributions linearized through the inverse
    transform), which also makes the j estimate exactly the sum of the two
    terms with a correlation-consistent standard error.
    """
    problem, lattice = config.problem, config.lattice
    benefits, x_terminal, _ = run_paths(
        problem,
        lattice,
        config.policy,
        problem.t0,
        config.x0,
        config.n_paths,
        config.seed,
        config.dt_sim,
    )
    n = config.n_paths
    w = lattice.w_points
    om = lattice.w_weights
    psi, eta = problem.psi, problem.eta

    transformed = utility(psi, x_terminal[:, None] * w[None, :])  # (n, n_w)
    mean_transformed = transformed.mean(axis=0)
    terminal_term = eta * float(om @ utility_inv(psi, mean_transformed))
    if psi > 0.0:
        slope = utility_inv_deriv(psi, np.maximum(mean_transformed, 1e-300))
    else:
        slope = utility_inv_deriv(psi, mean_transformed)
    per_path_terminal = eta * (transformed @ (om * slope))

    harvest_term = float(benefits.mean())
    if n > 1:
        harvest_se = float(benefits.std(ddof=1) / math.sqrt(n))
        terminal_se = float(per_path_terminal.std(ddof=1) / math.sqrt(n))
        j_se = float((benefits + per_path_terminal).std(ddof=1) / math.sqrt(n))
    else:
        harvest_se = terminal_se = j_se = 0.0

    return SimulationResult(
        j_estimate=harvest_term + terminal_term,
        j_se=j_se,
        harvest_term=harvest_term,
        harvest_se=harvest_se,
        terminal_term=terminal_term,
        terminal_se=terminal_se,
        extinction_fraction=float(np.mean(x_terminal <= 0.0)),
        terminal_population={
            "mean": float(x_terminal.mean()),
            "std": float(x_terminal.std(ddof=1)) if n > 1 else 0.0,
            "min": float(x_terminal.min()),
            "max": float(x_terminal.max()),
        },
        n_paths=n,
        seed=config.seed,
    )


def estimate_terminal_utility(
    config: SimulationConfig, t: float, x: float, w: float
) -> tuple[float, float]:
    """Path estimate of the expected transformed terminal biomass from (t, x).

    This is the quantity the solver's auxiliary field tracks at weight w, so
    the pair (estimate, standard error) cross-validates the sweep at any
    saved lattice node.  (t, x) must sit on the lattice.
    """
    problem, lattice = config.problem, config.lattice
    step = (t - problem.t0) / lattice.dt
    node = x / lattice.dx
    if abs(step - round(step)) > 1e-9 or not (0 <= round(step) <= lattice.n_t):
        raise ValueError(f"t={t} is not a lattice time")
    if abs(node - round(node)) > 1e-9 or not (0 <= round(node) <= lattice.n_x):
        raise ValueError(f"x={x} is not a lattice node")
    _, x_terminal, _ = run_paths(
        problem,
        lattice,
        config.policy,
        t,
        x,
        config.n_paths,
        config.seed,
        config.dt_sim,
    )
    values = utility(problem.psi, w * x_terminal)
    estimate = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(config.n_paths)) if config.n_paths > 1 else 0.0
    return estimate, se
