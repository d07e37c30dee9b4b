"""Command-line front end: fit, solve, simulate, report.

All run artifacts are plain CSV/JSON so they can be plotted or diffed with
standard tools.  Exit codes: 0 success, 1 numerical failure (divergence or
violated solution bounds), 2 input error (bad files, bad configuration,
violated stability bound).  Commands are idempotent for identical inputs
and seeds; manifests record a content hash of the configuration so runs can
be traced back to their inputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .calibration import fit_growth, load_dataset, save_fitted_model, spectrum_from_json_dict
from .control import (
    BoundViolationError,
    ControlProblem,
    Lattice,
    SolverDivergenceError,
    SolverOutput,
    solve,
    stability_limit,
)
from .growth import CurveVariant, GrowthCurve, logistic_time_varying
from .mc import SimulationConfig, run_paths, simulate_paths
from .spectrum import SizeSpectrum, mean_weight, std_weight

DEFAULT_N_W = 64
DEFAULT_STRIDE = 100


# ---------------------------------------------------------------------------
# configuration handling


@dataclasses.dataclass
class ExperimentConfig:
    spectrum: SizeSpectrum
    problem: ControlProblem
    dt: float
    n_w: int
    sweep_eta: list[float] | None
    sweep_psi: list[float] | None
    mc: dict | None
    output_dir: str


def _growth_to_dict(curve: GrowthCurve) -> dict:
    return {
        "variant": curve.variant.value,
        "f0": curve.f0,
        "r_per_day": curve.r,
        "r0_per_day": curve.r0,
        "r1_per_day2": curve.r1,
    }


def _growth_from_dict(doc: dict) -> GrowthCurve:
    variant = CurveVariant(doc["variant"])
    if variant is CurveVariant.LOGISTIC_TV:
        return logistic_time_varying(doc["f0"], doc["r0_per_day"], doc["r1_per_day2"])
    return GrowthCurve(variant, doc["f0"], r=doc["r_per_day"])


def problem_to_dict(problem: ControlProblem) -> dict:
    return {
        "growth": _growth_to_dict(problem.spectrum.curve),
        "alpha": problem.spectrum.alpha,
        "beta_g": problem.spectrum.beta,
        "d_per_day": problem.d,
        "k_per_day": problem.k,
        "gamma": problem.gamma,
        "kappa": problem.kappa,
        "eta": problem.eta,
        "psi": problem.psi,
        "u_bar_per_day": problem.u_bar,
        "h_bar_individuals": problem.h_bar,
        "x_bar_individuals": problem.x_bar,
        "t0_day": problem.t0,
        "t_end_day": problem.t_end,
    }


def problem_from_dict(doc: dict) -> ControlProblem:
    spectrum = SizeSpectrum(doc["alpha"], doc["beta_g"], _growth_from_dict(doc["growth"]))
    return ControlProblem(
        spectrum=spectrum,
        d=doc["d_per_day"],
        k=doc["k_per_day"],
        gamma=doc["gamma"],
        kappa=doc["kappa"],
        eta=doc["eta"],
        psi=doc["psi"],
        u_bar=doc["u_bar_per_day"],
        h_bar=doc["h_bar_individuals"],
        x_bar=doc["x_bar_individuals"],
        t0=doc["t0_day"],
        t_end=doc["t_end_day"],
    )


def lattice_to_dict(lattice: Lattice) -> dict:
    return {
        "dt_day": lattice.dt,
        "dx_individuals": lattice.dx,
        "n_t": lattice.n_t,
        "n_x": lattice.n_x,
        "n_w": lattice.n_w,
    }


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    growth_doc = doc["growth"]
    if "fitted_json" in growth_doc:
        fitted_path = growth_doc["fitted_json"]
        if not os.path.isabs(fitted_path):
            fitted_path = os.path.join(os.path.dirname(os.path.abspath(path)), fitted_path)
        spectrum = spectrum_from_json_dict(json.load(open(fitted_path, encoding="utf-8")))
    else:
        curve = _growth_from_dict(growth_doc)
        spectrum = SizeSpectrum(growth_doc["alpha"], growth_doc["beta_g"], curve)
    control_doc = doc["control"]
    problem = ControlProblem(
        spectrum=spectrum,
        d=control_doc["d_per_day"],
        k=control_doc["k_per_day"],
        gamma=control_doc["gamma"],
        kappa=control_doc["kappa"],
        eta=control_doc["eta"],
        psi=control_doc["psi"],
        u_bar=control_doc["u_bar_per_day"],
        h_bar=control_doc["h_bar_individuals"],
        x_bar=control_doc["x_bar_individuals"],
        t0=control_doc["t0_day"],
        t_end=control_doc["t_end_day"],
    )
    lattice_doc = doc["lattice"]
    sweep = doc.get("sweep") or {}
    sweep_eta = sweep.get("eta")
    sweep_psi = sweep.get("psi")
    for name, values in (("eta", sweep_eta), ("psi", sweep_psi)):
        if values is not None and len(values) == 0:
            raise ValueError(f"sweep list for {name} must be non-empty when present")
    return ExperimentConfig(
        spectrum=spectrum,
        problem=problem,
        dt=lattice_doc["dt_day"],
        n_w=int(lattice_doc.get("n_w", DEFAULT_N_W)),
        sweep_eta=list(sweep_eta) if sweep_eta is not None else None,
        sweep_psi=list(sweep_psi) if sweep_psi is not None else None,
        mc=doc.get("mc"),
        output_dir=doc["output_dir"],
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    out = {
        "growth": {
            **_growth_to_dict(config.spectrum.curve),
            "alpha": config.spectrum.alpha,
            "beta_g": config.spectrum.beta,
        },
        "control": {
            key: value
            for key, value in problem_to_dict(config.problem).items()
            if key not in ("growth", "alpha", "beta_g")
        },
        "lattice": {"dt_day": config.dt, "n_w": config.n_w},
        "output_dir": config.output_dir,
    }
    if config.sweep_eta is not None or config.sweep_psi is not None:
        out["sweep"] = {}
        if config.sweep_eta is not None:
            out["sweep"]["eta"] = config.sweep_eta
        if config.sweep_psi is not None:
            out["sweep"]["psi"] = config.sweep_psi
    if config.mc is not None:
        out["mc"] = config.mc
    return out


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        digest.update(handle.read())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# artifact writers / readers


def _write_matrix_csv(path: str, times: np.ndarray, x: np.ndarray, rows: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t_day"] + [repr(float(v)) for v in x])
        for t, row in zip(times, rows):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _read_matrix_csv(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        x = np.array([float(v) for v in header[1:]])
        times = []
        rows = []
        for row in reader:
            times.append(float(row[0]))
            rows.append([float(v) for v in row[1:]])
    return np.array(times), x, np.array(rows)


def export_solution(output: SolverOutput, directory: str, stride: int, extra: dict | None = None) -> dict:
    """Write one run's grids plus manifest; returns the manifest dict."""
    os.makedirs(directory, exist_ok=True)
    lattice, problem = output.lattice, output.problem
    steps = sorted(set(range(0, lattice.n_t + 1, stride)) | {lattice.n_t})
    times = problem.t0 + np.array(steps) * lattice.dt
    x = lattice.x_grid()
    _write_matrix_csv(os.path.join(directory, "phi.csv"), times, x, output.value[steps])
    _write_matrix_csv(os.path.join(directory, "theta.csv"), times, x, output.intensity[steps])
    _write_matrix_csv(
        os.path.join(directory, "g_big.csv"), times, x, output.terminal_biomass[steps]
    )
    np.save(os.path.join(directory, "policy_theta.npy"), output.intensity)
    manifest = {
        "eta": problem.eta,
        "psi": problem.psi,
        "problem": problem_to_dict(problem),
        "lattice": lattice_to_dict(lattice),
        "stride": stride,
        "bound_report": output.bound_report,
        "files": {
            "phi": "phi.csv",
            "theta": "theta.csv",
            "g_big": "g_big.csv",
            "policy": "policy_theta.npy",
        },
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")
    return manifest


def load_run(directory: str) -> tuple[dict, ControlProblem, Lattice, np.ndarray]:
    """Read a solve run directory back: manifest, problem, lattice, policy."""
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ValueError(f"no manifest found in {directory}")
    with open(manifest_path, encoding="utf-8") as handle:
        manifest = json.load(handle)
    problem = problem_from_dict(manifest["problem"])
    lattice = Lattice.build(problem, manifest["lattice"]["dt_day"], manifest["lattice"]["n_w"])
    policy = np.load(os.path.join(directory, manifest["files"]["policy"]))
    return manifest, problem, lattice, policy


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.daily_csv, args.intensive_csv, args.intensive_day)
    model = fit_growth(dataset, CurveVariant(args.variant))
    save_fitted_model(model, args.out)
    curve_csv = args.curve_csv or os.path.splitext(args.out)[0] + "_curve.csv"
    spectrum = model.spectrum
    last_day = max(max(rec.day for rec in dataset.daily), dataset.intensive_day)
    days = np.arange(0.0, math.floor(last_day) + 1.0)
    with open(curve_csv, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day", "model_mean_g", "model_std_g"])
        for day in days:
            writer.writerow(
                [repr(float(day)), repr(mean_weight(spectrum, day)), repr(std_weight(spectrum, day))]
            )
    diag = model.diagnostics
    print(
        f"fitted {args.variant}: min_err={model.min_err:.6g} g^2, "
        f"alpha={spectrum.alpha:.6g}, beta={spectrum.beta:.6g} "
        f"({diag.restarts} starts, {diag.iterations} iterations, converged={diag.converged})"
    )
    print(f"wrote {args.out} and {curve_csv}")
    return 0


def _solve_cell(problem: ControlProblem, lattice: Lattice, directory: str, stride: int, extra: dict) -> None:
    output = solve(problem, lattice, g_stride=stride, check_bounds=True)
    export_solution(output, directory, stride, extra)


def cmd_solve(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    output_dir = args.out or config.output_dir
    problem = config.problem
    limit = stability_limit(problem)
    if config.dt >= limit:
        raise ValueError(
            f"dt_day={config.dt} violates the stability bound: need dt < {limit:.6g} day"
        )
    lattice = Lattice.build(problem, config.dt, config.n_w)
    etas = config.sweep_eta if config.sweep_eta is not None else [problem.eta]
    psis = config.sweep_psi if config.sweep_psi is not None else [problem.psi]
    sweeping = config.sweep_eta is not None or config.sweep_psi is not None
    input_hash = _sha256_file(args.config)

    jobs = []
    for eta in etas:
        for psi in psis:
            cell_problem = dataclasses.replace(problem, eta=eta, psi=psi)
            directory = (
                os.path.join(output_dir, f"eta_{eta:g}_psi_{psi:g}") if sweeping else output_dir
            )
            jobs.append((cell_problem, directory))

    extra = {"input_sha256": input_hash}
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            futures = [
                pool.submit(_solve_cell, prob, lattice, directory, args.stride, extra)
                for prob, directory in jobs
            ]
            for future in futures:
                future.result()
    else:
        for prob, directory in jobs:
            _solve_cell(prob, lattice, directory, args.stride, extra)
    for _, directory in jobs:
        print(f"solved -> {directory}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if config.mc is None:
        raise ValueError("config has no 'mc' section; simulate needs x0, n_paths and seed")
    if not os.path.isdir(args.policy_dir):
        raise ValueError(f"policy directory does not exist: {args.policy_dir}")
    manifest, problem, lattice, policy = load_run(args.policy_dir)
    mc_doc = config.mc
    seed = args.seed if args.seed is not None else int(mc_doc["seed"])
    sim_config = SimulationConfig(
        problem=problem,
        lattice=lattice,
        policy=policy,
        x0=mc_doc["x0_individuals"],
        n_paths=int(mc_doc["n_paths"]),
        seed=seed,
        dt_sim=mc_doc.get("dt_sim_day"),
    )
    result = simulate_paths(sim_config)
    doc = {
        "result": result.to_dict(),
        "input_sha256": _sha256_file(args.config),
        "policy_dir": args.policy_dir,
    }
    phi_path = os.path.join(args.policy_dir, manifest["files"]["phi"])
    if os.path.exists(phi_path):
        _, x_cols, rows = _read_matrix_csv(phi_path)
        node = int(round(sim_config.x0 / lattice.dx))
        phi_start = float(rows[0][node])
        doc["phi_comparison"] = {
            "x0_node": node,
            "phi_at_start": phi_start,
            "j_estimate": result.j_estimate,
            "j_minus_phi": result.j_estimate - phi_start,
            "j_se": result.j_se,
        }
    out_path = args.out or os.path.join(args.policy_dir, "simulation.json")
    with open(out_path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")
    if args.dump_paths:
        benefits, x_terminal, _ = run_paths(
            problem,
            lattice,
            policy,
            problem.t0,
            sim_config.x0,
            sim_config.n_paths,
            seed,
            sim_config.dt_sim,
        )
        dump_path = os.path.splitext(out_path)[0] + "_paths.csv"
        with open(dump_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["path", "harvested_biomass_g", "terminal_population"])
            for idx, (ben, xt) in enumerate(zip(benefits, x_terminal)):
                writer.writerow([idx, repr(float(ben)), repr(float(xt))])
        print(f"wrote per-path dump {dump_path}")
    print(
        f"J = {result.j_estimate:.6g} +/- {result.j_se:.3g} "
        f"(harvest {result.harvest_term:.6g}, terminal {result.terminal_term:.6g})"
    )
    print(f"wrote {out_path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    reference_lattice: dict | None = None
    rows_out: list[list] = []
    for directory in args.run_dirs:
        manifest_path = os.path.join(directory, "manifest.json")
        if not os.path.exists(manifest_path):
            raise ValueError(f"no manifest found in {directory}")
        with open(manifest_path, encoding="utf-8") as handle:
            manifest = json.load(handle)
        lattice_doc = manifest["lattice"]
        if reference_lattice is None:
            reference_lattice = lattice_doc
        elif lattice_doc != reference_lattice:
            raise ValueError(
                f"conflicting lattices: {directory} has {lattice_doc}, expected {reference_lattice}"
            )
        eta, psi = manifest["eta"], manifest["psi"]
        times, x, phi = _read_matrix_csv(os.path.join(directory, manifest["files"]["phi"]))
        _, _, theta = _read_matrix_csv(os.path.join(directory, manifest["files"]["theta"]))
        _, _, g_big = _read_matrix_csv(os.path.join(directory, manifest["files"]["g_big"]))
        for ti, t in enumerate(times):
            for xi, xv in enumerate(x):
                rows_out.append(
                    [eta, psi, t, xv, phi[ti, xi], theta[ti, xi], g_big[ti, xi]]
                )
    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["eta", "psi", "t", "x", "phi", "theta", "g_big"])
        for row in rows_out:
            writer.writerow([repr(float(v)) for v in row])
    print(f"wrote {args.out} ({len(rows_out)} rows from {len(args.run_dirs)} run dirs)")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fishery",
        description="Size-spectrum growth calibration and equilibrium harvesting control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="calibrate a growth curve and gamma spectrum from survey CSVs")
    p_fit.add_argument("daily_csv", help="CSV with columns day,mean_weight_g,sample_count")
    p_fit.add_argument("intensive_csv", help="CSV with a single weight_g column")
    p_fit.add_argument("--intensive-day", type=float, required=True,
                       help="season day of the intensive survey")
    p_fit.add_argument("--variant", default="logistic",
                       choices=[v.value for v in CurveVariant])
    p_fit.add_argument("--out", required=True, help="output JSON for the fitted model")
    p_fit.add_argument("--curve-csv", default=None,
                       help="output CSV of daily model mean/std (default: alongside --out)")
    p_fit.set_defaults(func=cmd_fit)

    p_solve = sub.add_parser("solve", help="solve the harvesting-control system for a config")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default=None, help="override the config's output_dir")
    p_solve.add_argument("--stride", type=int, default=DEFAULT_STRIDE,
                         help="time stride for CSV output rows")
    p_solve.add_argument("--threads", type=int, default=1,
                         help="parallel sweep cells (per-cell outputs never contend)")
    p_solve.set_defaults(func=cmd_solve)

    p_sim = sub.add_parser("simulate", help="Monte Carlo run against a stored policy")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--policy-dir", required=True, help="directory written by solve")
    p_sim.add_argument("--out", default=None, help="output JSON (default: policy dir)")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sim.add_argument("--dump-paths", action="store_true",
                       help="also write a per-path CSV next to the output JSON")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="aggregate run dirs into one tidy long-format CSV")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BoundViolationError, SolverDivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
