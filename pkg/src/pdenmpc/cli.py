"""Batch front-end: JSON config in, CSV artifacts and a summary out.

Subcommands:
  run-bench  closed-loop simulation with the configured controller
  compare    both controllers on identical configs, paired timings
  analyze    convergence factors, nilpotency checks, horizon sweeps
  check      invariant/oracle battery on the configured setup

Exit codes: 0 success, 1 configuration error, 2 solver divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from .bench import (
    BenchConfig,
    HeatBench,
    HeatPlateParams,
    ReferenceSpec,
    run_closed_loop,
)
from .errors import ConfigError, PdenmpcError
from .lower import StageSolveConfig, solve_stage
from .ocp import default_initial_trajectory, evaluate_iterate, stage_jacobian
from .newton import newton_solve, newton_step, solve_block_tridiagonal, assemble_kkt
from .pde import finite_difference_check
from .spectral import (
    DENSE_ORACLE_LIMIT,
    IterationMatrixOperator,
    convergence_factor,
    verify_lemma_nilpotent,
)
from .upper import UpperMethod, fraction_to_boundary, solve as upper_solve
from .ocp import shift_trajectory

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

_SCHEMA = {
    "plant": {
        "grid": {"points_per_axis": int, "dim": int, "side": float},
        "actuators": {"axis_indices": list},
        "params": {
            "rho": float, "cp": float, "tz": float, "k": float, "hc": float,
            "t_ambient": float, "emissivity": float, "stefan_boltzmann": float,
            "input_span": float,
        },
    },
    "nmpc": {
        "T": float, "N": int, "tau": float, "gamma": float, "reg_mode": str,
        "tol": float, "max_iters": int, "method": str, "omega": float,
        "q_weight": float, "r_weight": float,
        "lower": {"schur_iters": int, "inner_jacobi_iters": int, "mode": str},
    },
    "sim": {
        "duration_s": float, "sampling_period_s": float, "plant_substep_s": float,
        "timing_repeats": int, "warm_start": bool,
        "references": {
            "slope_min": float, "slope_max": float, "vshape_edge": float,
            "vshape_mid": float, "switch_time_s": float, "fade_s": float,
        },
    },
    "analysis": {
        "convergence_factor": bool, "lemma_checks": bool, "horizon_sweep": list,
    },
    "output": {"directory": str, "field_snapshots": bool},
    "seed": int,
}

_METHODS = ("jacobi", "fgs", "bgs", "sor", "sgs", "newton")


def _validate_section(raw, schema, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {path or '<root>'} must be an object")
    for key, val in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
        want = schema[key]
        if isinstance(want, dict):
            _validate_section(val, want, path + key + ".")
        elif want is float:
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"{path + key} must be a number")
        elif want is int:
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(f"{path + key} must be an integer")
        elif want is bool:
            if not isinstance(val, bool):
                raise ConfigError(f"{path + key} must be true/false")
        elif want is str:
            if not isinstance(val, str):
                raise ConfigError(f"{path + key} must be a string")
        elif want is list:
            if not isinstance(val, list):
                raise ConfigError(f"{path + key} must be a list")


def load_config(path: str):
    """Parse, schema-validate, and materialize a run configuration."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    _validate_section(raw, _SCHEMA, "")

    plant = raw.get("plant", {})
    grid = plant.get("grid", {})
    acts = plant.get("actuators", {})
    pp = plant.get("params", {})
    nmpc = raw.get("nmpc", {})
    lower = nmpc.get("lower", {})
    sim = raw.get("sim", {})
    refs = sim.get("references", {})
    analysis = raw.get("analysis", {})
    output = raw.get("output", {})

    if grid.get("dim", 2) != 2:
        raise ConfigError("only dim = 2 plate benchmarks are configurable")

    try:
        params = HeatPlateParams(
            rho=pp.get("rho", 8960.0), cp=pp.get("cp", 386.0),
            tz=pp.get("tz", 0.01), k=pp.get("k", 400.0), hc=pp.get("hc", 1.0),
            t_ambient=pp.get("t_ambient", 300.0),
            emissivity=pp.get("emissivity", 0.5),
            stefan_boltzmann=pp.get("stefan_boltzmann", 5.67e-8),
            input_span=pp.get("input_span", 400.0),
        )
        method = nmpc.get("method", "sgs").lower()
        if method not in _METHODS:
            raise ConfigError(f"nmpc.method must be one of {_METHODS}")
        mode = lower.get("mode", "iterative")
        if mode not in ("iterative", "exact"):
            raise ConfigError("nmpc.lower.mode must be 'iterative' or 'exact'")
        reg_mode = nmpc.get("reg_mode", "current")
        if reg_mode not in ("current", "fixed"):
            raise ConfigError("nmpc.reg_mode must be 'current' or 'fixed'")
        axes = acts.get("axis_indices")
        config = BenchConfig(
            grid_points=grid.get("points_per_axis", 13),
            side=grid.get("side", 1.0),
            actuator_axes=tuple(axes) if axes is not None else None,
            horizon=nmpc.get("T", 100.0),
            n_stages=nmpc.get("N", 20),
            tau=nmpc.get("tau", 100.0),
            gamma=nmpc.get("gamma", 0.5),
            reg_mode=reg_mode,
            tol=nmpc.get("tol", 1.0),
            max_iters=nmpc.get("max_iters", 400),
            method="sgs" if method == "newton" else method,
            omega=nmpc.get("omega", 1.0),
            lower=StageSolveConfig(
                inner_jacobi_iters=lower.get("inner_jacobi_iters", 2),
                schur_iters=lower.get("schur_iters", 2),
                mode=mode,
            ),
            q_weight=nmpc.get("q_weight"),
            r_weight=nmpc.get("r_weight"),
            sampling_period=sim.get("sampling_period_s", 5.0),
            duration=sim.get("duration_s", 1000.0),
            plant_substep=sim.get("plant_substep_s", 1.0),
            references=ReferenceSpec(
                slope_min=refs.get("slope_min", 350.0),
                slope_max=refs.get("slope_max", 550.0),
                vshape_edge=refs.get("vshape_edge", 550.0),
                vshape_mid=refs.get("vshape_mid", 350.0),
                switch_time=refs.get("switch_time_s", 500.0),
                fade_time=refs.get("fade_s", 50.0),
            ),
            warm_start=sim.get("warm_start", True),
            timing_repeats=sim.get("timing_repeats", 1),
            seed=raw.get("seed", 0),
        )
    except (PdenmpcError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return {
        "params": params,
        "config": config,
        "controller": "newton" if method == "newton" else "double_layer",
        "analysis": {
            "convergence_factor": analysis.get("convergence_factor", False),
            "lemma_checks": analysis.get("lemma_checks", False),
            "horizon_sweep": [float(v) for v in analysis.get("horizon_sweep", [])],
        },
        "output_dir": output.get("directory", "out"),
        "field_snapshots": output.get("field_snapshots", False),
        "timing_repeats_explicit": "timing_repeats" in sim,
        "seed": raw.get("seed", 0),
    }


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, str):
                    cells.append(v)
                elif isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                elif v is None:
                    cells.append("")
                else:
                    cells.append(FLOAT_FMT % float(v))
            fh.write(",".join(cells) + "\n")


def _log_rows(log):
    rows = []
    n_u = log.u_applied.shape[1]
    for k in range(log.n_steps):
        rows.append(
            [k, log.t[k], int(log.iters[k]), log.solve_ms[k], log.mean_iter_ms[k],
             log.kkt_inf_norm[k], log.alpha_min[k]]
            + list(log.u_applied[k]) + [log.tracking_rms[k]]
        )
    header = (["step", "t_s", "iters", "solve_time_ms", "mean_iter_time_ms",
               "kkt_inf_norm", "alpha_min"]
              + [f"u_{j + 1}" for j in range(n_u)] + ["tracking_rms_K"])
    return header, rows


def _write_log(outdir, log, bench, field_snapshots):
    header, rows = _log_rows(log)
    _write_csv(os.path.join(outdir, "closed_loop.csv"), header, rows)
    if field_snapshots:
        n_x = log.states.shape[1]
        _write_csv(
            os.path.join(outdir, "states_wide.csv"),
            ["t_s"] + [f"x_{j + 1}" for j in range(n_x)],
            [[log.t[k]] + list(log.states[k]) for k in range(log.n_steps)],
        )
        snapdir = os.path.join(outdir, "snapshots")
        os.makedirs(snapdir, exist_ok=True)
        p = bench.grid.points_per_axis
        for k in range(log.n_steps):
            field = np.empty(bench.grid.n_grid)
            field[bench.grid.state_to_grid] = log.states[k]
            field[bench.grid.input_to_grid] = log.u_applied[k]
            _write_csv(
                os.path.join(snapdir, f"field_step_{k:04d}.csv"),
                [f"c_{j + 1}" for j in range(p)],
                field.reshape(p, p).tolist(),
            )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_run_bench(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    bench = HeatBench(cfg["params"], cfg["config"])
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    log = run_closed_loop(bench, controller=cfg["controller"])
    _write_log(outdir, log, bench, cfg["field_snapshots"])
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(log.summary(), fh, indent=2)
        fh.write("\n")
    if log.diverged:
        print("solver diverged; log truncated", file=sys.stderr)
        return 2
    return 0


def cmd_compare(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    bench = HeatBench(cfg["params"], cfg["config"])
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    repeats = (cfg["config"].timing_repeats
               if cfg["timing_repeats_explicit"] else 10)
    log_dl = run_closed_loop(bench, controller="double_layer",
                             timing_repeats=repeats)
    log_nw = run_closed_loop(bench, controller="newton",
                             timing_repeats=repeats)
    n = min(log_dl.n_steps, log_nw.n_steps)
    rows = []
    for k in range(n):
        dl_per = log_dl.solve_ms[k] / max(log_dl.iters[k], 1)
        nw_per = log_nw.solve_ms[k] / max(log_nw.iters[k], 1)
        rows.append([
            k, log_dl.t[k], int(log_nw.iters[k]), int(log_dl.iters[k]),
            log_nw.solve_ms[k], log_dl.solve_ms[k], nw_per, dl_per,
            nw_per / dl_per if dl_per > 0 else float("nan"),
            float(np.max(np.abs(log_nw.u_applied[k] - log_dl.u_applied[k]))),
        ])
    _write_csv(
        os.path.join(outdir, "compare.csv"),
        ["step", "t_s", "newton_iters", "dl_iters", "newton_solve_ms",
         "dl_solve_ms", "newton_ms_per_iter", "dl_ms_per_iter",
         "per_iter_ratio", "u_diff_inf"],
        rows,
    )
    dl_per_all = log_dl.solve_ms[:n].sum() / max(log_dl.iters[:n].sum(), 1)
    nw_per_all = log_nw.solve_ms[:n].sum() / max(log_nw.iters[:n].sum(), 1)
    summary = {
        "steps_compared": int(n),
        "newton_mean_ms_per_iter": float(nw_per_all),
        "double_layer_mean_ms_per_iter": float(dl_per_all),
        "mean_per_iter_ratio": float(nw_per_all / dl_per_all),
        "timing_repeats": int(repeats),
    }
    with open(os.path.join(outdir, "compare_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if log_dl.diverged or log_nw.diverged:
        print("solver diverged during comparison", file=sys.stderr)
        return 2
    return 0


def _factor_rows(bench, cfg, rng):
    """Per-instant convergence factors mirroring the two-horizon two-gamma grid."""
    config = cfg["config"]
    method = config.method
    gammas = sorted({0.0, config.gamma})
    horizons = sorted({20.0, config.horizon})
    log = run_closed_loop(bench, controller=cfg["controller"],
                          capture_solutions=True)
    rows = []
    aux_prev = {}
    for k in range(log.n_steps):
        t = log.t[k]
        x = log.states[k]
        for T in horizons:
            if T == config.horizon:
                sol = log.solutions[k]
                prob = bench.make_problem(x, t)
            else:
                prob = bench.make_problem(x, t, horizon=T)
                traj0 = (shift_trajectory(aux_prev[T]) if T in aux_prev
                         else default_initial_trajectory(prob))
                sol, rep = upper_solve(prob, UpperMethod(config.method, config.omega),
                                       traj0, tol=config.tol,
                                       max_iters=config.max_iters, cfg=config.lower)
                if rep.termination != "converged":
                    aux_prev.pop(T, None)
                    continue
                aux_prev[T] = sol
            for gamma in gammas:
                op = IterationMatrixOperator(prob, sol, kind=method,
                                             omega=config.omega, gamma=gamma)
                res = convergence_factor(op, iters=50, seeds=3, rng=rng)
                rows.append([t, method, gamma, T, res.estimate, res.oracle])
    return rows, log


def cmd_analyze(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    analysis = cfg["analysis"]
    if not (analysis["convergence_factor"] or analysis["lemma_checks"]
            or analysis["horizon_sweep"]):
        return 0
    bench = HeatBench(cfg["params"], cfg["config"])
    config = cfg["config"]
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    header = ["sim_time_s", "method", "gamma", "horizon_T", "rho_estimate",
              "oracle_rho"]

    if analysis["convergence_factor"]:
        rows, _ = _factor_rows(bench, cfg, rng)
        _write_csv(os.path.join(outdir, "factors.csv"), header, rows)

    if analysis["horizon_sweep"]:
        rows = []
        for T in analysis["horizon_sweep"]:
            prob = bench.make_problem(bench.x0_ambient, 0.0, horizon=T)
            sol, rep = newton_solve(prob, default_initial_trajectory(prob),
                                    tol=min(config.tol, 1e-3), max_iters=600)
            if rep.termination != "converged":
                continue
            for gamma in sorted({0.0, config.gamma}):
                for kind in ("jacobi", config.method):
                    op = IterationMatrixOperator(prob, sol, kind=kind,
                                                 omega=config.omega, gamma=gamma)
                    res = convergence_factor(op, iters=60, seeds=4, rng=rng)
                    rows.append([0.0, kind, gamma, T, res.estimate, res.oracle])
        _write_csv(os.path.join(outdir, "horizon_sweep.csv"), header, rows)

    if analysis["lemma_checks"]:
        prob = bench.make_problem(bench.x0_ambient, 0.0)
        sol, rep = newton_solve(prob, default_initial_trajectory(prob),
                                tol=config.tol, max_iters=600)
        rows = []
        if rep.termination == "converged":
            for label, apps, decoupled in (
                ("stage_count", prob.N, True),
                ("nilpotency_index", 2 * prob.N - 1, True),
                ("full_split_control", prob.N, False),
            ):
                amp = verify_lemma_nilpotent(prob, sol, applications=apps,
                                             rng=rng, use_decoupled_split=decoupled)
                rows.append([label, apps, amp, int(decoupled)])
        _write_csv(os.path.join(outdir, "lemma_checks.csv"),
                   ["case", "applications", "amplification", "decoupled_split"],
                   rows)
    return 0


def cmd_check(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    bench = HeatBench(cfg["params"], cfg["config"])
    config = cfg["config"]
    rng = np.random.default_rng(cfg["seed"])
    sys_ = bench.sys
    results = []

    def record(name, ok, detail=""):
        results.append((name, bool(ok)))
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))

    # derivative operators vs finite differences
    worst = 0.0
    for _ in range(5):
        x = bench.x0_ambient + 40.0 * rng.random(sys_.n_x)
        u = bench.params.u_min + (bench.params.u_max - bench.params.u_min) \
            * rng.random(sys_.n_u)
        lam = rng.standard_normal(sys_.n_x)
        rep = finite_difference_check(sys_, u, x, lam, rng=rng)
        worst = max(worst, max(v for k, v in rep.items() if k != "ok"))
    record("derivative operators vs central differences <= 1e-5", worst <= 1e-5,
           f"max rel err {worst:.2e}")

    # adjointness
    x = bench.x0_ambient + 25.0 * rng.random(sys_.n_x)
    u = 0.5 * (bench.params.u_min + bench.params.u_max) * np.ones(sys_.n_u)
    worst = 0.0
    for _ in range(20):
        v = rng.standard_normal(sys_.n_x)
        w = rng.standard_normal(sys_.n_x)
        lhs = float(w @ sys_.apply_dfdx(u, x, v))
        rhs = float(sys_.apply_dfdx_T(u, x, w) @ v)
        worst = max(worst, abs(lhs - rhs) / (1 + abs(rhs)))
    record("df/dx adjoint identity <= 1e-12", worst <= 1e-12, f"{worst:.2e}")

    # stage solve, exact mode residual
    prob = bench.make_problem(bench.x0_ambient, 0.0)
    traj = default_initial_trajectory(prob)
    blk = stage_jacobian(prob, 0, traj.U[0], traj.X[0], traj.LAM[0])
    r = rng.standard_normal(prob.stage_dim)
    ds = solve_stage(blk, r, StageSolveConfig(mode="exact"))
    res = np.max(np.abs(blk.dense() @ ds - r)) / (1 + np.max(np.abs(r)))
    record("exact stage solve residual <= 1e-10", res <= 1e-10, f"{res:.2e}")

    # fraction-to-the-boundary closed form
    prob.u_reg_ref[:] = traj.U
    itd = evaluate_iterate(prob, traj)
    dS = rng.standard_normal((prob.N, prob.stage_dim))
    alpha = fraction_to_boundary(prob, traj, dS)
    g = np.hstack([traj.U - bench.constraints.lb, bench.constraints.ub - traj.U])
    d = np.hstack([dS[:, prob.n_x:prob.n_x + prob.n_u],
                   -dS[:, prob.n_x:prob.n_x + prob.n_u]])
    pos = d > 0
    ref = min(1.0, float(np.min(0.995 * g[pos] / d[pos]))) if np.any(pos) else 1.0
    record("fraction-to-boundary matches closed-form ratio to 1e-12",
           abs(alpha - ref) <= 1e-12, f"|diff| {abs(alpha - ref):.2e}")

    # Newton direction multiply-back
    kkt = assemble_kkt(prob, traj, itd=itd)
    dS2 = solve_block_tridiagonal(kkt, itd.resid.as_matrix())
    err = np.max(np.abs(kkt.matvec(dS2) - itd.resid.as_matrix()))
    rel = err / (1 + itd.resid.inf_norm())
    record("Newton direction multiply-back <= 1e-9", rel <= 1e-9, f"{rel:.2e}")

    ok = all(r for _, r in results)
    print(f"{sum(r for _, r in results)}/{len(results)} checks passed")
    return 0 if ok else 1


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pdenmpc",
        description="PDE-constrained NMPC splitting-solver benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run-bench", "compare", "analyze", "check"):
        p = sub.add_parser(name)
        p.add_argument("config", help="path to JSON run configuration")
    args = parser.parse_args(argv)
    dispatch = {
        "run-bench": cmd_run_bench,
        "compare": cmd_compare,
        "analyze": cmd_analyze,
        "check": cmd_check,
    }
    return dispatch[args.command](args.config)


if __name__ == "__main__":
    sys.exit(main())
