"""Thin-plate heat-transfer benchmark: plant, problem builder, closed loop.

A copper plate on the unit square, discretized on a uniform grid with a 4x4
set of interior grid points driven directly as temperature inputs. The field
equation per non-actuator point is

    rho Cp tz * w_t = k tz * lap(w) - 2 hc (w - Ta) - 2 eps sigma (w^4 - Ta^4)

with zero-flux boundaries. The controller tracks piecewise references (a
slope profile, then a V profile, linearly cross-faded) under box input
bounds, re-solving the horizon problem at a fixed sampling period and
applying the first input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np
import scipy.linalg as sla

from .coefficients import ConstantCoefficient, WCoefficient, ZERO
from .costs import BoxInputConstraints, QuadraticTrackingCost
from .errors import PdenmpcError
from .lower import StageSolveConfig
from .newton import newton_solve
from .ocp import (
    OcpProblem,
    Trajectory,
    default_initial_trajectory,
    dense_jacobians,
    shift_trajectory,
)
from .pde import DiscretizedSystem, PdeModel, SpatialGrid, discretize
from .upper import UpperMethod, solve as upper_solve

Array = np.ndarray


@dataclass
class HeatPlateParams:
    """Material and environment constants of the copper-plate process."""

    rho: float = 8960.0            # density [kg m^-3]
    cp: float = 386.0              # specific heat [J kg^-1 K^-1]
    tz: float = 0.01               # plate thickness [m]
    k: float = 400.0               # thermal conductivity [W m^-1 K^-1]
    hc: float = 1.0                # convection coefficient [W m^-2 K^-1]
    t_ambient: float = 300.0       # ambient temperature [K]
    emissivity: float = 0.5
    stefan_boltzmann: float = 5.67e-8   # [W m^-2 K^-4]
    input_span: float = 400.0      # actuator authority above ambient [K]

    def __post_init__(self):
        for name in ("rho", "cp", "tz", "k", "hc", "t_ambient",
                     "emissivity", "stefan_boltzmann", "input_span"):
            if getattr(self, name) <= 0:
                raise PdenmpcError(f"heat plate parameter {name} must be positive")

    @property
    def u_min(self) -> float:
        return self.t_ambient

    @property
    def u_max(self) -> float:
        return self.t_ambient + self.input_span

    @property
    def diffusivity(self) -> float:
        return self.k / (self.rho * self.cp)


def uniform_actuator_axes(points_per_axis: int, count: int = 4) -> tuple:
    """Near-uniform interior axis indices (the 13-point grid gives 1,4,8,11)."""
    span = points_per_axis - 1
    anchors = (1, 4, 8, 11) if count == 4 else tuple(
        round((k + 1) * 12 / (count + 1)) for k in range(count)
    )
    idx = tuple(int(np.floor(span * a / 12.0 + 0.5)) for a in anchors)
    if len(set(idx)) != len(idx):
        raise PdenmpcError("actuator axis indices collide; grid too coarse")
    return idx


@dataclass
class ReferenceSpec:
    slope_min: float = 350.0
    slope_max: float = 550.0
    vshape_edge: float = 550.0
    vshape_mid: float = 350.0
    switch_time: float = 500.0
    fade_time: float = 50.0


@dataclass
class BenchConfig:
    """Benchmark knobs; None cost weights mean cell-area (dp^2) weighting.

    The tracking weights are unit (state) and 0.1 (input) densities of the
    discretized field inner product: the stage cost approximates
    0.5 integral (w - w_ref)^2 dA + 0.05 sum (u - u_ref)^2 dA_cell. Literal
    identity weighting is available by setting q_weight/r_weight explicitly,
    but it pushes the symmetric sweep's convergence factor above one on the
    long-horizon benchmark.
    """

    grid_points: int = 13
    actuator_axes: Optional[tuple] = None     # None -> uniform 4x4
    side: float = 1.0
    horizon: float = 100.0
    n_stages: int = 20
    tau: float = 100.0
    gamma: float = 0.5
    reg_mode: str = "current"
    tol: float = 1.0
    max_iters: int = 400
    method: str = "sgs"
    omega: float = 1.0
    lower: StageSolveConfig = dc_field(default_factory=StageSolveConfig)
    q_weight: Optional[float] = None
    r_weight: Optional[float] = None
    sampling_period: float = 5.0
    duration: float = 1000.0
    plant_substep: float = 1.0
    references: ReferenceSpec = dc_field(default_factory=ReferenceSpec)
    warm_start: bool = True
    timing_repeats: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.actuator_axes is None:
            self.actuator_axes = uniform_actuator_axes(self.grid_points)
        if self.sampling_period <= 0 or self.duration < 0:
            raise PdenmpcError("sampling period must be positive, duration >= 0")
        if self.plant_substep <= 0:
            raise PdenmpcError("plant substep must be positive")
        if self.timing_repeats < 1:
            raise PdenmpcError("timing_repeats must be >= 1")
        cell_area = (self.side / (self.grid_points - 1)) ** 2
        if self.q_weight is None:
            self.q_weight = cell_area
        if self.r_weight is None:
            self.r_weight = 0.1 * cell_area


def make_heat_model(params: HeatPlateParams) -> PdeModel:
    ta = params.t_ambient
    hc = params.hc
    es = params.emissivity * params.stefan_boltzmann

    def d_val(w):
        return -2.0 * (hc * (w - ta) + es * (w ** 4 - ta ** 4))

    return PdeModel(
        dim=2,
        coeff_a=ZERO,
        coeff_b=ConstantCoefficient(params.rho * params.cp * params.tz),
        coeff_c=ConstantCoefficient(params.k * params.tz),
        coeff_d=WCoefficient(
            d_val,
            lambda w: -2.0 * (hc + 4.0 * es * w ** 3),
            lambda w: -24.0 * es * w ** 2,
        ),
        boundary_e=ZERO,
    )


def make_grid(config: BenchConfig) -> SpatialGrid:
    p = config.grid_points
    acts = tuple(
        i * p + j for i in config.actuator_axes for j in config.actuator_axes
    )
    return SpatialGrid(dim=2, points_per_axis=p, side=config.side,
                       actuator_indices=acts)


class HeatBench:
    """Discretized plant plus problem factory for one benchmark setup."""

    def __init__(self, params: HeatPlateParams, config: BenchConfig):
        self.params = params
        self.config = config
        self.grid = make_grid(config)
        self.sys: DiscretizedSystem = discretize(make_heat_model(params), self.grid)
        lb = np.full(self.sys.n_u, params.u_min)
        ub = np.full(self.sys.n_u, params.u_max)
        self.constraints = BoxInputConstraints(lb, ub)

    @property
    def x0_ambient(self) -> Array:
        return np.full(self.sys.n_x, self.params.t_ambient)

    def reference_field(self, t: float, kind: Optional[str] = None) -> Array:
        """(P, P) reference; columns follow the horizontal coordinate."""
        return reference_field(self.config, t, kind=kind)

    def reference_vectors(self, t: float):
        """Reference split into state and input positions."""
        f = self.reference_field(t).ravel()
        return f[self.grid.state_to_grid], f[self.grid.input_to_grid]

    def make_problem(self, x0: Array, t: float,
                     horizon: Optional[float] = None,
                     n_stages: Optional[int] = None,
                     gamma: Optional[float] = None) -> OcpProblem:
        cfg = self.config
        x_ref, u_ref = self.reference_vectors(t)
        cost = QuadraticTrackingCost(
            np.full(self.sys.n_x, cfg.q_weight),
            np.full(self.sys.n_u, cfg.r_weight),
            x_ref, u_ref,
        )
        return OcpProblem(
            sys=self.sys,
            N=cfg.n_stages if n_stages is None else n_stages,
            T=cfg.horizon if horizon is None else horizon,
            cost=cost,
            constraints=self.constraints,
            tau=cfg.tau,
            gamma=cfg.gamma if gamma is None else gamma,
            x0=np.asarray(x0, dtype=float),
            reg_mode=cfg.reg_mode,
        )

    # plant ------------------------------------------------------------------

    def plant_step(self, u: Array, x: Array, dt: float) -> Array:
        """Advance the plant by dt with implicit-Euler substeps (<= substep)."""
        n_sub = max(1, int(np.ceil(dt / self.config.plant_substep - 1e-12)))
        delta = dt / n_sub
        z = np.asarray(x, dtype=float).copy()
        for _ in range(n_sub):
            z = self._implicit_euler(u, z, delta)
        return z

    def _implicit_euler(self, u, x, delta, tol: float = 1e-11, max_newton: int = 25):
        z = x.copy()
        eye = np.eye(self.sys.n_x)
        for _ in range(max_newton):
            res = z - x - delta * self.sys.eval_f(u, z)
            if np.max(np.abs(res)) < tol * (1.0 + np.max(np.abs(x))):
                break
            J, _ = dense_jacobians(self.sys, u, z)
            z = z - sla.solve(eye - delta * J, res)
        return z


def reference_field(config: BenchConfig, t: float, kind: Optional[str] = None) -> Array:
    p = config.grid_points
    r = config.references
    xfrac = np.linspace(0.0, 1.0, p)
    slope_row = r.slope_min + (r.slope_max - r.slope_min) * xfrac
    vshape_row = r.vshape_mid + (r.vshape_edge - r.vshape_mid) * np.abs(2 * xfrac - 1)
    slope = np.tile(slope_row, (p, 1))
    vshape = np.tile(vshape_row, (p, 1))
    if kind == "slope":
        return slope
    if kind == "vshape":
        return vshape
    if kind is not None:
        raise PdenmpcError(f"unknown reference kind {kind!r}")
    if t <= r.switch_time:
        return slope
    if t > r.switch_time + r.fade_time:
        return vshape
    theta = (t - r.switch_time) / r.fade_time
    return (1.0 - theta) * slope + theta * vshape


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

@dataclass
class ClosedLoopLog:
    t: Array
    iters: Array
    solve_ms: Array
    mean_iter_ms: Array
    kkt_inf_norm: Array
    alpha_min: Array
    u_applied: Array            # (n, n_u)
    tracking_rms: Array
    states: Array               # (n+1, n_x) plant states, states[0] = x0
    diverged: bool = False
    n_steps: int = 0
    feasibility_margins: List[float] = dc_field(default_factory=list)
    solutions: Optional[List[Trajectory]] = None
    reference_times: Optional[Array] = None

    def summary(self) -> dict:
        n = self.n_steps
        return {
            "total_steps": int(n),
            "mean_iters": float(np.mean(self.iters[:n])) if n else 0.0,
            "mean_solve_ms": float(np.mean(self.solve_ms[:n])) if n else 0.0,
            "max_kkt_residual": float(np.max(self.kkt_inf_norm[:n])) if n else 0.0,
            "diverged_steps": int(self.diverged),
        }


def run_closed_loop(bench: HeatBench, controller: str = "double_layer",
                    capture_solutions: bool = False,
                    duration: Optional[float] = None,
                    tol: Optional[float] = None,
                    timing_repeats: Optional[int] = None,
                    threads: Optional[int] = None) -> ClosedLoopLog:
    """Receding-horizon simulation; solves, applies u_1, integrates the plant.

    controller is "double_layer" (the configured splitting) or "newton".
    Solve wall times take the minimum over timing_repeats identical re-solves
    from the same warm start.
    """
    cfg = bench.config
    duration = cfg.duration if duration is None else duration
    tol = cfg.tol if tol is None else tol
    repeats = cfg.timing_repeats if timing_repeats is None else timing_repeats
    n_steps = int(round(duration / cfg.sampling_period))
    n_u, n_x = bench.sys.n_u, bench.sys.n_x

    method = UpperMethod(cfg.method, cfg.omega)
    log = ClosedLoopLog(
        t=np.zeros(n_steps), iters=np.zeros(n_steps, dtype=int),
        solve_ms=np.zeros(n_steps), mean_iter_ms=np.zeros(n_steps),
        kkt_inf_norm=np.zeros(n_steps), alpha_min=np.ones(n_steps),
        u_applied=np.zeros((n_steps, n_u)), tracking_rms=np.zeros(n_steps),
        states=np.zeros((n_steps + 1, n_x)),
        solutions=[] if capture_solutions else None,
    )

    x = bench.x0_ambient.copy()
    log.states[0] = x
    prev_solution: Optional[Trajectory] = None

    for step_i in range(n_steps):
        t = step_i * cfg.sampling_period
        prob = bench.make_problem(x, t)
        if prev_solution is not None and cfg.warm_start:
            traj0 = shift_trajectory(prev_solution)
        else:
            traj0 = default_initial_trajectory(prob)

        def run_once():
            if controller == "newton":
                return newton_solve(prob, traj0, tol=tol, max_iters=cfg.max_iters,
                                    track_feasibility=True)
            return upper_solve(prob, method, traj0, tol=tol,
                               max_iters=cfg.max_iters, cfg=cfg.lower,
                               threads=threads, track_feasibility=True)

        best = None
        sol = rep = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            sol, rep = run_once()
            elapsed = time.perf_counter() - t0
            best = elapsed if best is None else min(best, elapsed)

        xr, _ = bench.reference_vectors(t)
        log.t[step_i] = t
        log.iters[step_i] = rep.iterations
        log.solve_ms[step_i] = 1e3 * best
        log.mean_iter_ms[step_i] = (
            1e3 * float(np.mean(rep.iter_times)) if rep.iter_times else 0.0
        )
        log.kkt_inf_norm[step_i] = rep.final_residual
        log.alpha_min[step_i] = min(rep.step_sizes) if rep.step_sizes else 1.0
        log.tracking_rms[step_i] = float(
            np.sqrt(np.mean((x - xr) ** 2))
        )
        log.feasibility_margins.append(
            min(rep.feasibility_margins) if rep.feasibility_margins else float("inf")
        )

        if rep.termination != "converged":
            log.diverged = True
            log.n_steps = step_i
            return log

        u1 = sol.U[0].copy()
        log.u_applied[step_i] = u1
        if log.solutions is not None:
            log.solutions.append(sol.copy())
        x = bench.plant_step(u1, x, cfg.sampling_period)
        log.states[step_i + 1] = x
        prev_solution = sol
        log.n_steps = step_i + 1

    return log
