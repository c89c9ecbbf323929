"""Continuation driver: drive the smoothing/regularization pair to zero.

Each outer stage solves the coupled optimality system by the globalized
inexact Newton method down to a stage tolerance tied to the current
regularization weight, then multiplies both smoothing parameters by an
adaptively chosen factor sigma < 1.  The run stops when two consecutive
scaled solution increments are small relative to the current solution, or
optionally hands the iterate off to a uniformly refined grid when the
regularization weight crosses a configured threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .coupled_newton import (
    CoupledSystem,
    NewtonConfig,
    NewtonStepError,
    StateAdjointPair,
    StepRecord,
    newton_step,
)
from .diagnostics import compute_errors, compute_tau, pair_h1_norm, smoothed_objective
from .fem import FULL, INTERIOR, FeFunction, SmoothingParams, assemble_load
from .implicit_control import ControlSolveError, control_inner_tolerance
from .mesh import TriMesh, interpolate_to, refine_uniform
from .problems import ProblemSpec


class PathError(RuntimeError):
    """Continuation failed; carries the trace accumulated so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class PathConfig:
    gamma0: Optional[float] = None  # default: problem-specific value
    delta0: Optional[float] = None
    kappa: float = 1e-3
    sigma0: float = 0.45
    sigma_min: float = 0.25
    sigma_max: float = 0.9
    m_budget: int = 30
    rho_floor: float = 1e-6
    forcing: str = "adaptive"  # or "constant"
    eta_floor: float = 1e-6
    adapt_sigma: bool = True
    max_outer: int = 200
    max_inner: int = 200
    stagnation_window: int = 50
    nested_thresholds: Optional[List[float]] = None
    stage_errors: bool = True
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def __post_init__(self):
        if not (0 < self.sigma_min <= self.sigma0 <= self.sigma_max < 1):
            raise ValueError("need 0 < sigma_min <= sigma0 <= sigma_max < 1")
        for name in ("kappa", "rho_floor", "eta_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.forcing not in ("constant", "adaptive"):
            raise ValueError("forcing must be 'constant' or 'adaptive'")


@dataclass
class PathTraceRow:
    i: int
    gamma: float
    delta: float
    sigma: float
    newton_steps: int
    control_steps: int
    objective: Optional[float] = None
    tau: Optional[float] = None
    tau_u: Optional[float] = None
    e_j: Optional[float] = None
    e_u: Optional[float] = None
    e_y: Optional[float] = None
    e_p: Optional[float] = None
    residual_norm: float = math.nan
    dof: int = 0


@dataclass
class PathResult:
    pair: StateAdjointPair
    control: FeFunction
    mesh: TriMesh
    params: SmoothingParams
    trace: List[PathTraceRow]
    terminated: bool  # True iff the increment criterion fired
    step_records: List[StepRecord] = field(default_factory=list)

    @property
    def total_newton_steps(self) -> int:
        return sum(r.newton_steps for r in self.trace)

    @property
    def total_control_steps(self) -> int:
        return sum(r.control_steps for r in self.trace)


def rho(gamma: float, delta: float, rho_floor: float = 1e-6) -> float:
    """Stage tolerance for the coupled residual."""
    if gamma <= 0 or delta <= 0:
        raise ValueError("gamma and delta must be positive")
    return max(rho_floor, gamma)


def forcing_term(mode: str, k: int, delta_i: float, eta_floor: float = 1e-6) -> float:
    """Relative tolerance of the k-th inexact Newton linear solve within a
    stage: constant, or shrinking with k but no tighter than sqrt(delta)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if mode == "constant":
        return eta_floor
    if mode == "adaptive":
        return max(eta_floor, min(10.0 ** (-k - 1), math.sqrt(delta_i)))
    raise ValueError(f"unknown forcing mode {mode!r}")


def update_sigma(
    sigma_prev: float,
    implicit_steps: int,
    m_budget: int,
    sigma_min: float = 0.25,
    sigma_max: float = 0.9,
) -> float:
    """Adapt the continuation factor from the implicit-control workload of
    the last stage: expensive stages slow the continuation down, cheap
    stages speed it up."""
    if implicit_steps > m_budget:
        sigma = sigma_prev * 1.2
    elif implicit_steps <= 0.75 * m_budget:
        sigma = sigma_prev * 0.9
    else:
        sigma = sigma_prev
    return min(sigma_max, max(sigma_min, sigma))


def termination_test(history, kappa: float, beta: float) -> bool:
    """Increment-based stopping rule.

    ``history`` is a list of (pair, sigma) per stage.  Stops when, for the
    last two stage transitions, the H1 norm of the (state, adjoint/beta)
    increment is below (1 - sigma_of_that_stage) * kappa times the H1 norm
    of the current pair.
    """
    if len(history) < 3:
        return False
    cur, _ = history[-1]
    mesh = cur.mesh
    ref = pair_h1_norm(cur.y, cur.p / beta, mesh)
    for (prev, sigma_prev), (nxt, _) in ((history[-2], history[-1]), (history[-3], history[-2])):
        incr = pair_h1_norm(nxt.y - prev.y, (nxt.p - prev.p) / beta, mesh)
        if incr > (1.0 - sigma_prev) * kappa * ref:
            return False
    return True


def _build_system(problem: ProblemSpec, mesh: TriMesh, params: SmoothingParams) -> CoupledSystem:
    load = assemble_load(mesh, problem.y_omega, INTERIOR)
    return CoupledSystem(mesh, params, load)


def _feasible_state(system: CoupledSystem, u: FeFunction) -> FeFunction:
    """State obtained by solving the governing PDE with source u."""
    rhs = (system.mass_full @ u.to_full())[system.mesh.interior]
    return FeFunction(INTERIOR, system.state_factor.solve(rhs), system.mesh)


def run_path(
    problem: ProblemSpec,
    mesh: TriMesh,
    config: PathConfig = PathConfig(),
) -> PathResult:
    """Run the full continuation on (an optionally refined sequence of)
    meshes; returns the final pair, control, and one trace row per stage."""
    gamma = config.gamma0 if config.gamma0 is not None else problem.gamma0
    delta = config.delta0 if config.delta0 is not None else problem.delta0
    params = SmoothingParams(gamma=gamma, delta=delta, beta=problem.beta)
    system = _build_system(problem, mesh, params)
    w = StateAdjointPair.zero(mesh)
    u = FeFunction(FULL, np.zeros(mesh.n_vertices), mesh)
    sigma = config.sigma0
    thresholds = sorted(config.nested_thresholds or [], reverse=True)
    trace: List[PathTraceRow] = []
    history = []  # (accepted pair, sigma of that stage); reset on refinement
    prev_u = None
    step_records: List[StepRecord] = []

    for i in range(config.max_outer):
        rho_i = rho(params.gamma, params.delta, config.rho_floor)
        ctl_tol = control_inner_tolerance(params.gamma, rho_i)
        try:
            try:
                u, rep = system.control_at(w.p, tol=ctl_tol, warm_start=u)
            except ControlSolveError as exc:
                # the stage evaluation hit the double-precision floor of the
                # control subproblem above its tolerance; the floor iterate
                # is the best available evaluation of the map, and if it is
                # too noisy to make progress the stage fails honestly below
                u, rep = exc.best, exc.report
            stage_control = rep.newton_steps
            res = system.residual(w, u)
            res_norm = system.residual_norm(res)
            stage_newton = 0
            best = res_norm
            since_improved = 0
            while res_norm > rho_i:
                eta = forcing_term(config.forcing, stage_newton, params.delta, config.eta_floor)
                try:
                    w, u, res, res_norm, rec = newton_step(
                        system, w, u, res, res_norm, eta, ctl_tol, config.newton
                    )
                except NewtonStepError as exc:
                    # A vanishing Newton step means the iterate solves the
                    # root problem to double-precision evaluation accuracy:
                    # the residual sits on the rounding floor of the
                    # eliminated control map and no step can lower it, so
                    # the stage is accepted as converged on that floor.
                    if exc.negligible:
                        break
                    raise
                stage_newton += 1
                stage_control += rec.control_steps
                step_records.append(rec)
                # deep in the continuation the control map is evaluable only
                # to a noise level that can exceed the stage tolerance; a
                # step that cannot even halve a residual already close to
                # the stage target means the stage sits on that floor and
                # is accepted, like a negligible step (healthy steps in
                # this regime converge superlinearly and are far below the
                # 0.5 mark; a residual far above the target is genuine
                # trouble and stays in the loop)
                if (
                    params.gamma < 1e-6
                    and res_norm >= 0.5 * best
                    and res_norm <= 1e3 * rho_i
                ):
                    break
                if res_norm < best * (1.0 - 1e-12):
                    best = res_norm
                    since_improved = 0
                else:
                    since_improved += 1
                    if since_improved >= config.stagnation_window:
                        raise PathError(
                            f"stage {i}: no residual reduction over "
                            f"{config.stagnation_window} steps", trace
                        )
                if stage_newton > config.max_inner:
                    raise PathError(f"stage {i}: inner iteration budget exhausted", trace)
        except PathError:
            raise
        except RuntimeError as exc:
            raise PathError(f"stage {i}: {exc}", trace) from exc

        if config.adapt_sigma and i > 0:
            sigma = update_sigma(
                sigma, stage_control, config.m_budget, config.sigma_min, config.sigma_max
            )
        history.append((w, sigma))

        row = PathTraceRow(
            i=i,
            gamma=params.gamma,
            delta=params.delta,
            sigma=sigma,
            newton_steps=stage_newton,
            control_steps=stage_control,
            residual_norm=res_norm,
            dof=mesh.interior.size,
        )
        y_feas = _feasible_state(system, u)
        row.objective = smoothed_objective(u, y_feas, problem.y_omega, params)
        if len(history) >= 2:
            prev_pair = history[-2][0]
            if prev_pair.mesh is mesh and prev_u is not None:
                row.tau, row.tau_u = compute_tau(w, prev_pair, u, prev_u, problem.beta)
        if config.stage_errors and problem.exact is not None:
            rep_err = compute_errors(
                u,
                FeFunction(INTERIOR, w.y, mesh),
                FeFunction(INTERIOR, w.p, mesh),
                row.objective,
                problem.exact,
            )
            row.e_j, row.e_u, row.e_y, row.e_p = rep_err.e_j, rep_err.e_u, rep_err.e_y, rep_err.e_p
        trace.append(row)
        prev_u = u

        if termination_test(history, config.kappa, problem.beta):
            return PathResult(w, u, mesh, params, trace, terminated=True,
                              step_records=step_records)

        params = replace(params, gamma=sigma * params.gamma, delta=sigma * params.delta)
        system.params = params

        if thresholds and params.gamma < thresholds[0]:
            thresholds.pop(0)
            fine = refine_uniform(mesh)
            y_f = interpolate_to(mesh, FeFunction(INTERIOR, w.y, mesh).to_full(), fine)
            p_f = interpolate_to(mesh, FeFunction(INTERIOR, w.p, mesh).to_full(), fine)
            u_f = interpolate_to(mesh, u.to_full(), fine)
            mesh = fine
            w = StateAdjointPair(y_f[mesh.interior], p_f[mesh.interior], mesh)
            u = FeFunction(FULL, u_f, mesh)
            system = _build_system(problem, mesh, params)
            history = []  # increments across meshes are not comparable
            prev_u = None

    raise PathError(f"no termination within {config.max_outer} stages", trace)
