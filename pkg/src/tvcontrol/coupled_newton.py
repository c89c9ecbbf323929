"""Inexact Newton method for the reduced state/adjoint root problem.

The unknowns are the interior-node coefficients of the state and the
adjoint.  The control is eliminated: each residual evaluation solves the
strongly convex smoothed control problem with the negated adjoint as
right-hand side.  Newton systems are solved by right-preconditioned GMRES
with a relative forcing tolerance, globalized by a non-monotone line
search that tolerates a residual increase decaying like 1/(l+1)^2 in the
number of halvings l.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fem import (
    FULL,
    INTERIOR,
    FeFunction,
    SmoothingParams,
    assemble_mass,
    assemble_state_operator,
    assemble_control_jacobian,
    dual_norm,
    l2_norm,
)
from .implicit_control import (
    ControlSolveError,
    apply_control_derivative,
    solve_implicit_control,
)
from .mesh import TriMesh
from .sparse_linalg import LinearOperator, cholesky_factor, gmres


class NewtonStepError(RuntimeError):
    """Line search or linear solve failed inside a Newton step.

    ``negligible`` is set when the computed Newton step is so small that
    the iterate already solves the root problem to evaluation precision;
    the residual then sits on the rounding floor of the eliminated
    control map and cannot be reduced further in double precision.
    """

    def __init__(self, message: str, negligible: bool = False):
        super().__init__(message)
        self.negligible = negligible


@dataclass
class StateAdjointPair:
    """Interior-space state and adjoint coefficient vectors."""

    y: np.ndarray
    p: np.ndarray
    mesh: TriMesh

    def __post_init__(self):
        n = self.mesh.interior.size
        if self.y.shape != (n,) or self.p.shape != (n,):
            raise ValueError("state/adjoint must live on the interior space")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.y, self.p])

    @classmethod
    def zero(cls, mesh: TriMesh) -> "StateAdjointPair":
        n = mesh.interior.size
        return cls(np.zeros(n), np.zeros(n), mesh)


@dataclass
class NewtonConfig:
    eta_floor: float = 1e-6
    tau: float = 1e-4  # sufficient-decrease weight on the squared step
    max_backtracks: int = 30
    gmres_max_iter: int = 400


@dataclass
class StepRecord:
    residual_norm: float
    gmres_iterations: int
    control_steps: int
    step_exponent: int  # accepted step length is 2**(-step_exponent)

    @property
    def full_step(self) -> bool:
        return self.step_exponent == 0


class CoupledSystem:
    """Assembled operators of one discrete optimality system.

    The smoothing parameters are mutable so a path-following driver can
    tighten them without re-assembling the mesh-dependent matrices.
    """

    def __init__(self, mesh: TriMesh, params: SmoothingParams, target_load: np.ndarray):
        n = mesh.interior.size
        if target_load.shape != (n,):
            raise ValueError("target load must be an interior-space vector")
        self.mesh = mesh
        self.params = params
        self.target_load = target_load
        self.state_op = assemble_state_operator(mesh)
        self.mass_full = assemble_mass(mesh)
        self.mass = assemble_mass(mesh, INTERIOR, INTERIOR)
        self.mass_if = assemble_mass(mesh, INTERIOR, FULL)
        self.mass_fi = assemble_mass(mesh, FULL, INTERIOR)
        self.state_factor = cholesky_factor(self.state_op)
        self.n = n

    # -- control elimination --------------------------------------------

    def control_at(
        self,
        p: np.ndarray,
        tol: float,
        warm_start: Optional[FeFunction] = None,
    ):
        """Implicit control for adjoint ``p``: solve the smoothed control
        problem with right-hand side -p (extended by zero to the boundary)."""
        rhs = np.zeros(self.mesh.n_vertices)
        rhs[self.mesh.interior] = -p
        return solve_implicit_control(
            FeFunction(FULL, rhs, self.mesh), self.params, warm_start=warm_start, tol=tol
        )

    # -- residual, Jacobian action, preconditioner ----------------------

    def residual(self, w: StateAdjointPair, u: FeFunction) -> np.ndarray:
        """Stacked residual: state equation with the eliminated control as
        source, then the adjoint equation driven by the tracking misfit."""
        interior = self.mesh.interior
        r_state = self.state_op @ w.y - (self.mass_full @ u.to_full())[interior]
        r_adjoint = self.mass @ w.y - self.target_load - self.state_op @ w.p
        return np.concatenate([r_state, r_adjoint])

    def residual_norm(self, r: np.ndarray) -> float:
        """Euclidean combination of the two lumped-mass dual norms."""
        r1, r2 = r[: self.n], r[self.n :]
        return float(
            np.hypot(dual_norm(self.mesh, r1, INTERIOR), dual_norm(self.mesh, r2, INTERIOR))
        )

    def step_norm(self, s: np.ndarray) -> float:
        s1, s2 = s[: self.n], s[self.n :]
        return float(
            np.hypot(l2_norm(self.mesh, s1, INTERIOR), l2_norm(self.mesh, s2, INTERIOR))
        )

    def jacobian_operator(self, u: FeFunction) -> LinearOperator:
        """Exact derivative of the residual at (y, p) with control ``u``;
        the control block reuses one factorization of the control Jacobian."""
        interior = self.mesh.interior
        jac_factor = cholesky_factor(assemble_control_jacobian(u, self.params))

        def apply(s: np.ndarray) -> np.ndarray:
            dy, dp = s[: self.n], s[self.n :]
            d = np.zeros(self.mesh.n_vertices)
            d[interior] = -dp
            z = apply_control_derivative(
                u, FeFunction(FULL, d, self.mesh), self.params, jac_factor=jac_factor
            )
            out1 = self.state_op @ dy - (self.mass_full @ z.to_full())[interior]
            out2 = self.mass @ dy - self.state_op @ dp
            return np.concatenate([out1, out2])

        return LinearOperator(2 * self.n, apply)

    def preconditioner(self) -> LinearOperator:
        """Block-triangular approximate inverse built from the factorized
        state operator; it inverts the Jacobian exactly when the control
        derivative block vanishes."""
        solve = self.state_factor.solve

        def apply(r: np.ndarray) -> np.ndarray:
            r1, r2 = r[: self.n], r[self.n :]
            q1 = solve(r1)
            q2 = solve(self.mass @ q1 - r2)
            return np.concatenate([q1, q2])

        return LinearOperator(2 * self.n, apply)


def newton_step(
    system: CoupledSystem,
    w: StateAdjointPair,
    u: FeFunction,
    res: np.ndarray,
    res_norm: float,
    eta: float,
    control_tol: float,
    config: NewtonConfig = NewtonConfig(),
):
    """One globalized inexact Newton step.

    Returns (w_new, u_new, res_new, res_norm_new, record).  ``res`` and
    ``res_norm`` must belong to (w, u); the control at the accepted trial
    point is solved with warm start ``u``.
    """
    # Solve an extended sparse system in which the control perturbation is
    # an explicit unknown.  Every matvec is then an exact sparse product,
    # while the ill-conditioned control-Jacobian solve moves into the
    # preconditioner, where flexible GMRES tolerates its rounding noise.
    n, nv = system.n, system.mesh.n_vertices
    a_op, m_int = system.state_op, system.mass
    m_if, m_fi = system.mass_if, system.mass_fi
    h_mat = assemble_control_jacobian(u, system.params)
    h_factor = cholesky_factor(h_mat)
    b_solve = system.state_factor.solve

    def apply(s: np.ndarray) -> np.ndarray:
        dy, dz, dp = s[:n], s[n : n + nv], s[n + nv :]
        return np.concatenate(
            [a_op @ dy - m_if @ dz, h_mat @ dz + m_fi @ dp, m_int @ dy - a_op @ dp]
        )

    def precond(r: np.ndarray) -> np.ndarray:
        r1, r2, r3 = r[:n], r[n : n + nv], r[n + nv :]
        qy = b_solve(r1)
        qp = b_solve(m_int @ qy - r3)
        qz = h_factor.solve(r2 - m_fi @ qp)
        return np.concatenate([qy, qz, qp])

    rhs = np.concatenate([-res[:n], np.zeros(nv), -res[n:]])
    gm = gmres(
        LinearOperator(2 * n + nv, apply),
        rhs,
        precond=LinearOperator(2 * n + nv, precond),
        rel_tol=max(eta, 1e-14),
        max_iter=config.gmres_max_iter,
        flexible=True,
    )
    rel_lin = gm.residual / max(np.linalg.norm(rhs), 1e-300)
    if not gm.converged and rel_lin > 0.1:
        # a stalled-but-small linear residual is still a workable
        # inexact Newton direction; only a useless one aborts the step
        raise NewtonStepError(f"GMRES stalled at relative residual {rel_lin:.3e}")
    s = np.concatenate([gm.x[:n], gm.x[n + nv :]])
    s_norm = system.step_norm(s)
    if s_norm <= 1e-9 * max(1.0, system.step_norm(w.stacked())):
        raise NewtonStepError(
            f"negligible Newton step {s_norm:.3e} at residual {res_norm:.3e}",
            negligible=True,
        )
    control_steps = 0

    for l in range(config.max_backtracks + 1):
        t = 2.0**-l
        w_trial = StateAdjointPair(w.y + t * s[: system.n], w.p + t * s[system.n :], system.mesh)
        try:
            u_trial, rep = system.control_at(w_trial.p, tol=control_tol, warm_start=u)
        except ControlSolveError as exc:
            # reject the trial; a shorter step keeps the warm start closer
            control_steps += exc.report.newton_steps
            continue
        control_steps += rep.newton_steps
        r_trial = system.residual(w_trial, u_trial)
        norm_trial = system.residual_norm(r_trial)
        if norm_trial <= (1.0 + 1.0 / (l + 1) ** 2) * res_norm - config.tau * (t * s_norm) ** 2:
            record = StepRecord(norm_trial, gm.iterations, control_steps, l)
            return w_trial, u_trial, r_trial, norm_trial, record

    raise NewtonStepError(
        f"line search exhausted {config.max_backtracks} halvings at residual {res_norm:.3e}"
    )
