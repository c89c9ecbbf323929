"""Error metrics, convergence indicators, and trace/field output.

Errors against closed-form references are evaluated with a degree-2
quadrature rule per triangle (callbacks sampled at the quadrature points,
gradients taken from the gradient callbacks).  Errors against fine-grid
references interpolate the coarse functions onto the fine mesh and
assemble the norms there.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from . import kernels
from .fem import (
    FULL,
    INTERIOR,
    FeFunction,
    SmoothingParams,
    assemble_h1_matrix,
    assemble_mass,
    psi_delta_h,
)
from .mesh import TriMesh, interpolate_to
from .problems import ExactSolution

_QP = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
_QW = np.array([1 / 3, 1 / 3, 1 / 3])


@dataclass
class ErrorReport:
    e_j: Optional[float]
    e_u: float
    e_y: float
    e_p: float


@dataclass
class FineGridReference:
    """Reference triple computed on a finer mesh (used when no closed form
    is available)."""

    u: FeFunction
    y: FeFunction
    p: FeFunction
    objective: Optional[float] = None


def _quad_data(mesh: TriMesh):
    pts = mesh.vertices[mesh.triangles]  # (t, 3, 2)
    lam = np.column_stack([1.0 - _QP.sum(axis=1), _QP])  # (q, 3)
    phys = np.einsum("qk,tkd->tqd", lam, pts)
    return lam, phys


def _fe_at_quad(f: FeFunction, lam: np.ndarray) -> np.ndarray:
    return np.einsum("qk,tk->tq", lam, f.to_full()[f.mesh.triangles])


def _fe_grad(f: FeFunction) -> np.ndarray:
    return kernels.grad_on_triangles(
        np.ascontiguousarray(f.to_full()), f.mesh.triangles, f.mesh.basis_gradients
    )


def l1_error_vs_callback(f: FeFunction, callback) -> float:
    lam, phys = _quad_data(f.mesh)
    diff = np.abs(_fe_at_quad(f, lam) - callback(phys[..., 0], phys[..., 1]))
    return float(f.mesh.areas @ (diff @ _QW))


def l2_error_vs_callback(f: FeFunction, callback) -> float:
    lam, phys = _quad_data(f.mesh)
    diff = _fe_at_quad(f, lam) - callback(phys[..., 0], phys[..., 1])
    return float(np.sqrt(f.mesh.areas @ (diff**2 @ _QW)))


def h1_error_vs_callback(f: FeFunction, callback, grad_callback) -> float:
    """Full H1-norm error: L2 part by quadrature of the value callback,
    seminorm part from the (triangle-wise constant) discrete gradient."""
    mesh = f.mesh
    lam, phys = _quad_data(mesh)
    diff = _fe_at_quad(f, lam) - callback(phys[..., 0], phys[..., 1])
    l2_sq = mesh.areas @ (diff**2 @ _QW)
    gdiff = _fe_grad(f)[:, None, :] - grad_callback(phys[..., 0], phys[..., 1])
    semi_sq = mesh.areas @ (np.einsum("tqd,tqd->tq", gdiff, gdiff) @ _QW)
    return float(np.sqrt(l2_sq + semi_sq))


def tracking_misfit(y: FeFunction, y_omega, order: int = 2) -> float:
    """Squared-misfit term of the objective: 0.5 * ||y - y_omega||_L2^2."""
    return 0.5 * l2_error_vs_callback(y, y_omega) ** 2


def smoothed_objective(
    u: FeFunction, y: FeFunction, y_omega, params: SmoothingParams
) -> float:
    """Regularized discrete objective: tracking misfit plus weighted
    smoothed TV plus the H1 proximal term."""
    uf = u.to_full()
    h1 = assemble_h1_matrix(u.mesh)
    return (
        tracking_misfit(y, y_omega)
        + params.beta * psi_delta_h(u, params.delta)
        + 0.5 * params.gamma * float(uf @ (h1 @ uf))
    )


def compute_errors(
    u: FeFunction,
    y: FeFunction,
    p: FeFunction,
    objective: Optional[float],
    reference: Union[ExactSolution, FineGridReference],
) -> ErrorReport:
    """Errors of a computed triple: objective gap, L1 control error, and
    H1 state/adjoint errors."""
    if isinstance(reference, ExactSolution):
        e_j = None if objective is None else abs(objective - reference.optimal_value)
        return ErrorReport(
            e_j=e_j,
            e_u=l1_error_vs_callback(u, reference.u),
            e_y=h1_error_vs_callback(y, reference.y, reference.grad_y),
            e_p=h1_error_vs_callback(p, reference.p, reference.grad_p),
        )
    if isinstance(reference, FineGridReference):
        fine = reference.u.mesh
        e_j = None
        if objective is not None and reference.objective is not None:
            e_j = abs(objective - reference.objective)

        def lift(f: FeFunction) -> np.ndarray:
            return interpolate_to(f.mesh, f.to_full(), fine)

        m = assemble_mass(fine)
        h1 = assemble_h1_matrix(fine)
        du = lift(u) - reference.u.to_full()
        lumped = np.asarray(m.sum(axis=1)).ravel()
        e_u = float(lumped @ np.abs(du))  # lumped L1 on the fine mesh
        dy = lift(y) - reference.y.to_full()
        dp = lift(p) - reference.p.to_full()
        return ErrorReport(
            e_j=e_j,
            e_u=e_u,
            e_y=float(np.sqrt(dy @ (h1 @ dy))),
            e_p=float(np.sqrt(dp @ (h1 @ dp))),
        )
    raise TypeError("reference must be an ExactSolution or FineGridReference")


def compute_tau(
    pair_now,
    pair_prev,
    u_now: FeFunction,
    u_prev: FeFunction,
    beta: float,
) -> tuple:
    """Path progress indicators: H1 norm of the (state, adjoint/beta)
    increment and L2 norm of the control increment."""
    mesh = pair_now.mesh
    h1 = assemble_h1_matrix(mesh, INTERIOR)
    dy = pair_now.y - pair_prev.y
    dp = (pair_now.p - pair_prev.p) / beta
    tau = float(np.sqrt(dy @ (h1 @ dy) + dp @ (h1 @ dp)))
    m = assemble_mass(mesh)
    du = u_now.to_full() - u_prev.to_full()
    tau_u = float(np.sqrt(du @ (m @ du)))
    return tau, tau_u


def pair_h1_norm(y: np.ndarray, p_scaled: np.ndarray, mesh: TriMesh) -> float:
    """H1 norm of a stacked interior (state, scaled adjoint) pair."""
    h1 = assemble_h1_matrix(mesh, INTERIOR)
    return float(np.sqrt(y @ (h1 @ y) + p_scaled @ (h1 @ p_scaled)))


_CSV_FIELDS = [
    "i",
    "gamma",
    "delta",
    "sigma",
    "newton_steps",
    "control_steps",
    "objective",
    "tau",
    "tau_u",
    "e_j",
    "e_u",
    "e_y",
    "e_p",
]


def write_trace_csv(path, rows) -> None:
    """Write path-trace rows (any objects exposing the column names as
    attributes) as CSV; missing metrics become empty cells."""

    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_FIELDS)
            for row in rows:
                writer.writerow([fmt(getattr(row, name, None)) for name in _CSV_FIELDS])
    except OSError as exc:
        raise OSError(f"cannot write trace CSV to {path}: {exc}") from exc


def write_field_vtk(path, mesh: TriMesh, fields: Dict[str, FeFunction]) -> None:
    """Legacy-ASCII VTK output of the mesh with one point scalar per field."""
    try:
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write("tvcontrol fields\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {mesh.n_vertices} double\n")
            for x, y in mesh.vertices:
                fh.write(f"{x:.17g} {y:.17g} 0.0\n")
            nt = mesh.n_triangles
            fh.write(f"CELLS {nt} {4 * nt}\n")
            for a, b, c in mesh.triangles:
                fh.write(f"3 {a} {b} {c}\n")
            fh.write(f"CELL_TYPES {nt}\n")
            fh.write("5\n" * nt)
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, f in fields.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in f.to_full():
                    fh.write(f"{v:.17g}\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file to {path}: {exc}") from exc
