"""P1 finite element operators on a TriMesh.

All integrands involving only P1 functions (and the smoothed-TV flux,
whose argument is the triangle-wise constant gradient) are integrated
exactly; general callbacks use a 3-point degree-2 Gauss rule.

Functions live either on the full nodal space ("V") or on the interior
(homogeneous Dirichlet) space ("Y").  Dirichlet conditions are imposed by
index reduction, never by penalties, so the state operator stays SPD.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import TriMesh

FULL = "V"
INTERIOR = "Y"

# degree-2 Gauss rule on the reference triangle (edge-midpoint variant)
_QP = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
_QW = np.array([1 / 3, 1 / 3, 1 / 3])

# degree-5 7-point rule, used only as a quadrature oracle in tests
_QP7 = np.array(
    [
        [1 / 3, 1 / 3],
        [0.0597158717, 0.4701420641],
        [0.4701420641, 0.0597158717],
        [0.4701420641, 0.4701420641],
        [0.7974269853, 0.1012865073],
        [0.1012865073, 0.7974269853],
        [0.1012865073, 0.1012865073],
    ]
)
_QW7 = np.array(
    [0.225, 0.1323941527, 0.1323941527, 0.1323941527, 0.1259391805, 0.1259391805, 0.1259391805]
)


@dataclass
class SmoothingParams:
    """Weights of the regularized control cost: TV weight ``beta``,
    TV smoothing ``delta``, H1 weight ``gamma``."""

    gamma: float
    delta: float
    beta: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.delta > 0 and self.beta > 0):
            raise ValueError("gamma, delta, beta must all be positive")


@dataclass
class FeFunction:
    """P1 coefficient vector tagged with its space ("V" full / "Y" interior)."""

    space: str
    coeffs: np.ndarray
    mesh: TriMesh

    def __post_init__(self):
        n = self.mesh.n_vertices if self.space == FULL else self.mesh.interior.size
        if self.coeffs.shape != (n,):
            raise ValueError(f"coefficient length {self.coeffs.shape} != dim({self.space}) = {n}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite coefficients")

    def to_full(self) -> np.ndarray:
        """Coefficients over all vertices (zero on the boundary for "Y")."""
        if self.space == FULL:
            return self.coeffs
        out = np.zeros(self.mesh.n_vertices)
        out[self.mesh.interior] = self.coeffs
        return out


def restrict(mesh: TriMesh, full_coeffs: np.ndarray) -> np.ndarray:
    return full_coeffs[mesh.interior]


def _space_index(mesh: TriMesh, space: str) -> Optional[np.ndarray]:
    if space == FULL:
        return None
    if space == INTERIOR:
        return mesh.interior
    raise ValueError(f"unknown space tag {space!r}")


def _restrict_matrix(mesh: TriMesh, mat: sp.csr_matrix, row_space: str, col_space: str):
    ri = _space_index(mesh, row_space)
    ci = _space_index(mesh, col_space)
    if ri is not None:
        mat = mat[ri]
    if ci is not None:
        mat = mat[:, ci]
    return mat.tocsr()


def _assemble_from_elements(mesh: TriMesh, elem: np.ndarray) -> sp.csr_matrix:
    """Scatter per-triangle 3x3 element matrices into a CSR matrix."""
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    mat = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n))
    out = mat.tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def assemble_mass(mesh: TriMesh, row_space: str = FULL, col_space: str = FULL) -> sp.csr_matrix:
    """Exact P1 mass matrix, restricted to the requested row/column spaces."""
    key = "mass_full"
    if key not in mesh._cache:
        base = np.full((3, 3), 1.0 / 12.0)
        np.fill_diagonal(base, 2.0 / 12.0)
        elem = mesh.areas[:, None, None] * base[None]
        mesh._cache[key] = _assemble_from_elements(mesh, elem)
    return _restrict_matrix(mesh, mesh._cache[key], row_space, col_space)


def assemble_stiffness(mesh: TriMesh, row_space: str = FULL, col_space: str = FULL) -> sp.csr_matrix:
    """P1 stiffness matrix for the Laplacian (identity diffusion tensor)."""
    key = "stiffness_full"
    if key not in mesh._cache:
        bg = mesh.basis_gradients
        elem = mesh.areas[:, None, None] * np.einsum("tkd,tld->tkl", bg, bg)
        mesh._cache[key] = _assemble_from_elements(mesh, elem)
    return _restrict_matrix(mesh, mesh._cache[key], row_space, col_space)


def assemble_state_operator(
    mesh: TriMesh,
    a_coeff: Optional[np.ndarray] = None,
    c0: float = 0.0,
) -> sp.csr_matrix:
    """Interior-space operator of the governing elliptic PDE.

    ``a_coeff`` is a constant 2x2 SPD diffusion tensor (identity by default)
    and ``c0 >= 0`` a constant reaction coefficient; both benchmark problems
    use the pure Laplacian.
    """
    if a_coeff is None and c0 == 0.0:
        return assemble_stiffness(mesh, INTERIOR, INTERIOR)
    a = np.eye(2) if a_coeff is None else np.asarray(a_coeff, dtype=float)
    if a.shape != (2, 2) or not np.allclose(a, a.T) or np.any(np.linalg.eigvalsh(a) <= 0):
        raise ValueError("diffusion tensor must be symmetric positive definite")
    if c0 < 0:
        raise ValueError("c0 must be non-negative")
    bg = mesh.basis_gradients
    elem = mesh.areas[:, None, None] * np.einsum("tkd,de,tle->tkl", bg, a, bg)
    mat = _assemble_from_elements(mesh, elem)
    if c0 > 0:
        mat = mat + c0 * assemble_mass(mesh)
    return _restrict_matrix(mesh, mat.tocsr(), INTERIOR, INTERIOR)


def assemble_h1_matrix(mesh: TriMesh, space: str = FULL) -> sp.csr_matrix:
    """Full H1 inner-product matrix: stiffness (no Dirichlet) plus mass."""
    return (assemble_stiffness(mesh, space, space) + assemble_mass(mesh, space, space)).tocsr()


def lumped_mass(mesh: TriMesh, space: str = FULL) -> np.ndarray:
    """Row sums of the mass matrix (diagonal lumping), as a vector."""
    return np.asarray(assemble_mass(mesh, space, space).sum(axis=1)).ravel()


def dual_norm(mesh: TriMesh, residual: np.ndarray, space: str = FULL) -> float:
    """Mesh-size-independent dual norm sqrt(r^T D^-1 r) with lumped mass D."""
    key = f"lumped_{space}"
    if key not in mesh._cache:
        mesh._cache[key] = lumped_mass(mesh, space)
    d = mesh._cache[key]
    return float(np.sqrt(residual @ (residual / d)))


def l2_norm(mesh: TriMesh, coeffs: np.ndarray, space: str = FULL) -> float:
    m = assemble_mass(mesh, space, space)
    return float(np.sqrt(coeffs @ (m @ coeffs)))


def h1_norm(mesh: TriMesh, coeffs: np.ndarray, space: str = FULL) -> float:
    m = assemble_h1_matrix(mesh, space)
    return float(np.sqrt(coeffs @ (m @ coeffs)))


# -- smoothed TV flux and its derivative --------------------------------


def eval_f(v: np.ndarray, delta: float, beta: float) -> np.ndarray:
    """Smoothed-TV flux beta * v / sqrt(delta + |v|^2); |f(v)| < beta."""
    v = np.asarray(v, dtype=float)
    return beta * v / np.sqrt(delta + v @ v)


def eval_fprime(v: np.ndarray, delta: float, beta: float) -> np.ndarray:
    """Jacobian of the smoothed-TV flux, a symmetric PSD 2x2 matrix."""
    v = np.asarray(v, dtype=float)
    root = np.sqrt(delta + v @ v)
    return beta * (np.eye(len(v)) / root - np.outer(v, v) / root**3)


# -- control equation residual / Jacobian / energy ----------------------


def _gradu(u: FeFunction) -> np.ndarray:
    return kernels.grad_on_triangles(
        np.ascontiguousarray(u.to_full()), u.mesh.triangles, u.mesh.basis_gradients
    )


def assemble_control_residual(
    u: FeFunction, p_rhs: FeFunction, params: SmoothingParams
) -> np.ndarray:
    """Residual of the smoothed control equation over the full space:
    component i is (gamma*grad u + f(grad u), grad phi_i) + gamma (u, phi_i)
    - (p_rhs, phi_i)."""
    mesh = u.mesh
    grad_part = kernels.tv_gradient_scatter(
        _gradu(u),
        mesh.basis_gradients,
        mesh.areas,
        mesh.triangles,
        params.gamma,
        params.beta,
        params.delta,
    )
    if grad_part.shape[0] < mesh.n_vertices:  # isolated trailing vertices
        grad_part = np.pad(grad_part, (0, mesh.n_vertices - grad_part.shape[0]))
    m = assemble_mass(mesh)
    return grad_part + m @ (params.gamma * u.to_full() - p_rhs.to_full())


def assemble_control_jacobian(u: FeFunction, params: SmoothingParams) -> sp.csr_matrix:
    """Exact derivative of the control residual in u; SPD on the full space."""
    mesh = u.mesh
    elem = kernels.control_jacobian_values(
        _gradu(u),
        mesh.basis_gradients,
        mesh.areas,
        params.gamma,
        params.beta,
        params.delta,
    )
    return _assemble_from_elements(mesh, np.asarray(elem))


def psi_delta_h(u: FeFunction, delta: float) -> float:
    """Discrete smoothed TV seminorm; delta = 0 gives the TV seminorm."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return kernels.psi_delta_sum(_gradu(u), u.mesh.areas, delta)


def energy(u: FeFunction, p_rhs: FeFunction, params: SmoothingParams) -> float:
    """Strongly convex energy whose gradient is the control residual."""
    mesh = u.mesh
    uf = u.to_full()
    h1 = assemble_h1_matrix(mesh)
    m = assemble_mass(mesh)
    return (
        params.beta * psi_delta_h(u, params.delta)
        + 0.5 * params.gamma * (uf @ (h1 @ uf))
        - float(p_rhs.to_full() @ (m @ uf))
    )


# -- load vectors --------------------------------------------------------


def _quad_points(mesh: TriMesh, qp: np.ndarray) -> np.ndarray:
    """Physical coordinates of reference quadrature points, (n_t, n_q, 2)."""
    p = mesh.vertices[mesh.triangles]
    lam = np.column_stack([1.0 - qp.sum(axis=1), qp])  # (n_q, 3)
    return np.einsum("qk,tkd->tqd", lam, p)


def assemble_load(
    mesh: TriMesh,
    g: Callable,
    target_space: str = FULL,
    order: int = 2,
) -> np.ndarray:
    """Load vector with components approximately int g * phi_i dx.

    ``g`` maps (x, y) arrays to values.  ``order=5`` switches to the 7-point
    rule (used as the independent quadrature oracle in tests).
    """
    qp, qw = (_QP, _QW) if order <= 2 else (_QP7, _QW7)
    pts = _quad_points(mesh, qp)
    vals = g(pts[..., 0], pts[..., 1])  # (n_t, n_q)
    lam = np.column_stack([1.0 - qp.sum(axis=1), qp])  # (n_q, 3)
    contrib = mesh.areas[:, None] * np.einsum("q,tq,qk->tk", qw, vals, lam)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles, contrib)
    idx = _space_index(mesh, target_space)
    return out if idx is None else out[idx]


def integrate(mesh: TriMesh, g: Callable, order: int = 2) -> float:
    """Quadrature of a scalar callback over the mesh."""
    qp, qw = (_QP, _QW) if order <= 2 else (_QP7, _QW7)
    pts = _quad_points(mesh, qp)
    vals = g(pts[..., 0], pts[..., 1])
    return float(mesh.areas @ (vals @ qw))
