"""Sparse direct solves for SPD systems and a non-restarted GMRES.

The SPD factorization is an LU specialization: with row pivoting disabled
and a fill-reducing symmetric ordering, SuperLU on an SPD matrix is a
(scaled) Cholesky factorization, and a non-positive pivot on the diagonal
of U flags an indefinite matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class NotPositiveDefiniteError(ValueError):
    """Factorization hit a non-positive pivot."""


class GmresBreakdownError(RuntimeError):
    pass


@dataclass
class SpdFactorization:
    """Reusable factorization of an SPD sparse matrix; safe for concurrent
    solves once constructed.

    ``solve`` applies one step of iterative refinement: the matrices here
    get extremely ill-conditioned along the continuation path, and the
    extra residual correction buys several digits at the cost of one
    triangular solve."""

    n: int
    _lu: spla.SuperLU
    _a: sp.csr_matrix

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        x += self._lu.solve(b - self._a @ x)
        return x


def cholesky_factor(a: sp.spmatrix) -> SpdFactorization:
    """Factor an SPD matrix with a fill-reducing symmetric ordering."""
    a = a.tocsc()
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    lu = spla.splu(
        a,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    if np.any(lu.U.diagonal() <= 0.0):
        raise NotPositiveDefiniteError("non-positive pivot: matrix is not SPD")
    return SpdFactorization(n=a.shape[0], _lu=lu, _a=a.tocsr())


def spd_solve(fac: SpdFactorization, b: np.ndarray) -> np.ndarray:
    return fac.solve(b)


@dataclass
class LinearOperator:
    """Matrix-free linear map on R^n."""

    n: int
    apply: Callable[[np.ndarray], np.ndarray]

    @staticmethod
    def from_matrix(a) -> "LinearOperator":
        return LinearOperator(n=a.shape[0], apply=lambda v: a @ v)

    @staticmethod
    def identity(n: int) -> "LinearOperator":
        return LinearOperator(n=n, apply=lambda v: v)


@dataclass
class GmresResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def gmres(
    op: LinearOperator,
    b: np.ndarray,
    precond: Optional[LinearOperator] = None,
    abs_tol: float = 0.0,
    rel_tol: float = 1e-10,
    max_iter: int = 400,
    flexible: bool = False,
) -> GmresResult:
    """Full (non-restarted) right-preconditioned GMRES.

    Modified Gram-Schmidt with one reorthogonalization pass.  Terminates
    when the Euclidean residual drops below max(abs_tol, rel_tol * |b|);
    on max_iter the best iterate is returned with ``converged=False``.

    With ``flexible=True`` the preconditioned basis vectors are stored and
    the solution is assembled from them directly (FGMRES).  This tolerates
    a preconditioner that is noisy or varies between applications — the
    preconditioner is never re-applied to an accumulated linear
    combination, so its forward error does not get amplified by the
    cancellation inherent in that combination.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if op.n != n:
        raise ValueError("dimension mismatch between operator and rhs")
    if precond is None:
        precond = LinearOperator.identity(n)

    norm_b = float(np.linalg.norm(b))
    target = max(abs_tol, rel_tol * norm_b)
    history = [norm_b]
    if norm_b <= target:
        return GmresResult(np.zeros(n), norm_b, 0, True, history)

    max_iter = min(max_iter, n)
    v = [b / norm_b]
    z = []  # preconditioned basis (flexible mode)
    hess = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = norm_b

    k_used = 0
    for k in range(max_iter):
        zk = precond.apply(v[k])
        if flexible:
            z.append(zk)
        # copy: the operator may return its input (identity) or a view,
        # and w is modified in place by the orthogonalization below
        w = np.array(op.apply(zk), dtype=float)
        # MGS + one reorthogonalization pass
        for _ in range(2):
            for j in range(k + 1):
                c = v[j] @ w
                hess[j, k] += c
                w -= c * v[j]
        h_new = float(np.linalg.norm(w))
        hess[k + 1, k] = h_new

        # apply accumulated Givens rotations, then the new one
        for j in range(k):
            t = cs[j] * hess[j, k] + sn[j] * hess[j + 1, k]
            hess[j + 1, k] = -sn[j] * hess[j, k] + cs[j] * hess[j + 1, k]
            hess[j, k] = t
        denom = np.hypot(hess[k, k], hess[k + 1, k])
        if denom == 0.0:
            break
        cs[k] = hess[k, k] / denom
        sn[k] = hess[k + 1, k] / denom
        hess[k, k] = denom
        hess[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]

        k_used = k + 1
        res = abs(g[k + 1])
        history.append(min(res, history[-1]))
        if res <= target or h_new <= 1e-14 * norm_b:  # converged / happy breakdown
            break
        v.append(w / h_new)

    y = np.linalg.solve(hess[:k_used, :k_used], g[:k_used]) if k_used else np.zeros(0)
    if flexible:
        x = np.zeros(n)
        for j in range(k_used):
            x += y[j] * z[j]
    else:
        zc = np.zeros(n)
        for j in range(k_used):
            zc += y[j] * v[j]
        x = precond.apply(zc)
    res = float(np.linalg.norm(b - op.apply(x)))
    converged = res <= max(target, 1e-12 * max(1.0, norm_b))
    return GmresResult(x, res, k_used, converged, history)
