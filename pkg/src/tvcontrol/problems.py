"""Benchmark problem definitions.

Two instances are provided: an annulus problem with a known closed-form
solution (used for error studies) and a square problem whose target is the
indicator of an inner square (optionally rotated).  Both use the pure
Laplacian as governing operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import sici

from .mesh import TriMesh, make_annulus_mesh, make_square_mesh


def cosine_integral(t: float) -> float:
    """Cosine integral Ci(t) for t > 0."""
    if t <= 0:
        raise ValueError("t must be positive")
    return float(sici(t)[1])


@dataclass
class ExactSolution:
    """Closed-form optimal triple and the optimal objective value.

    ``u``, ``y``, ``p`` map coordinate arrays (x, y) to values; the two
    gradient callbacks return arrays shaped (..., 2).
    """

    u: Callable
    y: Callable
    p: Callable
    grad_y: Callable
    grad_p: Callable
    optimal_value: float


@dataclass
class ProblemSpec:
    """A control-problem instance: target data, TV weight, domain builder,
    and default continuation parameters."""

    name: str
    beta: float
    y_omega: Callable
    gamma0: float
    delta0: float
    mesh_factory: Callable[..., TriMesh]
    exact: Optional[ExactSolution] = None
    # default per-stage budget of implicit-control Newton steps before the
    # continuation factor is pushed up; problems whose control subproblem is
    # intrinsically more expensive per stage get a larger budget so the
    # factor adaptation compares against the right baseline
    m_budget: int = 30

    def __post_init__(self):
        if self.beta <= 0 or self.gamma0 <= 0 or self.delta0 <= 0:
            raise ValueError("beta, gamma0, delta0 must be positive")


def _radial(fn):
    """Lift a function of r to a field over (x, y) arrays."""

    def field(x, y):
        return fn(np.hypot(x, y))

    return field


def _radial_grad(dfn):
    """Gradient of a radial function: f'(r) * (x, y)/r."""

    def grad(x, y):
        r = np.hypot(x, y)
        scale = dfn(r) / r
        return np.stack([scale * x, scale * y], axis=-1)

    return grad


def example1(beta: float = 1e-3, inner_radius: float = 2 * math.pi) -> ProblemSpec:
    """Annulus benchmark with known optimal triple.

    The domain is the annulus R < r < 2R.  The optimal control is the
    indicator of the inner half-ring R < r < 3R/2; state and adjoint are
    radial closed forms.  The target is constructed so that this triple is
    optimal: y_omega equals the Laplacian of the adjoint plus the state.
    """
    R = inner_radius
    omega = 2 * math.pi / R

    # adjoint envelope h(r) = (beta/2)(cos(omega r) - 1) and derivatives
    def h0(r):
        return 0.5 * beta * (np.cos(omega * r) - 1.0)

    def h1(r):
        return -0.5 * beta * omega * np.sin(omega * r)

    def h2(r):
        return -0.5 * beta * omega**2 * np.cos(omega * r)

    def h3(r):
        return 0.5 * beta * omega**3 * np.sin(omega * r)

    def p_of_r(r):
        return h1(r) + h0(r) / r

    def dp_of_r(r):
        return h2(r) + h1(r) / r - h0(r) / r**2

    def lap_p_of_r(r):
        # radial Laplacian of p = h' + h/r, in closed form
        return h3(r) + 2.0 * h2(r) / r - h1(r) / r**2 + h0(r) / r**3

    # state: piecewise radial solution of -lap y = 1_{(R, 3R/2)}, y = 0 on
    # both circles, with matching value and flux at 3R/2
    A = R**2 * (5.0 / 16.0 - 9.0 / 8.0 * math.log(0.75)) / math.log(2.0)
    B = R**2 / 4.0 + A * math.log(2.0)
    C = A - 9.0 / 8.0 * R**2
    mid = 1.5 * R

    def y_of_r(r):
        r = np.asarray(r, dtype=float)
        lnr = np.log(r / (2.0 * R))
        inner = -0.25 * r**2 + A * lnr + B
        outer = C * lnr
        return np.where(r <= mid, inner, outer)

    def dy_of_r(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= mid, -0.5 * r + A / r, C / r)

    def u_of_r(r):
        r = np.asarray(r, dtype=float)
        return np.where((r > R) & (r < mid), 1.0, 0.0)

    def y_omega_of_r(r):
        return lap_p_of_r(r) + y_of_r(r)

    def mesh_factory(n_rings: int = 14, n_sectors: int = 112) -> TriMesh:
        return make_annulus_mesh(R, 2.0 * R, n_rings, n_sectors)

    exact = ExactSolution(
        u=_radial(u_of_r),
        y=_radial(y_of_r),
        p=_radial(p_of_r),
        grad_y=_radial_grad(dy_of_r),
        grad_p=_radial_grad(dp_of_r),
        optimal_value=example1_optimal_value(beta),
    )
    return ProblemSpec(
        name="example1",
        beta=beta,
        y_omega=_radial(y_omega_of_r),
        gamma0=1.0,
        delta0=1e-2,
        mesh_factory=mesh_factory,
        exact=exact,
    )


def example1_optimal_value(beta: float) -> float:
    """Optimal objective of the annulus benchmark, in closed form.

    Quadratic in the TV weight: the tracking term is beta^2 times a fixed
    constant involving cosine-integral values, and the TV term equals
    6 pi^2 beta: the control jumps by one across the circle r = 3R/2, the
    only discontinuity interior to the domain, whose perimeter is 6 pi^2.
    """
    pi = math.pi
    const = (pi / 4.0) * (
        3.0 * pi**2
        + math.log(8.0)
        + 3.75 * cosine_integral(2 * pi)
        - 6.75 * cosine_integral(4 * pi)
        + 3.0 * cosine_integral(8 * pi)
    )
    return const * beta**2 + 6.0 * pi**2 * beta


def example2(beta: float = 1e-4, rotation: float = 0.0) -> ProblemSpec:
    """Square benchmark: track the indicator of an inner square.

    The domain is (-1, 1)^2 and the target is 1 on the centered square of
    half-width 1/2, rotated by ``rotation`` radians, and 0 elsewhere.  No
    closed-form solution is known.
    """
    c, s = math.cos(rotation), math.sin(rotation)

    def y_omega(x, y):
        xr = c * x + s * y
        yr = -s * x + c * y
        return np.where((np.abs(xr) < 0.5) & (np.abs(yr) < 0.5), 1.0, 0.0)

    def mesh_factory(n: int = 32) -> TriMesh:
        return make_square_mesh(n)

    return ProblemSpec(
        name="example2",
        beta=beta,
        y_omega=y_omega,
        gamma0=1e-2,
        delta0=1.0,
        mesh_factory=mesh_factory,
        exact=None,
    )


def get_problem(name: str, beta: Optional[float] = None, **kwargs) -> ProblemSpec:
    """Look up a benchmark by name, optionally overriding the TV weight."""
    if name == "example1":
        return example1(beta=beta if beta is not None else 1e-3, **kwargs)
    if name == "example2":
        return example2(beta=beta if beta is not None else 1e-4, **kwargs)
    raise ValueError(f"unknown problem {name!r}; expected 'example1' or 'example2'")
