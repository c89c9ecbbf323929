"""Element assembly, norms, the smoothed total-variation terms, and their
derivatives, checked against closed forms and finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvcontrol.fem import (
    FULL,
    INTERIOR,
    FeFunction,
    SmoothingParams,
    assemble_control_jacobian,
    assemble_control_residual,
    assemble_h1_matrix,
    assemble_load,
    assemble_mass,
    assemble_state_operator,
    assemble_stiffness,
    dual_norm,
    energy,
    eval_f,
    eval_fprime,
    h1_norm,
    integrate,
    l2_norm,
    lumped_mass,
    psi_delta_h,
    restrict,
)
from tvcontrol.mesh import make_square_mesh


@pytest.fixture
def mesh():
    return make_square_mesh(4)


def _rng(seed=0):
    return np.random.default_rng(seed)


# -- matrices ------------------------------------------------------------


def test_mass_matrix_total_sum_is_area(mesh):
    m = assemble_mass(mesh)
    assert abs(m.sum() - mesh.area) < 1e-12


def test_mass_matrix_integrates_linear_exactly(mesh):
    # u = 1 + x: u' M u = int (1+x)^2 over [-1,1]^2 = 2*8/3
    m = assemble_mass(mesh)
    u = 1.0 + mesh.vertices[:, 0]
    assert abs(u @ (m @ u) - 16.0 / 3.0) < 1e-12


def test_stiffness_kernel_contains_constants(mesh):
    a = assemble_stiffness(mesh)
    assert np.max(np.abs(a @ np.ones(mesh.n_vertices))) < 1e-12


def test_stiffness_dirichlet_energy_of_linear(mesh):
    # u = 2x - y has |grad u|^2 = 5, so u' A u = 5 * |Omega| = 20
    a = assemble_stiffness(mesh)
    u = 2.0 * mesh.vertices[:, 0] - mesh.vertices[:, 1]
    assert abs(u @ (a @ u) - 20.0) < 1e-12


def test_state_operator_is_interior_stiffness_block(mesh):
    a = assemble_state_operator(mesh)
    full = assemble_stiffness(mesh)
    idx = mesh.interior
    assert np.allclose(a.toarray(), full.toarray()[np.ix_(idx, idx)])


def test_h1_matrix_is_mass_plus_stiffness(mesh):
    h1 = assemble_h1_matrix(mesh)
    ref = assemble_mass(mesh) + assemble_stiffness(mesh)
    assert np.allclose(h1.toarray(), ref.toarray())


def test_lumped_mass_sums_to_area(mesh):
    d = lumped_mass(mesh)
    assert np.all(d > 0)
    assert abs(d.sum() - mesh.area) < 1e-12


# -- norms and integration -------------------------------------------------


def test_l2_norm_of_constant(mesh):
    c = 3.0 * np.ones(mesh.n_vertices)
    assert abs(l2_norm(mesh, c) - 3.0 * math.sqrt(mesh.area)) < 1e-10


def test_h1_norm_of_linear(mesh):
    # u = x: ||u||_H1^2 = int x^2 + int 1 = 4/3 + 4
    u = mesh.vertices[:, 0]
    assert abs(h1_norm(mesh, u) - math.sqrt(4.0 / 3.0 + 4.0)) < 1e-12


def test_dual_norm_matches_lumped_quadratic_form(mesh):
    r = _rng().standard_normal(mesh.interior.size)
    d = lumped_mass(mesh, INTERIOR)
    assert abs(dual_norm(mesh, r, INTERIOR) - math.sqrt(r @ (r / d))) < 1e-12


def test_integrate_polynomial(mesh):
    # degree-2 rule is exact for x*y + x^2
    val = integrate(mesh, lambda x, y: x * y + x**2)
    assert abs(val - 4.0 / 3.0) < 1e-12


def test_load_vector_sums_to_integral(mesh):
    g = lambda x, y: 1.0 + 0.5 * x
    load = assemble_load(mesh, g, FULL)
    assert abs(load.sum() - integrate(mesh, g)) < 1e-12


def test_restrict_picks_interior_entries(mesh):
    v = np.arange(mesh.n_vertices, dtype=float)
    assert np.array_equal(restrict(mesh, v), v[mesh.interior])


# -- pointwise flux -------------------------------------------------------


def test_flux_matches_closed_form():
    beta, delta = 0.7, 1e-3
    for v in (np.array([0.3, -1.2]), np.zeros(2), np.array([5.0, 2.0])):
        out = eval_f(v, delta, beta)
        expect = beta * v / math.sqrt(delta + v @ v)
        assert np.allclose(out, expect, atol=1e-14)
        assert np.linalg.norm(out) < beta


def test_flux_derivative_is_symmetric_psd_and_matches_fd():
    rng = _rng(1)
    beta, delta = 0.9, 1e-2
    eps = 1e-7
    for _ in range(8):
        v = rng.standard_normal(2)
        dv = eval_fprime(v, delta, beta)
        assert np.allclose(dv, dv.T, atol=1e-14)
        assert np.min(np.linalg.eigvalsh(dv)) > 0
        for k in range(2):
            e = np.zeros(2)
            e[k] = eps
            fd = (eval_f(v + e, delta, beta) - eval_f(v - e, delta, beta)) / (2 * eps)
            assert np.allclose(dv[:, k], fd, atol=1e-6)


# -- smoothed total variation ---------------------------------------------


def test_psi_of_constant_is_sqrt_delta_times_area(mesh):
    u = FeFunction(FULL, 2.0 * np.ones(mesh.n_vertices), mesh)
    delta = 0.25
    assert abs(psi_delta_h(u, delta) - math.sqrt(delta) * mesh.area) < 1e-12


def test_psi_of_linear(mesh):
    # u = 3x: |grad u| = 3 per triangle
    u = FeFunction(FULL, 3.0 * mesh.vertices[:, 0], mesh)
    delta = 0.5
    assert abs(psi_delta_h(u, delta) - math.sqrt(delta + 9.0) * mesh.area) < 1e-12


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    delta=st.floats(min_value=1e-10, max_value=1.0),
)
def test_psi_smoothing_bound_chain(seed, delta):
    mesh = make_square_mesh(4)
    u = FeFunction(FULL, _rng(seed).standard_normal(mesh.n_vertices), mesh)
    tv = psi_delta_h(u, 0.0)
    smoothed = psi_delta_h(u, delta)
    assert tv <= smoothed + 1e-12
    assert smoothed <= tv + math.sqrt(delta) * mesh.area + 1e-12


# -- energy, gradient, Hessian ---------------------------------------------


def _random_setup(mesh, seed=3):
    rng = _rng(seed)
    params = SmoothingParams(gamma=0.3, delta=1e-2, beta=0.8)
    u = FeFunction(FULL, rng.standard_normal(mesh.n_vertices), mesh)
    p = FeFunction(FULL, rng.standard_normal(mesh.n_vertices), mesh)
    return params, u, p


def test_control_residual_is_energy_gradient(mesh):
    params, u, p = _random_setup(mesh)
    grad = assemble_control_residual(u, p, params)
    rng = _rng(4)
    eps = 1e-6
    for _ in range(5):
        d = rng.standard_normal(mesh.n_vertices)
        ep = energy(FeFunction(FULL, u.coeffs + eps * d, mesh), p, params)
        em = energy(FeFunction(FULL, u.coeffs - eps * d, mesh), p, params)
        assert abs((ep - em) / (2 * eps) - grad @ d) < 1e-7 * max(1.0, abs(grad @ d))


def test_control_jacobian_is_residual_derivative(mesh):
    params, u, p = _random_setup(mesh, seed=5)
    jac = assemble_control_jacobian(u, params)
    rng = _rng(6)
    eps = 1e-6
    for _ in range(5):
        d = rng.standard_normal(mesh.n_vertices)
        rp = assemble_control_residual(FeFunction(FULL, u.coeffs + eps * d, mesh), p, params)
        rm = assemble_control_residual(FeFunction(FULL, u.coeffs - eps * d, mesh), p, params)
        fd = (rp - rm) / (2 * eps)
        assert np.max(np.abs(jac @ d - fd)) < 1e-6


def test_control_jacobian_spd(mesh):
    params, u, _ = _random_setup(mesh, seed=7)
    jac = assemble_control_jacobian(u, params).toarray()
    assert np.allclose(jac, jac.T, atol=1e-13)
    assert np.min(np.linalg.eigvalsh(jac)) > 0
