"""Pure-numpy implementations of the per-triangle assembly kernels.

These are the fallback for the compiled extension in ``_kernels.pyx``;
both expose the same four functions and must agree to rounding error.
"""

import numpy as np


def grad_on_triangles(coeffs, triangles, basis_gradients):
    """Per-triangle constant gradient of a P1 function, shape (n_t, 2)."""
    vals = coeffs[triangles]  # (n_t, 3)
    return np.einsum("tk,tkd->td", vals, basis_gradients)


def tv_gradient_scatter(gradu, basis_gradients, areas, triangles, gamma, beta, delta):
    """Assemble the gradient part of the smoothed-TV control residual.

    Returns the vector with entries sum_T |T| (gamma*gu + beta*gu/sqrt(delta+|gu|^2)) . grad(phi_i).
    """
    norm2 = (gradu**2).sum(axis=1)
    scale = gamma + beta / np.sqrt(delta + norm2)
    flux = scale[:, None] * gradu  # (n_t, 2)
    contrib = areas[:, None] * np.einsum("tkd,td->tk", basis_gradients, flux)
    out = np.zeros(int(triangles.max()) + 1)
    np.add.at(out, triangles, contrib)
    return out


def control_jacobian_values(gradu, basis_gradients, areas, gamma, beta, delta):
    """Per-triangle 3x3 element matrices of the control-equation Jacobian.

    Element (k, l) is |T| * bg_k^T [gamma*I + f'(gu)] bg_l plus the gamma-weighted
    P1 mass element |T|/12 * (1 + [k == l]).
    """
    norm2 = (gradu**2).sum(axis=1)
    root = np.sqrt(delta + norm2)
    a = gamma + beta / root  # isotropic part
    b = -beta / root**3  # rank-one correction along gu

    # bg_k^T (a I + b gu gu^T) bg_l
    iso = np.einsum("tkd,tld->tkl", basis_gradients, basis_gradients)
    proj = np.einsum("tkd,td->tk", basis_gradients, gradu)
    vals = a[:, None, None] * iso + b[:, None, None] * proj[:, :, None] * proj[:, None, :]
    vals *= areas[:, None, None]

    mass = np.full((3, 3), 1.0 / 12.0)
    np.fill_diagonal(mass, 2.0 / 12.0)
    vals += gamma * areas[:, None, None] * mass[None]
    return vals


def psi_delta_sum(gradu, areas, delta):
    """Smoothed discrete TV seminorm: sum_T |T| sqrt(delta + |grad u|^2)."""
    return float(areas @ np.sqrt(delta + (gradu**2).sum(axis=1)))
