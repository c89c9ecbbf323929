# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-triangle assembly kernels (hot loop of every control solve).

Mirrors ``_kernels_py`` exactly; see that module for the contracts.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def grad_on_triangles(double[::1] coeffs, long[:, ::1] triangles,
                      double[:, :, ::1] basis_gradients):
    cdef Py_ssize_t n_t = triangles.shape[0]
    cdef Py_ssize_t t, k
    out_arr = np.empty((n_t, 2))
    cdef double[:, ::1] out = out_arr
    cdef double gx, gy, c
    for t in range(n_t):
        gx = 0.0
        gy = 0.0
        for k in range(3):
            c = coeffs[triangles[t, k]]
            gx += c * basis_gradients[t, k, 0]
            gy += c * basis_gradients[t, k, 1]
        out[t, 0] = gx
        out[t, 1] = gy
    return out_arr


def tv_gradient_scatter(double[:, ::1] gradu, double[:, :, ::1] basis_gradients,
                        double[::1] areas, long[:, ::1] triangles,
                        double gamma, double beta, double delta):
    cdef Py_ssize_t n_t = triangles.shape[0]
    cdef Py_ssize_t n_v = 0
    cdef Py_ssize_t t, k
    for t in range(n_t):
        for k in range(3):
            if triangles[t, k] + 1 > n_v:
                n_v = triangles[t, k] + 1
    out_arr = np.zeros(n_v)
    cdef double[::1] out = out_arr
    cdef double gx, gy, scale, fx, fy, a
    for t in range(n_t):
        gx = gradu[t, 0]
        gy = gradu[t, 1]
        scale = gamma + beta / sqrt(delta + gx * gx + gy * gy)
        fx = scale * gx
        fy = scale * gy
        a = areas[t]
        for k in range(3):
            out[triangles[t, k]] += a * (
                basis_gradients[t, k, 0] * fx + basis_gradients[t, k, 1] * fy
            )
    return out_arr


def control_jacobian_values(double[:, ::1] gradu, double[:, :, ::1] basis_gradients,
                            double[::1] areas, double gamma, double beta,
                            double delta):
    cdef Py_ssize_t n_t = gradu.shape[0]
    out_arr = np.empty((n_t, 3, 3))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t t, k, l
    cdef double gx, gy, root, a, b, area, pk, pl, iso, m
    for t in range(n_t):
        gx = gradu[t, 0]
        gy = gradu[t, 1]
        root = sqrt(delta + gx * gx + gy * gy)
        a = gamma + beta / root
        b = -beta / (root * root * root)
        area = areas[t]
        for k in range(3):
            pk = basis_gradients[t, k, 0] * gx + basis_gradients[t, k, 1] * gy
            for l in range(3):
                pl = basis_gradients[t, l, 0] * gx + basis_gradients[t, l, 1] * gy
                iso = (basis_gradients[t, k, 0] * basis_gradients[t, l, 0]
                       + basis_gradients[t, k, 1] * basis_gradients[t, l, 1])
                m = 2.0 / 12.0 if k == l else 1.0 / 12.0
                out[t, k, l] = area * (a * iso + b * pk * pl + gamma * m)
    return out_arr


def psi_delta_sum(double[:, ::1] gradu, double[::1] areas, double delta):
    cdef Py_ssize_t n_t = gradu.shape[0]
    cdef Py_ssize_t t
    cdef double acc = 0.0
    for t in range(n_t):
        acc += areas[t] * sqrt(delta + gradu[t, 0] * gradu[t, 0]
                               + gradu[t, 1] * gradu[t, 1])
    return acc
