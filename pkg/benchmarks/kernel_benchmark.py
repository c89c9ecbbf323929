"""Timing comparison of the compiled and pure-numpy assembly kernels.

Runs the three hot kernels (gradient evaluation, smoothed-TV residual
scatter, control-Jacobian element values) on a sequence of annulus meshes
and prints per-call times for both backends.

Usage: python benchmarks/kernel_benchmark.py [n_repeats]
"""

import sys
import time

import numpy as np

from tvcontrol import kernels
from tvcontrol import _kernels_py
from tvcontrol.mesh import make_annulus_mesh, refine_uniform

try:
    from tvcontrol import _kernels
except ImportError:
    _kernels = None


def time_backend(mod, mesh, u, repeats):
    tris = mesh.triangles
    bg = mesh.basis_gradients
    areas = mesh.areas
    gamma, beta, delta = 1e-3, 1e-3, 1e-5
    out = {}
    for name, fn in [
        ("grad", lambda: mod.grad_on_triangles(u, tris, bg)),
        (
            "residual",
            lambda: mod.tv_gradient_scatter(
                mod.grad_on_triangles(u, tris, bg), bg, areas, tris, gamma, beta, delta
            ),
        ),
        (
            "jacobian",
            lambda: mod.control_jacobian_values(
                mod.grad_on_triangles(u, tris, bg), bg, areas, gamma, beta, delta
            ),
        ),
    ]:
        fn()  # warm-up
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        out[name] = (time.perf_counter() - t0) / repeats
    return out


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 20
    rng = np.random.default_rng(0)
    mesh = make_annulus_mesh(2 * np.pi, 4 * np.pi, 14, 112)
    print(f"selected backend: {kernels.BACKEND}")
    for level in range(3):
        u = np.ascontiguousarray(rng.standard_normal(mesh.n_vertices))
        py = time_backend(_kernels_py, mesh, u, repeats)
        row = f"triangles={mesh.n_triangles:>7d}  "
        for name in ("grad", "residual", "jacobian"):
            row += f"{name}: py {py[name] * 1e3:7.3f} ms"
            if _kernels is not None:
                cy = time_backend(_kernels, mesh, u, repeats)
                row += f" / cy {cy[name] * 1e3:7.3f} ms (x{py[name] / cy[name]:.1f})"
            row += "   "
        print(row)
        mesh = refine_uniform(mesh)


if __name__ == "__main__":
    main()
