"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set ``TVCONTROL_PURE_PYTHON=1`` to force the numpy fallback (used by the
kernel benchmark and by tests that compare the two backends).
"""

import os

from . import _kernels_py

if os.environ.get("TVCONTROL_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

grad_on_triangles = _impl.grad_on_triangles
tv_gradient_scatter = _impl.tv_gradient_scatter
control_jacobian_values = _impl.control_jacobian_values
psi_delta_sum = _impl.psi_delta_sum
