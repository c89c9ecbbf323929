"""Total-variation optimal control of elliptic PDEs.

Solves tracking-type control problems whose control cost is the BV
seminorm, by smoothing the seminorm, adding a vanishing H1 proximal term,
and following the resulting solution path with an inexact Newton method.
"""

from .fem import FULL, INTERIOR, FeFunction, SmoothingParams
from .kernels import BACKEND
from .mesh import TriMesh, make_annulus_mesh, make_square_mesh, refine_uniform
from .path_following import PathConfig, PathResult, run_path
from .problems import ProblemSpec, example1, example2, get_problem

__all__ = [
    "BACKEND",
    "FULL",
    "INTERIOR",
    "FeFunction",
    "PathConfig",
    "PathResult",
    "ProblemSpec",
    "SmoothingParams",
    "TriMesh",
    "example1",
    "example2",
    "get_problem",
    "make_annulus_mesh",
    "make_square_mesh",
    "refine_uniform",
    "run_path",
]

__version__ = "0.1.0"
