"""Adaptive vertex-centered finite volume solver for 2D diffusion problems.

The package implements the full SOLVE -> ESTIMATE -> MARK -> REFINE loop:
conforming triangle meshes with newest-vertex bisection, the box-method
discretization on a barycentric dual mesh, a weighted-residual error
estimator with data oscillations, and two-stage Doerfler marking.
"""

from afvm.mesh import Triangulation, build_triangulation
from afvm.refine import refine, refine_uniform
from afvm.dual import build_dual
from afvm.problems import (
    ProblemSpec,
    problem_square_smooth,
    problem_lshape_singular,
    problem_from_json,
)
from afvm.assemble import assemble_fvm, assemble_fem, solve_system, energy_error
from afvm.estimate import compute_estimator
from afvm.adaptive import run_adaptive, run_uniform, fit_rate

__all__ = [
    "Triangulation",
    "build_triangulation",
    "refine",
    "refine_uniform",
    "build_dual",
    "ProblemSpec",
    "problem_square_smooth",
    "problem_lshape_singular",
    "problem_from_json",
    "assemble_fvm",
    "assemble_fem",
    "solve_system",
    "energy_error",
    "compute_estimator",
    "run_adaptive",
    "run_uniform",
    "fit_rate",
]

__version__ = "0.1.0"
