"""Finite-difference value surfaces and their diagnostics."""

from .checks import (check_growth, check_monotone_in_N, check_sandwich, check_shifted_upper_bound,
                     compare_coefficients)
from .gradient import (GradientDiagnostics, GradientParams, gradient_diagnostics, gradient_transform_params,
                       sobolev_norms, transform)
from .grid import Grid, build_grid, graded_knots
from .solver import (SCHEME_VERSION, SingularSolution, check_schedule, solve_singular, solve_truncated,
                     surface_gradient)
from .surface import ValueSurface

__all__ = [
    "Grid", "build_grid", "graded_knots",
    "SCHEME_VERSION", "SingularSolution", "check_schedule", "solve_singular", "solve_truncated",
    "surface_gradient", "ValueSurface",
    "check_growth", "check_monotone_in_N", "check_sandwich", "check_shifted_upper_bound",
    "compare_coefficients",
    "GradientDiagnostics", "GradientParams", "gradient_diagnostics", "gradient_transform_params",
    "sobolev_norms", "transform",
]
