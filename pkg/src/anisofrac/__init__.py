"""Anisotropic nonlocal operators: geometry, quadrature, solvers and regularity experiments."""

__version__ = "0.1.0"

from .aniso_geometry import Anisotropy, AnisoRect, Ball, Ellipsoid, aniso_norm, frak_C
from .kernels import KernelSpec, bathtub_infimum, translation_modulus
from .gridfunc import GridFunction
from .nonlocal_operator import EvaluableFunction, evaluate_L, operator_values, pucci
from .dirichlet_solver import assemble, solve, solve_dirichlet
from .abp_envelope import abp_rectangle_family, concave_envelope, cz_decompose
from .regularity_harness import (DecayReport, de_giorgi_iteration, gradient_holder_fit,
                                 growth_lemma_check, harnack_ratio, holder_fit, liouville_probe,
                                 point_estimate_decay)
from ._backend import BACKEND

__all__ = [
    "Anisotropy", "AnisoRect", "Ball", "Ellipsoid", "aniso_norm", "frak_C",
    "KernelSpec", "bathtub_infimum", "translation_modulus", "GridFunction",
    "EvaluableFunction", "evaluate_L", "operator_values", "pucci",
    "assemble", "solve", "solve_dirichlet",
    "abp_rectangle_family", "concave_envelope", "cz_decompose",
    "DecayReport", "de_giorgi_iteration", "gradient_holder_fit", "growth_lemma_check",
    "harnack_ratio", "holder_fit", "liouville_probe", "point_estimate_decay", "BACKEND",
]
