"""Reparametrization of curves and surfaces by compositions of elementary diffeomorphisms."""
from .bounds import ck_norm, bound_ratio_experiment, lipschitz_product_check, scale_to_hypothesis, schroeder
from .diffeo import Basis1D, Basis2D, DiffeoLayer, DiffeoNet, FeasibleSpec, project_weights
from .errors import (
    DegenerateCurve,
    DegenerateSurface,
    GridMismatch,
    InfeasibleLayer,
    InvalidGrid,
    NearSingularDerivative,
    ParseError,
    ReparamError,
    StagnatedStep,
    VanishingCombination,
)
from .geometry import GrayImage, SampledCurve, SampledSurface, lift_image
from .optimize import GDConfig, LossProblem, bfgs_reparam, gd_reparam, loss, loss_and_grad, run_sweep
from .transforms import QMap, geodesic_curves, preshape_dist, qmap_curve, qmap_surface, srnf, srvt, srvt_inverse

__version__ = "0.1.0"

__all__ = [
    "Basis1D",
    "Basis2D",
    "DegenerateCurve",
    "DegenerateSurface",
    "DiffeoLayer",
    "DiffeoNet",
    "FeasibleSpec",
    "GDConfig",
    "GrayImage",
    "GridMismatch",
    "InfeasibleLayer",
    "InvalidGrid",
    "LossProblem",
    "NearSingularDerivative",
    "ParseError",
    "QMap",
    "ReparamError",
    "SampledCurve",
    "SampledSurface",
    "StagnatedStep",
    "VanishingCombination",
    "bfgs_reparam",
    "bound_ratio_experiment",
    "ck_norm",
    "gd_reparam",
    "geodesic_curves",
    "lift_image",
    "lipschitz_product_check",
    "loss",
    "loss_and_grad",
    "preshape_dist",
    "project_weights",
    "qmap_curve",
    "qmap_surface",
    "run_sweep",
    "scale_to_hypothesis",
    "schroeder",
    "srnf",
    "srvt",
    "srvt_inverse",
]
