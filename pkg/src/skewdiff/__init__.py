"""Numerical toolkit for one-dimensional diffusion across discontinuous-coefficient interfaces.

Closed-form transition densities, exact and approximate path samplers,
path-functional estimators (first passage, occupation and local times),
an interface-aware finite-difference solver, Taylor-Aris homogenization
for layered media, and diffusion on river-network trees.
"""

__version__ = "0.1.0"

from .media import (
    InterfaceMedium,
    MultiMedium,
    ScaleSpeed,
    alpha_of_gamma,
    alpha_of_lambda,
    conservative_lambda,
    lambda_of_gamma,
    local_time_gamma,
    scale_map,
    scale_map_inverse,
    speed_scale,
)

__all__ = [
    "__version__",
    "InterfaceMedium",
    "MultiMedium",
    "ScaleSpeed",
    "alpha_of_lambda",
    "conservative_lambda",
    "alpha_of_gamma",
    "lambda_of_gamma",
    "local_time_gamma",
    "scale_map",
    "scale_map_inverse",
    "speed_scale",
]
