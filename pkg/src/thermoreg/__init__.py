"""Topology optimization of contact-aided thermo-mechanical regulators.

Plane-strain finite-deformation thermoelasticity with a soft third-medium
contact material whose conductivity blows up under compression, giving a
design-driven thermal contact mechanism. Designs (switches, diodes, triodes)
are found by density-based topology optimization with adjoint sensitivities
and a method-of-moving-asymptotes update.
"""

__version__ = "0.1.0"

from .mesh import MeshGrid, FESpace, QuadratureRule, build_structured_mesh, quadrature, shape_eval

__all__ = [
    "MeshGrid", "FESpace", "QuadratureRule",
    "build_structured_mesh", "quadrature", "shape_eval",
    "__version__",
]
