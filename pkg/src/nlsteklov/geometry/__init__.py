"""Domains, weights, meshes and boundary critical points."""
from .critical import CriticalPoint, CriticalPointReport, boundary_critical_points, tangential_derivative
from .curves import (BoundaryCurve, Circle, Ellipse, GeometryError, PeriodicSpline, StarShaped, Translated,
                     make_curve)
from .mesh import Mesh, SizeField, build_mesh
from .weight import WeightError, WeightField, constant, from_expression, linear_x1

__all__ = [
    "BoundaryCurve", "Circle", "Ellipse", "StarShaped", "PeriodicSpline", "Translated", "make_curve", "GeometryError",
    "WeightField", "WeightError", "constant", "linear_x1", "from_expression",
    "Mesh", "SizeField", "build_mesh",
    "CriticalPoint", "CriticalPointReport", "boundary_critical_points", "tangential_derivative",
]
