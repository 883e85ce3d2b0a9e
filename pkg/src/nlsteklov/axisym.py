"""Axisymmetric torus-like bodies.

A cross-section curve in the half-plane x1 > 0 rotated about the x3 axis
bounds a solid torus D. A function u(x1, x2) with div(x1 grad u) = 0 on the
cross-section lifts to the harmonic function U(y) = u(sqrt(y1^2 + y2^2), y3)
on D, and boundary points of the cross-section lift to circles on the
boundary of D (orbits of the rotation, which are geodesics of the surface).
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import Field
from .geometry import GeometryError, WeightField, boundary_critical_points, linear_x1


@dataclass
class TorusDomain:
    cross: object              # BoundaryCurve in the (x1, x2) half-plane
    samples: int = 4096

    def __post_init__(self):
        self.cross.check()
        x = self.cross.point(np.linspace(0.0, 1.0, self.samples, endpoint=False))
        self._r_range = (float(x[:, 0].min()), float(x[:, 0].max()))
        self._z_range = (float(x[:, 1].min()), float(x[:, 1].max()))
        if self._r_range[0] <= 0:
            raise GeometryError(f"cross-section reaches x1 = {self._r_range[0]:.3g}; it must stay in x1 > 0")

    @property
    def r_range(self):
        return self._r_range

    @property
    def z_range(self):
        return self._z_range

    def to_cross(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.column_stack([np.hypot(y[:, 0], y[:, 1]), y[:, 2]])

    def contains(self, y):
        return self.cross.contains(self.to_cross(y))

    def bounding_box(self, pad=0.0):
        r1 = self._r_range[1] + pad
        return np.array([-r1, -r1, self._z_range[0] - pad]), np.array([r1, r1, self._z_range[1] + pad])

    def describe(self):
        return {"cross_section": repr(self.cross), "x1_range": list(self._r_range),
                "x2_range": list(self._z_range)}


def torus_problem(cross: TorusDomain):
    """Weight a = x1 on the cross-section with its bounds (a0, a1)."""
    if not isinstance(cross, TorusDomain):
        cross = TorusDomain(cross)
    a0, a1 = cross.r_range
    a = linear_x1()
    a = WeightField(a._f, a._g, a0, a1, "x1")
    return a, (a0, a1)


def predicted_points(cross: TorusDomain):
    """C1-stable critical points of x1 on the cross-section boundary."""
    a, _ = torus_problem(cross)
    return [p.xi for p in boundary_critical_points(a, cross.cross)]


@dataclass
class Geodesic:
    radius: float
    height: float
    sign: int = 0

    def points(self, n=64):
        th = 2 * np.pi * np.arange(n) / n
        return np.column_stack([self.radius * np.cos(th), self.radius * np.sin(th), np.full(n, self.height)])

    def as_dict(self):
        return {"radius": self.radius, "height": self.height, "sign": self.sign}


def geodesics(points, signs=None):
    signs = [0] * len(points) if signs is None else list(signs)
    return [Geodesic(float(p[0]), float(p[1]), int(s)) for p, s in zip(points, signs)]


@dataclass
class CartesianGrid:
    """Uniform grid lo + step * (i, j, k), i < shape[0] etc."""
    lo: np.ndarray
    step: float
    shape: tuple

    @classmethod
    def covering(cls, lo, hi, step):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        shape = tuple(int(np.floor((h - l) / step + 1e-9)) + 1 for l, h in zip(lo, hi))
        return cls(lo, float(step), shape)

    def axes(self):
        return [self.lo[d] + self.step * np.arange(self.shape[d]) for d in range(3)]

    def points(self):
        y1, y2, y3 = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([y1, y2, y3], axis=-1)


@dataclass
class Lift:
    grid: CartesianGrid
    values: np.ndarray          # shape grid.shape, nan outside the body
    geodesics: list = field(default_factory=list)
    in_mesh: np.ndarray | None = None   # inside the polygonal mesh, not only the curve

    def laplacian(self):
        """7-point Laplacian at grid points whose whole stencil lies inside the
        polygonal mesh (nan elsewhere); the thin sliver between the polygon and
        the curve only carries clamped values."""
        v, g = self.values, self.grid.step
        if self.in_mesh is not None:
            v = np.where(self.in_mesh, v, np.nan)
        out = np.full(v.shape, np.nan)
        c = v[1:-1, 1:-1, 1:-1]
        s = (v[2:, 1:-1, 1:-1] + v[:-2, 1:-1, 1:-1] + v[1:-1, 2:, 1:-1] + v[1:-1, :-2, 1:-1]
             + v[1:-1, 1:-1, 2:] + v[1:-1, 1:-1, :-2] - 6 * c)
        out[1:-1, 1:-1, 1:-1] = s / g ** 2
        return out

    def residual(self, exclude=0.0, points=None):
        """max |7-point Laplacian| over stencils inside the body and at distance
        >= ``exclude`` from every concentration circle (or from ``points``, given in
        cross-section coordinates). Returns (max, number of stencils used)."""
        lap = self.laplacian()
        ok = np.isfinite(lap)
        pts = points if points is not None else [(c.radius, c.height) for c in self.geodesics]
        if exclude > 0 and len(pts):
            y = self.grid.points()
            rz = np.stack([np.hypot(y[..., 0], y[..., 1]), y[..., 2]], axis=-1)
            for p in pts:
                ok &= np.linalg.norm(rz - np.asarray(p, dtype=float), axis=-1) >= exclude
        if not ok.any():
            return float("nan"), 0
        return float(np.abs(lap[ok]).max()), int(ok.sum())

    def to_csv(self, path):
        y = self.grid.points().reshape(-1, 3)
        v = self.values.reshape(-1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y1", "y2", "y3", "value"])
            for p, val in zip(y, v):
                if np.isfinite(val):
                    w.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", f"{p[2]:.17g}", f"{val:.17g}"])


def lift_to_3d(u: Field, grid: CartesianGrid, *, domain: TorusDomain | None = None, concentration=(),
               signs=None, outside="error", threads=1) -> Lift:
    """Sample U(y) = u(sqrt(y1^2 + y2^2), y3) on ``grid``.

    Grid points outside the solid torus raise GeometryError, or are stored as
    nan with ``outside="nan"``. ``concentration`` lists cross-section points
    whose orbits are reported as geodesics. Sampling runs over y3 slabs on
    ``threads`` workers; the result does not depend on the worker count.
    """
    if outside not in ("error", "nan"):
        raise ValueError("outside must be 'error' or 'nan'")
    if domain is None:
        domain = TorusDomain(u.mesh.curve)
    pts = grid.points()

    def slab(k):
        y = pts[:, :, k].reshape(-1, 3)
        rz = domain.to_cross(y)
        inside = domain.cross.contains(rz)
        vals = np.full(len(y), np.nan)
        if inside.any():
            vals[inside] = u(rz[inside])
        in_mesh = inside & (np.asarray(u.mesh._finder(rz[:, 0], rz[:, 1])) >= 0)
        return inside, vals.reshape(grid.shape[:2]), in_mesh.reshape(grid.shape[:2])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(slab, range(grid.shape[2])))
    else:
        parts = [slab(k) for k in range(grid.shape[2])]
    inside = np.stack([p[0].reshape(grid.shape[:2]) for p in parts], axis=-1)
    if outside == "error" and not inside.all():
        bad = pts[~inside][0]
        raise GeometryError(f"grid point {bad.tolist()} lies outside the torus shell")
    values = np.stack([p[1] for p in parts], axis=-1)
    in_mesh = np.stack([p[2] for p in parts], axis=-1)
    return Lift(grid, values, geodesics(concentration, signs), in_mesh)


def write_geodesics(path, geos, extra=None):
    doc = {"geodesics": [g.as_dict() for g in geos]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = ["TorusDomain", "torus_problem", "predicted_points", "Geodesic", "geodesics", "CartesianGrid",
           "Lift", "lift_to_3d", "write_geodesics"]
