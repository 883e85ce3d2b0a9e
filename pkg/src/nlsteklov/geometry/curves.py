"""Closed planar boundary curves parametrized on [0, 1).

All curves are counter-clockwise, so the outward unit normal is the tangent
rotated by -90 degrees.
"""
from __future__ import annotations

import numpy as np
from matplotlib.path import Path
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar


class GeometryError(ValueError):
    pass


class BoundaryCurve:
    """Base class. Subclasses implement ``point`` and ``d1`` (and ``d2`` if cheap)."""

    #: center of full rotational symmetry, if the curve has one
    symmetry_center: tuple[float, float] | None = None

    def point(self, t):
        raise NotImplementedError

    def d1(self, t):
        raise NotImplementedError

    def d2(self, t, eps=1e-5):
        t = np.asarray(t, dtype=float)
        return (self.d1(t + eps) - self.d1(t - eps)) / (2 * eps)

    def speed(self, t):
        return np.linalg.norm(self.d1(t), axis=-1)

    def tangent(self, t):
        d = self.d1(t)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def normal(self, t):
        tau = self.tangent(t)
        return np.stack([tau[..., 1], -tau[..., 0]], axis=-1)

    def curvature(self, t):
        d1, d2 = self.d1(t), self.d2(t)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / np.linalg.norm(d1, axis=-1) ** 3

    # -- derived helpers -------------------------------------------------

    def sample(self, n=2048):
        t = np.arange(n) / n
        return t, self.point(t)

    def length(self, n=8192):
        t = (np.arange(n) + 0.5) / n
        return float(np.mean(self.speed(t)))

    def polygon(self, n=4096):
        return Path(self.point(np.arange(n) / n), closed=False)

    def contains(self, points, n=4096, radius=0.0):
        """Inside test against a dense polygonal approximation."""
        pts = np.atleast_2d(points)
        return self.polygon(n).contains_points(pts, radius=radius)

    def project(self, p, n=4096):
        """Parameter of the curve point nearest to ``p`` and the distance."""
        p = np.asarray(p, dtype=float)
        t, pts = self.sample(n)
        i = int(np.argmin(np.sum((pts - p) ** 2, axis=1)))
        lo, hi = (i - 1) / n, (i + 1) / n
        res = minimize_scalar(
            lambda s: float(np.sum((self.point(s) - p) ** 2)),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-14},
        )
        return float(res.x % 1.0), float(np.sqrt(res.fun))

    def check(self, n=2048, tol=1e-12):
        """Verify closedness, regularity and simplicity on a dense sample."""
        gap = np.linalg.norm(self.point(0.0) - self.point(1.0 - 1e-12))
        if gap > 1e-8:
            raise GeometryError(f"curve not closed (gap {gap:.3e})")
        t = np.arange(n) / n
        sp = self.speed(t)
        if sp.min() <= tol * max(sp.max(), 1.0):
            raise GeometryError("degenerate parametrization: |gamma'| vanishes")
        if _self_intersects(self.point(t)):
            raise GeometryError("curve self-intersects")
        return True

    def extent(self, n=4096):
        pts = self.sample(n)[1]
        return pts.min(axis=0), pts.max(axis=0)


def _self_intersects(pts):
    """Brute-force segment intersection test on a closed polyline (vectorized per row)."""
    n = len(pts)
    a = pts
    b = np.roll(pts, -1, axis=0)
    for i in range(n):
        # skip neighbours sharing an endpoint
        j = np.arange(i + 2, n if i > 0 else n - 1)
        if j.size == 0:
            continue
        p, r = a[i], b[i] - a[i]
        q, s = a[j], b[j] - a[j]
        rxs = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = q - p
        ok = np.abs(rxs) > 1e-300
        tt = np.where(ok, (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / np.where(ok, rxs, 1), -1)
        uu = np.where(ok, (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / np.where(ok, rxs, 1), -1)
        if np.any(ok & (tt > 0) & (tt < 1) & (uu > 0) & (uu < 1)):
            return True
    return False


class Circle(BoundaryCurve):
    def __init__(self, center=(0.0, 0.0), radius=1.0, phase=0.0):
        if radius <= 0:
            raise GeometryError("radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.phase = float(phase)
        self.symmetry_center = (float(self.center[0]), float(self.center[1]))

    def angle(self, t):
        return 2 * np.pi * (np.asarray(t, dtype=float) + self.phase)

    def param_of_angle(self, theta):
        return (np.asarray(theta) / (2 * np.pi) - self.phase) % 1.0

    def point(self, t):
        th = self.angle(t)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def d1(self, t):
        th = self.angle(t)
        return 2 * np.pi * self.radius * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def d2(self, t):
        th = self.angle(t)
        return -(2 * np.pi) ** 2 * self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def project(self, p, n=None):
        d = np.asarray(p, dtype=float) - self.center
        th = np.arctan2(d[1], d[0])
        return float(self.param_of_angle(th)), abs(float(np.hypot(*d)) - self.radius)

    def contains(self, points, n=None, radius=0.0):
        d = np.atleast_2d(points) - self.center
        return np.hypot(d[:, 0], d[:, 1]) < self.radius + radius

    def __repr__(self):
        return f"Circle(center={tuple(self.center)}, radius={self.radius}, phase={self.phase})"


class Ellipse(BoundaryCurve):
    def __init__(self, center=(0.0, 0.0), ax=1.0, ay=0.5, phase=0.0):
        if ax <= 0 or ay <= 0:
            raise GeometryError("semi-axes must be positive")
        self.center = np.asarray(center, dtype=float)
        self.ax, self.ay, self.phase = float(ax), float(ay), float(phase)

    def point(self, t):
        th = 2 * np.pi * (np.asarray(t, dtype=float) + self.phase)
        return self.center + np.stack([self.ax * np.cos(th), self.ay * np.sin(th)], axis=-1)

    def d1(self, t):
        th = 2 * np.pi * (np.asarray(t, dtype=float) + self.phase)
        return 2 * np.pi * np.stack([-self.ax * np.sin(th), self.ay * np.cos(th)], axis=-1)

    def d2(self, t):
        th = 2 * np.pi * (np.asarray(t, dtype=float) + self.phase)
        return -(2 * np.pi) ** 2 * np.stack([self.ax * np.cos(th), self.ay * np.sin(th)], axis=-1)

    def __repr__(self):
        return f"Ellipse(center={tuple(self.center)}, ax={self.ax}, ay={self.ay})"


class StarShaped(BoundaryCurve):
    """r(theta) = r0 * (1 + sum_k amp_k cos(k theta)) around ``center``."""

    def __init__(self, center=(0.0, 0.0), r0=1.0, modes=((3, 0.1),), phase=0.0):
        self.center = np.asarray(center, dtype=float)
        self.r0 = float(r0)
        self.modes = tuple((int(k), float(c)) for k, c in modes)
        self.phase = float(phase)
        if sum(abs(c) for _, c in self.modes) >= 1:
            raise GeometryError("mode amplitudes must sum to < 1 for a star-shaped curve")

    def _r(self, th):
        r = np.ones_like(th)
        dr = np.zeros_like(th)
        d2r = np.zeros_like(th)
        for k, c in self.modes:
            r = r + c * np.cos(k * th)
            dr = dr - c * k * np.sin(k * th)
            d2r = d2r - c * k * k * np.cos(k * th)
        return self.r0 * r, self.r0 * dr, self.r0 * d2r

    def point(self, t):
        th = 2 * np.pi * (np.asarray(t, dtype=float) + self.phase)
        r, _, _ = self._r(th)
        return self.center + np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def d1(self, t):
        th = 2 * np.pi * (np.asarray(t, dtype=float) + self.phase)
        r, dr, _ = self._r(th)
        c, s = np.cos(th), np.sin(th)
        return 2 * np.pi * np.stack([dr * c - r * s, dr * s + r * c], axis=-1)

    def d2(self, t):
        th = 2 * np.pi * (np.asarray(t, dtype=float) + self.phase)
        r, dr, d2r = self._r(th)
        c, s = np.cos(th), np.sin(th)
        x = d2r * c - 2 * dr * s - r * c
        y = d2r * s + 2 * dr * c - r * s
        return (2 * np.pi) ** 2 * np.stack([x, y], axis=-1)


class PeriodicSpline(BoundaryCurve):
    """Periodic cubic spline through user points (chord-length parametrized)."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise GeometryError("need at least 4 points of shape (n, 2)")
        if np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        area = 0.5 * np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
        if area < 0:
            pts = pts[::-1]
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        if np.any(seg <= 0):
            raise GeometryError("repeated consecutive points")
        s = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
        self._spl = CubicSpline(s, closed, bc_type="periodic")
        self._d1 = self._spl.derivative(1)
        self._d2 = self._spl.derivative(2)

    def point(self, t):
        return self._spl(np.asarray(t, dtype=float) % 1.0)

    def d1(self, t):
        return self._d1(np.asarray(t, dtype=float) % 1.0)

    def d2(self, t):
        return self._d2(np.asarray(t, dtype=float) % 1.0)

    @classmethod
    def from_file(cls, path):
        return cls(np.loadtxt(path, delimiter=None, ndmin=2)[:, :2])


class Translated(BoundaryCurve):
    """A curve rigidly shifted by ``offset``."""

    def __init__(self, base: BoundaryCurve, offset):
        self.base = base
        self.offset = np.asarray(offset, dtype=float)
        if base.symmetry_center is not None:
            self.symmetry_center = tuple(float(v) for v in np.asarray(base.symmetry_center) + self.offset)

    def point(self, t):
        return self.base.point(t) + self.offset

    def d1(self, t):
        return self.base.d1(t)

    def d2(self, t):
        return self.base.d2(t)

    def project(self, p, n=4096):
        return self.base.project(np.asarray(p, dtype=float) - self.offset)

    def contains(self, points, n=4096, radius=0.0):
        return self.base.contains(np.atleast_2d(points) - self.offset, n, radius)


def make_curve(name: str, **params) -> BoundaryCurve:
    """Factory for the built-in curve names used by configs and the CLI."""
    name = name.lower()
    if name in ("circle", "disk"):
        return Circle(center=params.get("center", (0.0, 0.0)), radius=params.get("radius", 1.0),
                      phase=params.get("phase", 0.0))
    if name == "ellipse":
        return Ellipse(center=params.get("center", (0.0, 0.0)), ax=params.get("ax", 1.0),
                       ay=params.get("ay", 0.5))
    if name == "star":
        return StarShaped(center=params.get("center", (0.0, 0.0)), r0=params.get("r0", 1.0),
                          modes=params.get("modes", ((3, 0.1),)))
    if name == "spline":
        return PeriodicSpline.from_file(params["file"])
    raise GeometryError(f"unknown curve {name!r}")
