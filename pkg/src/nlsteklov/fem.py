"""P1 finite elements for div(a grad u) with boundary mass forms.

Interior integrals use the 3-point rule at (2/3, 1/6, 1/6); boundary
integrals use the trapezoid rule on each polygonal edge, so the boundary
mass matrices are diagonal.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Mesh, WeightField

log = logging.getLogger(__name__)

_QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


class AssemblyError(ValueError):
    pass


class CompatibilityError(ValueError):
    def __init__(self, defect, scale):
        self.defect = defect
        self.scale = scale
        super().__init__(f"incompatible Neumann data: |int a f| = {defect:.3e} (relative {defect / scale:.3e})")


@dataclass(eq=False)
class Field:
    """Nodal P1 coefficients on a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError(f"field has shape {self.values.shape}, mesh has {self.mesh.n_nodes} nodes")

    def trace(self):
        return self.values[self.mesh.boundary]

    def __call__(self, points):
        return self.mesh.interpolate(self.values, points)

    def at_boundary_params(self, t):
        """Periodic linear interpolation of the trace in the curve parameter."""
        bt = self.mesh.boundary_t
        order = np.argsort(bt)
        return np.interp(np.asarray(t) % 1.0, bt[order], self.trace()[order], period=1.0)

    def __neg__(self):
        return Field(self.mesh, -self.values)

    def __add__(self, other):
        return Field(self.mesh, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.mesh, self.values - _vals(other))

    def __mul__(self, c):
        return Field(self.mesh, self.values * c)

    __rmul__ = __mul__

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "value"])
            for i, v in enumerate(self.values):
                w.writerow([i, f"{v:.17g}"])

    @classmethod
    def from_csv(cls, mesh, path):
        vals = np.zeros(mesh.n_nodes)
        with open(path) as fh:
            r = csv.reader(fh)
            if next(r) != ["node_id", "value"]:
                raise ValueError(f"{path}: expected header node_id,value")
            for row in r:
                vals[int(row[0])] = float(row[1])
        return cls(mesh, vals)


def _vals(x):
    return x.values if isinstance(x, Field) else np.asarray(x, dtype=float)


def interpolate(mesh, func) -> Field:
    """Nodal interpolant of a callable on (n, 2) points."""
    return Field(mesh, np.asarray(func(mesh.nodes), dtype=float))


# ---------------------------------------------------------------------------
# assembly


def hat_gradients(mesh):
    """Constant gradients of the three hat functions on each triangle, shape (m, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / area2[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / area2[:, None]
    return np.stack([gx, gy], axis=-1)


def quadrature_points(mesh):
    """(m, 3, 2) interior quadrature points; each has weight area/3."""
    p = mesh.nodes[mesh.triangles]
    return np.einsum("qk,mkd->mqd", _QUAD_BARY, p)


def assemble_stiffness(mesh: Mesh, a: WeightField) -> sp.csr_matrix:
    """K_ij = int_Omega a grad(phi_i) . grad(phi_j)."""
    aq = a(quadrature_points(mesh))
    if not np.all(aq > 0):
        raise AssemblyError(f"nonpositive weight at a quadrature point (min {aq.min():.3e})")
    area = mesh.areas
    abar = aq.mean(axis=1) * area
    g = hat_gradients(mesh)
    local = abar[:, None, None] * np.einsum("mid,mjd->mij", g, g)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
    K.sum_duplicates()
    return K


@dataclass(eq=False)
class BoundaryMass:
    """Lumped (trapezoid) boundary mass matrices with and without the weight."""

    mesh: Mesh
    weighted: sp.csr_matrix
    unweighted: sp.csr_matrix

    @property
    def wa(self):
        return self.weighted.diagonal()

    @property
    def w1(self):
        return self.unweighted.diagonal()

    @property
    def total_a(self):
        return float(self.wa.sum())

    @property
    def perimeter(self):
        return float(self.w1.sum())

    def integrate(self, values, weighted=True):
        """Boundary integral of a nodal vector (interior entries ignored)."""
        w = self.wa if weighted else self.w1
        return float(w @ np.asarray(values, dtype=float))


def assemble_boundary_mass(mesh: Mesh, a: WeightField) -> BoundaryMass:
    e = mesh.boundary_edges
    L = mesh.boundary_edge_lengths()
    d1 = np.zeros(mesh.n_nodes)
    np.add.at(d1, e[:, 0], 0.5 * L)
    np.add.at(d1, e[:, 1], 0.5 * L)
    av = np.zeros(mesh.n_nodes)
    av[mesh.boundary] = a(mesh.nodes[mesh.boundary])
    da = d1 * av
    return BoundaryMass(mesh, sp.diags(da, format="csr"), sp.diags(d1, format="csr"))


# ---------------------------------------------------------------------------
# constrained Neumann solves


class NeumannSolver:
    """Factorized system [[K, c], [c^T, 0]] with c_i = int a phi_i on the boundary.

    The single Lagrange multiplier enforces int_{boundary} a w = 0 and keeps K
    symmetric and unmodified.
    """

    def __init__(self, K, B: BoundaryMass):
        self.K = K.tocsr()
        self.B = B
        n = K.shape[0]
        c = B.wa
        self.c = c
        A = sp.bmat([[K, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]], format="csc")
        self._A = A
        self._lu = None
        try:
            self._lu = spla.splu(A)
        except (RuntimeError, MemoryError) as exc:  # pragma: no cover - fallback path
            log.warning("direct factorization failed (%s); using MINRES with Jacobi preconditioner", exc)
        self.n = n

    def solve_load(self, load, mean=0.0):
        """Solve K w = load with int a w = mean; returns (w, multiplier).

        ``load`` may be (n,) or (n, k). The multiplier equals the
        compatibility defect sum(load) / int a.
        """
        load = np.asarray(load, dtype=float)
        two = load.ndim == 2
        L = load if two else load[:, None]
        rhs = np.vstack([L, np.full((1, L.shape[1]), mean)])
        if self._lu is not None:
            sol = self._lu.solve(rhs)
            # one step of iterative refinement for the tight residual contract
            sol += self._lu.solve(rhs - self._A @ sol)
        else:  # pragma: no cover
            d = np.abs(self._A.diagonal())
            d[d == 0] = 1.0
            M = sp.diags(1.0 / d)
            sol = np.column_stack([spla.minres(self._A, r, M=M, rtol=1e-14, maxiter=20000)[0] for r in rhs.T])
        w, lam = sol[:-1], sol[-1]
        return (w, lam) if two else (w[:, 0], float(lam[0]))


def compatibility_defect(B: BoundaryMass, f):
    f = np.asarray(f, dtype=float)
    return B.integrate(f), float(B.wa @ np.abs(f))


def _full_boundary_vector(mesh, f):
    f = np.asarray(f, dtype=float)
    if f.shape == (mesh.n_nodes,):
        out = np.zeros(mesh.n_nodes)
        out[mesh.boundary] = f[mesh.boundary]
        return out
    if f.shape == (len(mesh.boundary),):
        out = np.zeros(mesh.n_nodes)
        out[mesh.boundary] = f
        return out
    raise ValueError(f"boundary data has shape {f.shape}")


def project_compatible(B: BoundaryMass, f):
    """Subtract the weighted boundary mean so that int a f = 0."""
    f = _full_boundary_vector(B.mesh, f)
    f[B.mesh.boundary] -= B.integrate(f) / B.total_a
    return f


def solve_neumann(K, B: BoundaryMass, f, *, tol=1e-8, project=False, solver=None) -> Field:
    """Weak solution of div(a grad w) = 0, dw/dnu = f, int a w = 0.

    ``f`` is a boundary Field, a nodal vector or a vector over the boundary
    loop. Data with relative defect above ``tol`` is rejected unless
    ``project`` is set.
    """
    mesh = B.mesh
    fv = _full_boundary_vector(mesh, f.values if isinstance(f, Field) else f)
    defect, scale = compatibility_defect(B, fv)
    if abs(defect) > tol * max(scale, 1e-300):
        if not project:
            raise CompatibilityError(abs(defect), max(scale, 1e-300))
        fv = project_compatible(B, fv)
    solver = solver or NeumannSolver(K, B)
    load = B.weighted @ fv
    w, _ = solver.solve_load(load)
    res = np.linalg.norm(K @ w - load)
    ref = max(np.linalg.norm(load), np.finfo(float).tiny)
    if res > 1e-10 * ref and np.linalg.norm(load) > 0:
        raise ArithmeticError(f"Neumann solve residual {res / ref:.2e} exceeds 1e-10")
    return Field(mesh, w)


def represent_neumann(table, a: WeightField, f, *, tol=1e-8, project=False):
    """Boundary values of the Neumann solution via the Green representation.

    w(y) = 1/(2 pi a(y)) * int a(s) G(s, y) f(s) ds, evaluated at every
    source of ``table`` with the table mesh's boundary quadrature. ``f`` may
    be a callable of points, a Field on any mesh over the same curve, or a
    vector over the table mesh boundary. Returns (t_params, values).
    """
    mesh = table.mesh
    bnd = mesh.boundary
    if callable(f) and not isinstance(f, Field):
        fb = np.asarray(f(mesh.nodes[bnd]), dtype=float)
    elif isinstance(f, Field):
        fb = f.trace() if f.mesh is mesh else f.at_boundary_params(mesh.boundary_t)
    else:
        fb = np.asarray(f, dtype=float)
        if fb.shape == (mesh.n_nodes,):
            fb = fb[bnd]
    B = table.boundary_mass
    fv = _full_boundary_vector(mesh, fb)
    defect, scale = compatibility_defect(B, fv)
    if abs(defect) > tol * max(scale, 1e-300):
        if not project:
            raise CompatibilityError(abs(defect), max(scale, 1e-300))
        fv = project_compatible(B, fv)
    src = np.asarray(table.sources)
    Gb = table.G_boundary()                       # (nb, n_src): G(x_i, y_m)
    ay = a(mesh.nodes[src])
    vals = (B.wa[bnd] * fv[bnd]) @ Gb / (2 * np.pi * ay)
    return mesh.boundary_t[mesh.boundary_position[src]], vals
