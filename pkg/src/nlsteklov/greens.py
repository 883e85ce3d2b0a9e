"""Weighted Neumann Green's function, its regular part and the Robin diagonal.

G(., y) solves div(a grad G) = 0 with a G-flux concentrated at the boundary
point y, compensated by the uniform weighted flux -2 pi a(y) / int a:

    int a grad G . grad phi = 2 pi a(y) phi(y) - 2 pi a(y)/int(a) * int_bdry a phi.

The regular part is H = G + log|x - y|^2. Two discretizations are provided:

* the nodal-load route (``green_function``) puts 2 pi a(y) at the node y and
  subtracts the logarithm afterwards (``regular_part``);
* the desingularized route (``desingularized_regular_part``) solves directly
  for H, whose load is bounded: with g = grad a . grad log|x-y|^2,

    int a grad H . grad phi = -int g phi
        + int_bdry a [2 (x-y).nu / |x-y|^2 - 2 pi a(y)/int(a)] phi,

  where the boundary kernel tends to the curvature at x = y. This route is
  what the Robin diagonal H(xi, xi) is extrapolated from.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .fem import (_QUAD_BARY, BoundaryMass, Field, NeumannSolver, assemble_boundary_mass,
                  assemble_stiffness, hat_gradients, quadrature_points)
from .geometry import Mesh, WeightField, build_mesh

NORMALIZATIONS = ("unweighted", "weighted")


class GreenError(ValueError):
    pass


# ---------------------------------------------------------------------------
# exact boundary integrals of the logarithm


def _log_primitives(u, d):
    """I0 = int log(u^2+d^2) du and I1 = int u log(u^2+d^2) du."""
    q = u * u + d * d
    lq = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        at = np.where(d > 0, d * np.arctan(u / np.where(d > 0, d, 1.0)), 0.0)
    I0 = u * lq - 2 * u + 2 * at
    I1 = 0.5 * (q * lq - u * u)
    return I0, I1


def boundary_log_integral(mesh: Mesh, y, weights=None):
    """int over the polygonal boundary of w(x) log|x - y|^2, w linear per edge.

    ``weights`` holds nodal values at the boundary loop nodes (default 1).
    Exact up to rounding, including the edges that end at y.
    """
    e = mesh.boundary_edges
    A, Bp = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    L = np.linalg.norm(Bp - A, axis=1)
    ev = (Bp - A) / L[:, None]
    r = np.asarray(y, dtype=float) - A
    s0 = np.einsum("ij,ij->i", r, ev)
    d = np.abs(ev[:, 0] * r[:, 1] - ev[:, 1] * r[:, 0])
    d = np.where(d < 1e-14 * L, 0.0, d)
    I0a, I1a = _log_primitives(-s0, d)
    I0b, I1b = _log_primitives(L - s0, d)
    J0 = I0b - I0a                       # int_0^L log
    J1 = (I1b - I1a) + s0 * J0           # int_0^L s log
    if weights is None:
        return float(J0.sum())
    w = np.zeros(mesh.n_nodes)
    w[mesh.boundary] = weights
    wa, wb = w[e[:, 0]], w[e[:, 1]]
    return float(np.sum(wa * J0 + (wb - wa) / L * J1))


# ---------------------------------------------------------------------------
# solvers


class GreenSolver:
    """Factorized Neumann system for one (mesh, a), shared by many sources."""

    def __init__(self, mesh: Mesh, a: WeightField, *, normalization="unweighted", K=None, B=None):
        if normalization not in NORMALIZATIONS:
            raise GreenError(f"normalization must be one of {NORMALIZATIONS}")
        if mesh.curve is None:
            raise GreenError("mesh needs its boundary curve (normals, curvature)")
        self.mesh, self.a, self.normalization = mesh, a, normalization
        self.K = K if K is not None else assemble_stiffness(mesh, a)
        self.B = B if B is not None else assemble_boundary_mass(mesh, a)
        self.neumann = NeumannSolver(self.K, self.B)
        self._qp = quadrature_points(mesh)
        self._nu = mesh.curve.normal(mesh.boundary_t)
        self._kappa = mesh.curve.curvature(mesh.boundary_t)

    # -- helpers --------------------------------------------------------------

    def source_node(self, y):
        """Boundary node for a source given as a node id or a point (snapped)."""
        mesh = self.mesh
        if np.isscalar(y) and float(y).is_integer():
            node = int(y)
            if mesh.boundary_position[node] < 0:
                raise GreenError(f"source node {node} is not on the boundary")
            return node
        p = np.asarray(y, dtype=float)
        node = mesh.nearest_boundary_node(p)
        t, dist = mesh.curve.project(p)
        if dist > 1e-8:
            raise GreenError(f"source {p.tolist()} is not on the boundary (distance {dist:.2e})")
        return node

    def _mean_weights(self):
        return self.B.w1 if self.normalization == "unweighted" else self.B.wa

    def _normalize(self, values, target):
        """Shift so that the chosen boundary mean of ``values`` equals ``target``."""
        w = self._mean_weights()
        return values + (target - w @ values) / w.sum()

    # -- nodal-load route -------------------------------------------------------

    def green(self, nodes):
        """G(., y) for each boundary node in ``nodes``; returns (n_nodes, len(nodes))."""
        nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
        ay = self.a(self.mesh.nodes[nodes])
        load = -np.outer(self.B.wa, 2 * np.pi * ay / self.B.total_a)
        load[nodes, np.arange(len(nodes))] += 2 * np.pi * ay
        G, _ = self.neumann.solve_load(load)
        w = self._mean_weights()
        return G - (w @ G) / w.sum()

    # -- desingularized route ---------------------------------------------------

    def regular_load(self, node):
        mesh, a = self.mesh, self.a
        y = mesh.nodes[node]
        d = self._qp - y                                  # (m, 3, 2)
        r2 = np.einsum("mqd,mqd->mq", d, d)
        ga = a.grad(self._qp)
        g = 2 * np.einsum("mqd,mqd->mq", ga, d) / r2     # bounded by 2|grad a|/r, integrable
        # P1 hats at the quadrature points are the barycentric weights
        wq = (mesh.areas / 3)[:, None] * g                # (m, 3)
        contrib = wq @ _QUAD_BARY                         # (m, 3) per local vertex
        load = np.zeros(mesh.n_nodes)
        np.add.at(load, mesh.triangles.ravel(), -contrib.ravel())
        # boundary kernel 2 (x-y).nu / |x-y|^2 with the curvature limit at x = y
        xb = mesh.nodes[mesh.boundary]
        db = xb - y
        rb2 = np.einsum("ij,ij->i", db, db)
        kern = np.empty(len(xb))
        nz = rb2 > 0
        kern[nz] = 2 * np.einsum("ij,ij->i", db[nz], self._nu[nz]) / rb2[nz]
        kern[~nz] = self._kappa[~nz]
        ay = float(a(y))
        bl = np.zeros(mesh.n_nodes)
        bl[mesh.boundary] = kern - 2 * np.pi * ay / self.B.total_a
        return load + self.B.weighted @ bl

    def regular(self, node):
        """H(., y) from the desingularized solve, normalized consistently with G."""
        mesh = self.mesh
        H, _ = self.neumann.solve_load(self.regular_load(node))
        y = mesh.nodes[node]
        if self.normalization == "unweighted":
            target = boundary_log_integral(mesh, y)
        else:
            target = boundary_log_integral(mesh, y, self.a(mesh.nodes[mesh.boundary]))
        return self._normalize(H, target)


def green_function(mesh: Mesh, a: WeightField, y, *, normalization="unweighted", solver=None) -> Field:
    """Nodal-load Green's function with source at (the node nearest to) y."""
    solver = solver or GreenSolver(mesh, a, normalization=normalization)
    node = solver.source_node(y)
    return Field(mesh, solver.green([node])[:, 0])


def _rings(mesh, node):
    r1 = mesh.neighbours(node)
    r2 = np.setdiff1d(np.unique(np.concatenate([mesh.neighbours(i) for i in r1])), np.append(r1, node))
    return r1, r2


def regular_part(G: Field, y) -> Field:
    """H = G + log|x - y|^2 with the value at y extrapolated from two node rings."""
    mesh = G.mesh
    node = int(y) if np.isscalar(y) else mesh.nearest_boundary_node(y)
    yp = mesh.nodes[node]
    r2 = np.sum((mesh.nodes - yp) ** 2, axis=1)
    H = G.values.copy()
    nz = r2 > 0
    H[nz] += np.log(r2[nz])
    r1, rr2 = _rings(mesh, node)
    d1, d2 = np.sqrt(r2[r1]).mean(), np.sqrt(r2[rr2]).mean()
    h1, h2 = H[r1].mean(), H[rr2].mean()
    H[node] = h1 - d1 * (h2 - h1) / (d2 - d1)
    return Field(mesh, H)


def desingularized_regular_part(mesh: Mesh, a: WeightField, y, *, normalization="unweighted",
                                solver=None) -> Field:
    solver = solver or GreenSolver(mesh, a, normalization=normalization)
    return Field(mesh, solver.regular(solver.source_node(y)))


# ---------------------------------------------------------------------------
# expansion of H_a around H_1


def expansion_term(mesh: Mesh, a: WeightField, node, form="boundary"):
    """Singular part of H_a(., y) - H_1(., y) for a boundary source y = nodes[node].

    With b = grad log a(y), r = |x - y| and local coordinates X = (x-y).tau,
    Y = (x-y).nu, theta = arg(X + iY) in (-pi, 0]:

    * ``form="literal"``: b . grad(r^2 log r), the interior-source expansion;
    * ``form="boundary"``: (b/2) . grad(r^2 log r) - b_nu (Y log r + X theta),
      the half-plane version whose normal derivative on the tangent line stays
      bounded.

    The remainder H_a - H_1 - term has a bounded gradient only for the
    boundary form; see the tests.
    """
    y = mesh.nodes[node]
    b = a.grad_log(y)
    d = mesh.nodes - y
    r = np.hypot(d[:, 0], d[:, 1])
    lr = np.log(np.where(r > 0, r, 1.0))
    lit = (d * (2 * lr + 1)[:, None]) @ b
    lit[r == 0] = 0.0
    if form == "literal":
        return lit
    if form != "boundary":
        raise ValueError(f"unknown expansion form {form!r}")
    t = mesh.boundary_t[mesh.boundary_position[node]]
    nu, tau = mesh.curve.normal(t), mesh.curve.tangent(t)
    X, Y = d @ tau, d @ nu
    th = np.arctan2(Y, X)
    th = np.where(th > 0.5 * np.pi, th - 2 * np.pi, th)   # continuous on the domain side
    return 0.5 * lit - float(b @ nu) * (Y * lr + X * th)


def max_gradient(mesh: Mesh, values, radius=None, center=None):
    """Largest P1 gradient norm over the triangles (optionally within a disk)."""
    g = np.einsum("mid,mi->md", hat_gradients(mesh), np.asarray(values)[mesh.triangles])
    norm = np.hypot(g[:, 0], g[:, 1])
    if radius is not None:
        cen = mesh.nodes[mesh.triangles].mean(axis=1)
        norm = norm[np.linalg.norm(cen - np.asarray(center), axis=1) <= radius]
    return float(norm.max())


# ---------------------------------------------------------------------------
# Richardson extrapolation on a mesh ladder


@dataclass
class Extrapolation:
    value: float
    error: float
    raw: list
    extrapolated: bool
    ratio: float | None = None
    flag: str = ""

    def as_dict(self):
        return {"value": self.value, "error": self.error, "raw": list(self.raw),
                "extrapolated": self.extrapolated, "ratio": self.ratio, "flag": self.flag}


def richardson(values, noise=1e-13) -> Extrapolation:
    """Aitken/Richardson extrapolation of a three-level ladder (h, h/2, h/4).

    The error estimate is capped at three times the last ladder difference.
    Non-monotone ladders are refused: the finest value is returned with a flag.
    """
    v0, v1, v2 = map(float, values)
    d1, d2 = v1 - v0, v2 - v1
    scale = max(abs(v0), abs(v1), abs(v2), 1.0)
    if max(abs(d1), abs(d2)) <= noise * scale:
        return Extrapolation(v2, max(abs(d1), abs(d2), noise * scale), [v0, v1, v2], False, None,
                             "converged to rounding")
    if d1 == 0 or d2 / d1 <= 0 or abs(d2) >= abs(d1):
        return Extrapolation(v2, max(abs(d1), abs(d2)), [v0, v1, v2], False,
                             None if d1 == 0 else d2 / d1, "non-monotone ladder")
    r = d2 / d1
    corr = d2 * r / (1 - r)
    err = min(3 * abs(d2), max(abs(corr), abs(d2) * r))
    return Extrapolation(v2 + corr, err, [v0, v1, v2], True, r)


def mesh_ladder(curve, h, points, levels=3, local_h=None, nested=True, **kw):
    """Meshes at h, h/2, h/4, ... each containing the given boundary points as nodes.

    By default the finer levels are nested uniform refinements of the
    coarsest mesh, which keeps the ladder differences in their asymptotic
    regime; ``nested=False`` remeshes every level independently.
    """
    grading = [(p, local_h or h) for p in points]
    base = build_mesh(curve, h, grading=grading, **kw)
    out = [base]
    for k in range(1, levels):
        if nested:
            out.append(out[-1].refined())
        else:
            out.append(build_mesh(curve, h / 2 ** k, grading=[(p, lh / 2 ** k) for p, lh in grading], **kw))
    return out


def robin_diagonal(a: WeightField, xi, ladder, *, normalization="unweighted") -> Extrapolation:
    """Richardson-extrapolated H_a(xi, xi) over a ladder of meshes (coarse to fine)."""
    vals = []
    for mesh in ladder:
        s = GreenSolver(mesh, a, normalization=normalization)
        node = s.source_node(xi)
        vals.append(float(s.regular(node)[node]))
    return richardson(vals)


# ---------------------------------------------------------------------------
# tables


@dataclass(eq=False)
class GreenTable:
    """Green's functions for a set of boundary sources on one mesh.

    ``G`` and ``H`` hold one column per source; ``robin`` and ``cross`` hold
    ladder-extrapolated values of H(xi, xi) and G(xi_i, xi_j).
    """

    mesh: Mesh
    a: WeightField
    sources: np.ndarray
    G: np.ndarray
    H: np.ndarray
    boundary_mass: BoundaryMass
    normalization: str = "unweighted"
    ladder_h: list = field(default_factory=list)
    robin: dict = field(default_factory=dict)
    cross: dict = field(default_factory=dict)

    def G_boundary(self):
        return self.G[self.mesh.boundary]

    def column(self, y):
        node = y if np.isscalar(y) and float(y).is_integer() else self.mesh.nearest_boundary_node(y)
        hit = np.flatnonzero(self.sources == int(node))
        if hit.size == 0:
            raise GreenError(f"source {y} not covered by the table")
        return int(hit[0])

    def green_field(self, y) -> Field:
        return Field(self.mesh, self.G[:, self.column(y)])

    def regular_field(self, y) -> Field:
        return Field(self.mesh, self.H[:, self.column(y)])

    def robin_value(self, y):
        j = self.column(y)
        if j in self.robin:
            return self.robin[j].value
        node = self.sources[j]
        return float(self.H[node, j])

    def green_value(self, x, y):
        """G(x, y) for boundary points x != y, from the regular part of the y column."""
        j = self.column(y)
        key = (self.column(x), j) if _covered(self, x) else None
        if key is not None and key in self.cross:
            return self.cross[key].value
        xp = self.mesh.nodes[self.mesh.nearest_boundary_node(x)] if not np.isscalar(x) else self.mesh.nodes[int(x)]
        yp = self.mesh.nodes[self.sources[j]]
        r2 = float(np.sum((xp - yp) ** 2))
        if r2 == 0:
            raise GreenError("G(x, y) is singular at x = y")
        return float(self.mesh.interpolate(self.H[:, j], xp[None])[0]) - np.log(r2)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for j, node in enumerate(self.sources):
            Field(self.mesh, self.G[:, j]).to_csv(os.path.join(directory, f"G_{j:04d}.csv"))
            if self.H.shape[0]:
                Field(self.mesh, self.H[:, j]).to_csv(os.path.join(directory, f"H_{j:04d}.csv"))
        index = {
            "sources": [{"index": j, "node": int(n), "point": [float(v) for v in self.mesh.nodes[n]],
                         "t": float(self.mesh.boundary_t[self.mesh.boundary_position[n]])}
                        for j, n in enumerate(self.sources)],
            "normalization": self.normalization,
            "robin_diagonals": {str(j): e.value for j, e in sorted(self.robin.items())},
            "cross_values": {f"{i},{j}": e.value for (i, j), e in sorted(self.cross.items())},
            "mesh_ladder": [float(h) for h in self.ladder_h],
            "error_estimates": {str(j): e.error for j, e in sorted(self.robin.items())},
            "extrapolation": {str(j): e.as_dict() for j, e in sorted(self.robin.items())},
        }
        with open(os.path.join(directory, "index.json"), "w") as fh:
            json.dump(index, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _covered(table, x):
    try:
        table.column(x)
        return True
    except GreenError:
        return False


def build_table(mesh: Mesh, a: WeightField, sources, *, normalization="unweighted", solver=None,
                ladder=None, regular=True) -> GreenTable:
    """Green table on ``mesh`` for the given sources (node ids or boundary points).

    With ``ladder`` (coarse-to-fine meshes containing the sources as nodes),
    the Robin diagonals and the pairwise values G(xi_i, xi_j) are extrapolated.
    """
    solver = solver or GreenSolver(mesh, a, normalization=normalization)
    points = [mesh.nodes[solver.source_node(s)] if not np.isscalar(s) or not float(s).is_integer()
              else mesh.nodes[int(s)] for s in sources]
    nodes = np.array([solver.source_node(p) for p in points], dtype=int)
    G = solver.green(nodes)
    H = np.column_stack([solver.regular(n) for n in nodes]) if regular else np.zeros((0, len(nodes)))
    table = GreenTable(mesh, a, nodes, G, H, solver.B, normalization)
    if ladder:
        table.ladder_h = [m.h for m in ladder]
        diag = {j: [] for j in range(len(nodes))}
        cross = {(i, j): [] for i in range(len(nodes)) for j in range(len(nodes)) if i != j}
        for m in ladder:
            s = GreenSolver(m, a, normalization=normalization)
            ln = [s.source_node(p) for p in points]
            for j, nj in enumerate(ln):
                Hj = s.regular(nj)
                diag[j].append(float(Hj[nj]))
                for i, ni in enumerate(ln):
                    if i != j:
                        r2 = float(np.sum((m.nodes[ni] - m.nodes[nj]) ** 2))
                        cross[(i, j)].append(float(Hj[ni]) - np.log(r2))
        table.robin = {j: richardson(v) for j, v in diag.items()}
        table.cross = {k: richardson(v) for k, v in cross.items()}
    return table


def mu_parameters(table: GreenTable, xi1, xi2):
    """(mu1, mu2) with log(2 mu_i) = H(xi_i, xi_i) - G(xi_i, xi_j)."""
    j1, j2 = table.column(xi1), table.column(xi2)
    if j1 == j2:
        raise GreenError("mu parameters need two distinct points")
    n1, n2 = table.sources[j1], table.sources[j2]
    g12 = table.green_value(n1, n2)
    g21 = table.green_value(n2, n1)
    mu1 = 0.5 * np.exp(table.robin_value(n1) - g12)
    mu2 = 0.5 * np.exp(table.robin_value(n2) - g21)
    return float(mu1), float(mu2)
