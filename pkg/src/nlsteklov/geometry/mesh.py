"""Triangular meshes of curve-bounded planar domains with graded refinement."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import triangle
from scipy.spatial import cKDTree

from .curves import BoundaryCurve, GeometryError


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray          # (n, 2)
    triangles: np.ndarray      # (m, 3), counter-clockwise
    boundary: np.ndarray       # (nb,) node ids in boundary loop order (CCW)
    boundary_t: np.ndarray     # (nb,) curve parameters of boundary nodes
    h: float                   # characteristic (maximal) edge size
    curve: BoundaryCurve | None = None
    grading: tuple = field(default_factory=tuple)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @cached_property
    def areas(self):
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def boundary_edges(self):
        """(nb, 2) consecutive boundary node pairs, closing the loop."""
        b = self.boundary
        return np.stack([b, np.roll(b, -1)], axis=1)

    @cached_property
    def edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def interior(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    @cached_property
    def boundary_position(self):
        """Map node id -> position in the boundary loop (-1 for interior nodes)."""
        pos = np.full(self.n_nodes, -1, dtype=int)
        pos[self.boundary] = np.arange(len(self.boundary))
        return pos

    @cached_property
    def tri(self):
        from matplotlib.tri import Triangulation
        return Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.triangles)

    @cached_property
    def _finder(self):
        return self.tri.get_trifinder()

    def edge_lengths(self):
        e = self.edges
        return np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)

    def boundary_edge_lengths(self):
        e = self.boundary_edges
        return np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)

    def nearest_boundary_node(self, point):
        """Node id of the boundary node closest to ``point``."""
        p = self.nodes[self.boundary]
        i = int(np.argmin(np.sum((p - np.asarray(point, dtype=float)) ** 2, axis=1)))
        return int(self.boundary[i])

    def neighbours(self, node):
        e = self.edges
        nb = np.concatenate([e[e[:, 0] == node, 1], e[e[:, 1] == node, 0]])
        return np.unique(nb)

    def locate(self, points):
        """Triangle index and barycentric coordinates for each point.

        Points outside the polygonal domain (e.g. on the smooth curve between
        two boundary nodes) are clamped onto the nearest boundary edge.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.asarray(self._finder(pts[:, 0], pts[:, 1]))
        bary = np.zeros((len(pts), 3))
        inside = idx >= 0
        if inside.any():
            bary[inside] = _barycentric(self.nodes[self.triangles[idx[inside]]], pts[inside])
        out = np.flatnonzero(~inside)
        if out.size:
            tri_of_edge = self._boundary_edge_triangle
            e = self.boundary_edges
            a, b = self.nodes[e[:, 0]], self.nodes[e[:, 1]]
            for k in out:
                p = pts[k]
                ab = b - a
                s = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0, 1)
                proj = a + s[:, None] * ab
                j = int(np.argmin(np.sum((proj - p) ** 2, axis=1)))
                ti = tri_of_edge[j]
                idx[k] = ti
                bary[k] = _barycentric(self.nodes[self.triangles[ti]][None], proj[j][None])[0]
        return idx, bary

    @cached_property
    def _boundary_edge_triangle(self):
        lookup = {}
        for ti, tri in enumerate(self.triangles):
            for i in range(3):
                lookup[(tri[i], tri[(i + 1) % 3])] = ti
        return np.array([lookup[(int(a), int(b))] for a, b in self.boundary_edges])

    def interpolate(self, values, points):
        idx, bary = self.locate(points)
        return np.einsum("ij,ij->i", np.asarray(values)[self.triangles[idx]], bary)

    def validate(self, tol=1e-10):
        """Check the Mesh invariants; raise GeometryError on failure."""
        if np.any(self.areas <= 0):
            raise GeometryError(f"{np.sum(self.areas <= 0)} triangles with nonpositive area")
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(e, axis=1)
        _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        single = e[cnt[inv.ravel()] == 1]
        loop = set(map(tuple, self.boundary_edges.tolist()))
        if set(map(tuple, single.tolist())) != loop:
            raise GeometryError("boundary loop does not match the free edges of the triangulation")
        if len(np.unique(self.boundary)) != len(self.boundary):
            raise GeometryError("boundary loop visits a node twice")
        if self.curve is not None:
            gap = np.linalg.norm(self.curve.point(self.boundary_t) - self.nodes[self.boundary], axis=1)
            if gap.max() > tol:
                raise GeometryError(f"boundary node off the curve by {gap.max():.3e}")
            dt = np.diff(np.concatenate([self.boundary_t, self.boundary_t[:1] + 1.0]))
            dt = np.mod(dt, 1.0)
            if not np.isclose(dt.sum(), 1.0) or np.any(dt <= 0):
                raise GeometryError("boundary loop not traversed in the curve direction")
        return True

    def refined(self):
        """Nested uniform refinement: every triangle split into four.

        Interior edge midpoints are straight midpoints; boundary edge
        midpoints are placed on the curve at the parameter midpoint.
        """
        if self.curve is None:
            raise GeometryError("uniform refinement needs the boundary curve")
        e = self.edges
        n = self.n_nodes
        mid = 0.5 * (self.nodes[e[:, 0]] + self.nodes[e[:, 1]])
        key = {(int(a), int(b)): n + k for k, (a, b) in enumerate(e)}
        # boundary edges: move midpoints onto the curve
        bt = self.boundary_t
        nb = len(self.boundary)
        new_b, new_t = [], []
        for i in range(nb):
            a, b = int(self.boundary[i]), int(self.boundary[(i + 1) % nb])
            t0, t1 = bt[i], bt[(i + 1) % nb]
            if t1 <= t0:
                t1 += 1.0
            tm = (0.5 * (t0 + t1)) % 1.0
            k = key[(min(a, b), max(a, b))]
            mid[k - n] = self.curve.point(tm)
            new_b += [a, k]
            new_t += [t0, tm]
        tris = []
        for a, b, c in self.triangles:
            ab = key[(min(a, b), max(a, b))]
            bc = key[(min(b, c), max(b, c))]
            ca = key[(min(c, a), max(c, a))]
            tris += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        grading = tuple((p, lh / 2) for p, lh in self.grading)
        out = Mesh(np.vstack([self.nodes, mid]), np.array(tris, dtype=int), np.array(new_b, dtype=int),
                   np.array(new_t, dtype=float), self.h / 2, self.curve, grading)
        out.validate()
        return out

    def translated(self, offset):
        """Rigidly shifted copy (same connectivity and curve parameters)."""
        from .curves import Translated
        off = np.asarray(offset, dtype=float)
        curve = None if self.curve is None else Translated(self.curve, off)
        grading = tuple((np.asarray(p) + off, lh) for p, lh in self.grading)
        return Mesh(self.nodes + off, self.triangles.copy(), self.boundary.copy(), self.boundary_t.copy(),
                    self.h, curve, grading)

    # -- persistence --------------------------------------------------------

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"nodes {self.n_nodes} triangles {len(self.triangles)} boundary {len(self.boundary)}\n")
            for i, (x, y) in enumerate(self.nodes):
                fh.write(f"{i} {x:.17g} {y:.17g}\n")
            for i, (a, b, c) in enumerate(self.triangles):
                fh.write(f"{i} {a} {b} {c}\n")
            for i, (n, t) in enumerate(zip(self.boundary, self.boundary_t)):
                fh.write(f"{i} {n} {t:.17g}\n")

    @classmethod
    def load(cls, path, curve=None, h=None):
        with open(path) as fh:
            head = fh.readline().split()
            if len(head) != 6 or head[0::2] != ["nodes", "triangles", "boundary"]:
                raise GeometryError(f"bad mesh header in {path}")
            n, m, nb = int(head[1]), int(head[3]), int(head[5])
            rows = [fh.readline().split() for _ in range(n + m + nb)]
        nodes = np.array([[float(r[1]), float(r[2])] for r in rows[:n]])
        tris = np.array([[int(v) for v in r[1:4]] for r in rows[n:n + m]], dtype=int)
        bnd = np.array([int(r[1]) for r in rows[n + m:]], dtype=int)
        bt = np.array([float(r[2]) for r in rows[n + m:]])
        mesh = cls(nodes, tris, bnd, bt, h=0.0, curve=curve)
        mesh.h = float(h) if h is not None else float(mesh.edge_lengths().max())
        return mesh


def _barycentric(tri_pts, pts):
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    v0, v1, v2 = b - a, c - a, pts - a
    den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
    l1 = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
    l2 = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
    return np.stack([1 - l1 - l2, l1, l2], axis=1)


# ---------------------------------------------------------------------------
# construction


class SizeField:
    """h(x) = min(h_max, local_h + rate * max(0, |x - p| - 3 local_h)) over grading points."""

    def __init__(self, h_max, grading=(), rate=0.25):
        self.h_max = float(h_max)
        self.points = np.array([g[0] for g in grading], dtype=float).reshape(-1, 2)
        self.local = np.array([g[1] for g in grading], dtype=float)
        self.rate = float(rate)

    def __call__(self, x):
        x = np.atleast_2d(x)
        h = np.full(len(x), self.h_max)
        for p, lh in zip(self.points, self.local):
            d = np.linalg.norm(x - p, axis=1)
            h = np.minimum(h, lh + self.rate * np.maximum(0.0, d - 3 * lh))
        return h

    @property
    def h_min(self):
        return float(min([self.h_max, *self.local]))


def _place_along(points_of, s0, s1, length_of, size, fill=0.8, n_fine=None):
    """Parameters in (s0, s1) splitting a path so each piece has size-metric length <= fill.

    ``points_of(s)`` maps parameters to coordinates; ``length_of(s)`` gives
    |d point/ds|. Returns interior parameters (endpoints excluded).
    """
    if n_fine is None:
        approx_len = float(np.mean(length_of(np.linspace(s0, s1, 257)))) * (s1 - s0)
        n_fine = int(min(2_000_000, max(2048, 20 * approx_len / size.h_min)))
    s = np.linspace(s0, s1, n_fine + 1)
    dens = length_of(s) / size(points_of(s))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
    n = max(1, int(np.ceil(cum[-1] / fill)))
    targets = np.linspace(0.0, cum[-1], n + 1)[1:-1]
    return np.interp(targets, cum, s)


def _boundary_params(curve, size, fixed, t_start=None):
    fixed = sorted(set(float(t) % 1.0 for t in fixed))
    if not fixed:
        fixed = [0.0 if t_start is None else t_start]
    out = []
    for i, t0 in enumerate(fixed):
        t1 = fixed[i + 1] if i + 1 < len(fixed) else fixed[0] + 1.0
        out.append(t0)
        out.extend(_place_along(curve.point, t0, t1, curve.speed, size).tolist())
    return np.array(out) % 1.0


def _refine(vertices, segments, size, quality, max_rounds=60):
    opts = f"pq{quality}Y"
    m = triangle.triangulate({"vertices": vertices, "segments": segments}, opts)
    stalled, last = 0, None
    for _ in range(max_rounds):
        p = m["vertices"]
        t = m["triangles"]
        e = np.stack([p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 1]], p[t[:, 0]] - p[t[:, 2]]], axis=1)
        longest = np.linalg.norm(e, axis=2).max(axis=1)
        # 5% margin: a few triangles pinned by unsplittable boundary segments stay slightly long
        target = 0.95 * size(p[t].mean(axis=1))
        bad = longest > target
        nbad = int(bad.sum())
        if nbad == 0:
            break
        stalled = stalled + 1 if last is not None and nbad >= last else 0
        if stalled >= 3:
            break
        last = nbad
        area = 0.5 * np.abs(e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0])
        amax = np.where(bad, np.minimum(0.5 * area, np.sqrt(3) / 4 * target ** 2), -1.0)
        m = triangle.triangulate({"vertices": p, "segments": m["segments"], "triangles": t,
                                  "triangle_max_area": amax[:, None]}, f"r{opts}a")
    return m["vertices"], m["triangles"]


def _orient(nodes, tris):
    p = nodes[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def build_mesh(curve: BoundaryCurve, h_max: float, grading=(), *, rate=0.25, quality=28,
               symmetry: int | None = None, mirror: bool = False) -> Mesh:
    """Graded conforming triangulation of the region bounded by ``curve``.

    ``grading`` is a sequence of ``(point, local_h)``; boundary edges within
    ``3*local_h`` of a point have length <= local_h and the size grows
    linearly with slope ``rate`` away from it. Grading points on the curve
    become mesh nodes. With ``symmetry=k`` (curves with a rotation center
    only) one sector is meshed and rotated, so the mesh is exactly invariant
    under rotation by 2*pi/k. ``mirror`` additionally makes it invariant
    under reflection across the ray from the center through the first fixed
    grading point (parameter 0 if there is none).
    """
    if h_max <= 0:
        raise GeometryError("h_max must be positive")
    curve.check()
    grading = tuple((np.asarray(p, dtype=float), float(lh)) for p, lh in grading)
    fixed = []
    for p, lh in grading:
        if lh <= 0 or lh > h_max:
            raise GeometryError(f"local_h {lh} must be in (0, h_max]")
        t, dist = curve.project(p)
        if dist <= 1e-9:
            fixed.append(t)
        elif not curve.contains(p[None])[0]:
            raise GeometryError(f"grading point {p.tolist()} lies outside the domain")
    size = SizeField(h_max, grading, rate)

    if mirror and not symmetry:
        symmetry = 1
    if symmetry:
        nodes, tris, bnd, bt = _symmetric_mesh(curve, size, fixed, int(symmetry), grading, quality, mirror)
    else:
        bt = _boundary_params(curve, size, fixed)
        order = np.argsort(bt, kind="stable")
        bt = bt[order]
        verts = curve.point(bt)
        nb = len(bt)
        segs = np.stack([np.arange(nb), (np.arange(nb) + 1) % nb], axis=1)
        nodes, tris = _refine(verts, segs, size, quality)
        # triangle keeps input vertices first and never moves them ('Y')
        nodes = nodes.copy()
        nodes[:nb] = verts
        bnd = np.arange(nb)
    tris = _orient(nodes, np.asarray(tris, dtype=int))
    mesh = Mesh(nodes, tris, np.asarray(bnd, dtype=int), np.asarray(bt, dtype=float),
                float(h_max), curve, grading)
    mesh.validate()
    return mesh


def _symmetric_mesh(curve, size, fixed, k, grading, quality, mirror=False):
    if curve.symmetry_center is None:
        raise GeometryError("symmetric meshing needs a curve with a rotation center")
    c = np.asarray(curve.symmetry_center)
    rot = 2 * np.pi / k
    R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    pts = np.array([p for p, _ in grading]).reshape(-1, 2)
    if len(pts):
        rp = (pts - c) @ R.T + c
        d = cKDTree(pts).query(rp)[0]
        if d.max() > 1e-9:
            raise GeometryError("grading points are not invariant under the requested rotation")
    t0 = min(fixed) if fixed else 0.0
    t1 = t0 + (0.5 if mirror else 1.0) / k
    if mirror:
        d0 = curve.point(np.array([t0]))[0] - c
        d0 /= np.linalg.norm(d0)
        M = 2 * np.outer(d0, d0) - np.eye(2)
        if len(pts):
            d = cKDTree(pts).query((pts - c) @ M.T + c)[0]
            if d.max() > 1e-9:
                raise GeometryError("grading points are not invariant under the requested reflection")
        Rs = np.array([[np.cos(rot / 2), -np.sin(rot / 2)], [np.sin(rot / 2), np.cos(rot / 2)]])
    else:
        Rs = R
    sec_fixed = sorted({t0, *[t for t in fixed if t0 <= t < t1 - 1e-14]}) + [t1]
    arc = []
    for i, a in enumerate(sec_fixed[:-1]):
        b = sec_fixed[i + 1]
        arc.append(a)
        arc.extend(_place_along(curve.point, a, b, curve.speed, size).tolist())
    arc.append(t1)
    arc = np.array(arc)
    arc_pts = curve.point(arc)
    start, end = arc_pts[0], arc_pts[-1]

    def ray(q):
        def pts_of(s):
            return c + np.outer(np.atleast_1d(s), q - c)
        return pts_of

    def rlen(q):
        return lambda s: np.full(np.shape(s), np.linalg.norm(q - c))

    # nodes along the start radius (center -> start), rotated copy for the end radius
    s_in = _place_along(ray(start), 0.0, 1.0, rlen(start), size)
    rad_start = c + np.outer(s_in, start - c)
    rad_end = (rad_start - c) @ Rs.T + c
    verts = np.vstack([arc_pts, rad_end[::-1], [c], rad_start])
    n = len(verts)
    segs = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    sn, st = _refine(verts, segs, size, quality)
    sn = sn.copy()
    sn[:n] = verts
    if mirror:
        # sector = half sector plus its mirror image; boundary ids: all of
        # the first half's arc, the mirrored arc without its two end points
        na = len(sn)
        sn = np.vstack([sn, (sn - c) @ M.T + c])
        st = np.vstack([st, st[:, ::-1] + na])
        sec_bid = np.concatenate([np.arange(len(arc)), na + np.arange(1, len(arc) - 1)])
        sec_bt = np.concatenate([arc, 2 * t0 - arc[1:-1]])
    else:
        sec_bid = np.arange(len(arc) - 1)
        sec_bt = arc[:-1]
    all_nodes, all_tris, all_bt, all_bid = [], [], [], []
    offset = 0
    for j in range(k):
        Rj = np.linalg.matrix_power(R, j)
        q = (sn - c) @ Rj.T + c
        all_nodes.append(q)
        all_tris.append(st + offset)
        all_bid.append(sec_bid + offset)
        all_bt.append((sec_bt + j / k) % 1.0)
        offset += len(sn)
    nodes = np.vstack(all_nodes)
    tris = np.vstack(all_tris)
    scale = np.linalg.norm(start - c)
    tree = cKDTree(nodes)
    pairs = tree.query_pairs(1e-9 * scale, output_type="ndarray")
    rep = np.arange(len(nodes))
    for a, b in sorted(map(tuple, pairs.tolist())):
        ra, rb = _root(rep, a), _root(rep, b)
        if ra != rb:
            rep[max(ra, rb)] = min(ra, rb)
    rep = np.array([_root(rep, i) for i in range(len(nodes))])
    keep = np.unique(rep)
    new_id = np.full(len(nodes), -1)
    new_id[keep] = np.arange(len(keep))
    tris = new_id[rep[tris]]
    nodes = nodes[keep]
    bid = new_id[rep[np.concatenate(all_bid)]]
    bt = np.concatenate(all_bt)
    order = np.argsort(bt, kind="stable")
    bnd, bt = bid[order], bt[order]
    # snap boundary nodes exactly onto the curve
    nodes[bnd] = curve.point(bt)
    return nodes, tris, bnd, bt


def _root(rep, i):
    while rep[i] != i:
        i = rep[i]
    return i
