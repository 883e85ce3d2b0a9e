"""Two-bubble approximate solutions and their residuals.

The building block is the half-plane bubble w_{t,mu}(x) = log(2 mu / ((x1-t)^2 + (x2+mu)^2)),
which solves Delta w = 0 in {x2 > 0} with -d w/d x2 = e^w on {x2 = 0}. On a
domain, the bubble centred at a boundary point xi with outward normal nu
becomes

    u(x) = log(2 mu / |x - xi - lam mu nu|^2),

and a correction H solves

    -div(a grad H) = grad a . grad u               in the domain,
    dH/dnu = -du/dnu + lam e^u - lam <a e^u>_a     on the boundary,

with <.>_a the weighted boundary mean. Here lam is the concentration
parameter of this construction: the ansatz U = (u1 + H1) - (u2 + H2) has
dU/dnu close to lam e^U = 2 lam sinh U near the first point, i.e. it
approximates the problem dU/dnu = 2 lam sinh U. The solver module converts.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import (_QUAD_BARY, BoundaryMass, Field, NeumannSolver, assemble_boundary_mass,
                  assemble_stiffness, quadrature_points)
from .geometry import Mesh, WeightField, build_mesh

log = logging.getLogger(__name__)


class AnsatzError(ValueError):
    pass


# ---------------------------------------------------------------------------
# half-plane objects


@dataclass(frozen=True)
class Bubble:
    t: float
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    def _rho(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., 0] - self.t) ** 2 + (x[..., 1] + self.mu) ** 2

    def __call__(self, x):
        return np.log(2 * self.mu / self._rho(x))

    def dx2(self, x):
        x = np.asarray(x, dtype=float)
        return -2 * (x[..., 1] + self.mu) / self._rho(x)

    @property
    def peak(self):
        return np.array([self.t, 0.0]), float(np.log(2 / self.mu))


def bubble_boundary_identity(b: Bubble, sample) -> float:
    """max |-dw/dx2 - e^w| over points (x1, 0)."""
    x1 = np.asarray(sample, dtype=float)
    pts = np.stack([x1, np.zeros_like(x1)], axis=-1)
    return float(np.max(np.abs(-b.dx2(pts) - np.exp(b(pts)))))


@dataclass(frozen=True)
class KernelPair:
    """Bounded kernel of the linearization around w_{0,mu}."""

    mu: float

    def _rho(self, x):
        return x[..., 0] ** 2 + (x[..., 1] + self.mu) ** 2

    def z0(self, x):
        x = np.asarray(x, dtype=float)
        return 1 - 2 * self.mu * (x[..., 1] + self.mu) / self._rho(x)

    def z1(self, x):
        x = np.asarray(x, dtype=float)
        return -2 * x[..., 0] / self._rho(x)

    def dz0_dx2(self, x):
        x = np.asarray(x, dtype=float)
        return -2 * self.mu * (x[..., 0] ** 2 - (x[..., 1] + self.mu) ** 2) / self._rho(x) ** 2

    def dz1_dx2(self, x):
        x = np.asarray(x, dtype=float)
        return 4 * x[..., 0] * (x[..., 1] + self.mu) / self._rho(x) ** 2

    def potential(self, x1):
        return 2 * self.mu / (np.asarray(x1) ** 2 + self.mu ** 2)


def kernel_residual(k: KernelPair, step=0.05, extent=4.0, boundary_samples=None, margin=None):
    """Boundary and 5-point Laplacian residuals of z0, z1 on a half-plane grid.

    Returns a dict with ``boundary`` (max over both functions, analytic
    derivatives) and ``laplacian`` (max of the finite-difference Laplacian
    over grid points with x2 >= margin; default one step above the boundary).
    Pass a fixed margin to compare grids of different step on the same region.
    """
    if boundary_samples is None:
        boundary_samples = np.linspace(-extent, extent, 1001)
    x1 = np.asarray(boundary_samples, dtype=float)
    bp = np.stack([x1, np.zeros_like(x1)], axis=-1)
    pot = k.potential(x1)
    rb = max(np.max(np.abs(-k.dz0_dx2(bp) - pot * k.z0(bp))),
             np.max(np.abs(-k.dz1_dx2(bp) - pot * k.z1(bp))))
    n1 = int(round(2 * extent / step))
    n2 = int(round(extent / step))
    g1 = -extent + step * np.arange(n1 + 1)
    g2 = step * np.arange(1, n2 + 1)
    if margin is not None:
        g2 = g2[g2 >= margin - 1e-12]
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    lap = 0.0
    for z in (k.z0, k.z1):
        P = np.stack([X1, X2], axis=-1)
        c = z(P)
        L = (z(P + [step, 0]) + z(P - [step, 0]) + z(P + [0, step]) + z(P - [0, step]) - 4 * c) / step ** 2
        lap = max(lap, float(np.max(np.abs(L))))
    return {"boundary": float(rb), "laplacian": lap}


# ---------------------------------------------------------------------------
# domain ansatz


@dataclass
class AnsatzConfig:
    xi1: np.ndarray
    xi2: np.ndarray
    mu1: float
    mu2: float
    lam: float
    normalization: str = "unweighted"

    def __post_init__(self):
        self.xi1 = np.asarray(self.xi1, dtype=float)
        self.xi2 = np.asarray(self.xi2, dtype=float)
        if not (self.mu1 > 0 and self.mu2 > 0 and self.lam > 0):
            raise AnsatzError("mu1, mu2 and lam must be positive")
        if np.allclose(self.xi1, self.xi2):
            raise AnsatzError("concentration points must be distinct")

    def swapped(self):
        return replace(self, xi1=self.xi2, xi2=self.xi1, mu1=self.mu2, mu2=self.mu1)

    def with_lam(self, lam):
        return replace(self, lam=float(lam))

    def as_dict(self):
        return {"xi1": self.xi1.tolist(), "xi2": self.xi2.tolist(), "mu1": self.mu1, "mu2": self.mu2,
                "lam": self.lam, "normalization": self.normalization}


def boundary_frame(curve, xi):
    t, dist = curve.project(xi)
    if dist > 1e-8:
        raise AnsatzError(f"point {np.asarray(xi).tolist()} is not on the boundary (distance {dist:.2e})")
    return t, curve.normal(t)


def bubble_center(curve, xi, mu, lam):
    """Singular point xi + lam mu nu(xi); must lie outside the closed domain."""
    t, nu = boundary_frame(curve, xi)
    c = curve.point(t) + lam * mu * nu
    if curve.contains(c[None])[0]:
        raise AnsatzError("bubble center falls inside the domain")
    return c, nu


def bubble_field(mesh: Mesh, xi, mu, lam):
    """Nodal values of u = log(2 mu / |x - xi - lam mu nu|^2)."""
    c, nu = bubble_center(mesh.curve, xi, mu, lam)
    return np.log(2 * mu / np.sum((mesh.nodes - c) ** 2, axis=1))


def ansatz_mesh(curve, cfg: AnsatzConfig, h_max, edges_per_width=8, **kw):
    """Mesh graded so that each bubble width lam*mu is covered by ``edges_per_width`` edges."""
    grading = [(cfg.xi1, min(h_max, cfg.lam * cfg.mu1 / edges_per_width)),
               (cfg.xi2, min(h_max, cfg.lam * cfg.mu2 / edges_per_width))]
    return build_mesh(curve, h_max, grading=grading, **kw)


class _System:
    """Assembled operators shared by the corrections on one (mesh, a)."""

    def __init__(self, mesh: Mesh, a: WeightField, K=None, B: BoundaryMass | None = None):
        self.mesh, self.a = mesh, a
        self.K = K if K is not None else assemble_stiffness(mesh, a)
        self.B = B if B is not None else assemble_boundary_mass(mesh, a)
        self.solver = NeumannSolver(self.K, self.B)
        self.qp = quadrature_points(mesh)
        self.grad_a = a.grad(self.qp)
        self.nu = mesh.curve.normal(mesh.boundary_t)


@dataclass
class Correction:
    H: Field
    u: np.ndarray               # nodal bubble values
    center: np.ndarray
    nu: np.ndarray
    c: float                    # subtracted weighted average making the data compatible
    defect: float               # remaining discrete compatibility defect / scale
    quadrature_gap: float = 0.0  # |c - lam <e^u>_a| / c, trapezoid error on the peaked profile


def correction_field(mesh: Mesh, a: WeightField, xi, mu, lam, *, normalization="unweighted",
                     check_resolution=True, system=None) -> Correction:
    """The correction H_j for one bubble (see module docstring)."""
    sys_ = system or _System(mesh, a)
    B = sys_.B
    c, nu_j = bubble_center(mesh.curve, xi, mu, lam)
    if check_resolution:
        # at least 8 edges across the width: count boundary nodes within lam*mu/2 of xi
        dist = np.linalg.norm(mesh.nodes[mesh.boundary] - np.asarray(xi, dtype=float), axis=1)
        count = int(np.sum(dist <= 0.5 * lam * mu * (1 + 1e-9)))
        if count < 8:
            raise AnsatzError(f"bubble width {lam * mu:.3e} under-resolved: {count} boundary nodes "
                              f"across it, need >= 8")
    u = np.log(2 * mu / np.sum((mesh.nodes - c) ** 2, axis=1))
    # interior load: int (grad a . grad u) phi, grad u = -2 (x - c)/|x - c|^2
    d = sys_.qp - c
    gu = -2 * d / np.einsum("mqd,mqd->mq", d, d)[..., None]
    f = np.einsum("mqd,mqd->mq", sys_.grad_a, gu)
    wq = (mesh.areas / 3)[:, None] * f
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.triangles.ravel(), (wq @ _QUAD_BARY).ravel())
    # boundary data in cancelled form: [2 (x-xi).nu + 2 lam mu (1 - nu_j.nu)] / |x - c|^2 - c_j
    b = mesh.boundary
    xb = mesh.nodes[b]
    nu = sys_.nu
    rc2 = np.sum((xb - c) ** 2, axis=1)
    xi_p = np.asarray(c) - lam * mu * nu_j
    data = (2 * np.einsum("ij,ij->i", xb - xi_p, nu) + 2 * lam * mu * (1 - nu @ nu_j)) / rc2
    eu = np.zeros(mesh.n_nodes)
    eu[b] = lam * 2 * mu / rc2
    g = np.zeros(mesh.n_nodes)
    g[b] = data
    load += B.weighted @ g
    # Continuously c_j = lam <e^u>_a; the discrete average is taken from the
    # assembled load itself so that the trapezoid error on the narrow bubble
    # profile does not leak into the multiplier.
    cj = load.sum() / B.total_a
    load -= cj * B.wa
    gap = abs(cj - B.integrate(eu) / B.total_a) / abs(cj) if cj else 0.0
    scale = abs(load).sum()
    defect = abs(load.sum()) / scale if scale > 0 else 0.0
    if defect > 1e-8:
        raise AnsatzError(f"correction load incompatible after averaging (relative {defect:.2e})")
    H, _ = sys_.solver.solve_load(load)
    w = B.w1 if normalization == "unweighted" else B.wa
    H += (-(w @ u) - w @ H) / w.sum()
    return Correction(Field(mesh, H), u, c, nu_j, float(cj), float(defect), float(gap))


@dataclass
class Ansatz:
    cfg: AnsatzConfig
    mesh: Mesh
    U: Field
    parts: tuple            # (Correction_1, Correction_2)

    def V(self, y):
        """Scaled ansatz V(y) = U(lam y) at points of the expanded domain."""
        return self.U(self.cfg.lam * np.asarray(y, dtype=float))

    def scaled_nodes(self):
        return self.mesh.nodes / self.cfg.lam


def build_ansatz(cfg: AnsatzConfig, mesh: Mesh, a: WeightField, *, check_resolution=True,
                 system=None) -> Ansatz:
    sys_ = system or _System(mesh, a)
    p1 = correction_field(mesh, a, cfg.xi1, cfg.mu1, cfg.lam, normalization=cfg.normalization,
                          check_resolution=check_resolution, system=sys_)
    p2 = correction_field(mesh, a, cfg.xi2, cfg.mu2, cfg.lam, normalization=cfg.normalization,
                          check_resolution=check_resolution, system=sys_)
    U = (p1.u + p1.H.values) - (p2.u + p2.H.values)
    return Ansatz(cfg, mesh, Field(mesh, U), (p1, p2))


# ---------------------------------------------------------------------------
# weighted norms and residual


@dataclass
class WeightedNorms:
    """||h||_* and ||f||_** with decay weights sum_j (1 + |y - xi'_j|)^(-1-sigma), (-2-sigma)."""

    centers: tuple
    sigma: float = 0.1

    def weight(self, y, power):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return sum((1 + np.linalg.norm(y - np.asarray(c), axis=1)) ** (-power) for c in self.centers)

    def star(self, values, y):
        return float(np.max(np.abs(values) / self.weight(y, 1 + self.sigma)))

    def star2(self, values, y):
        return float(np.max(np.abs(values) / self.weight(y, 2 + self.sigma)))


@dataclass
class ResidualReport:
    lam: float
    mu1: float
    mu2: float
    R: np.ndarray             # residual at the boundary nodes (scaled variables)
    W: np.ndarray             # 2 lam^2 cosh V at the boundary nodes
    theta: np.ndarray
    r_star_norm: float
    theta_sup: float          # over the bubble cores
    theta_sup_global: float
    core_radius: float
    alpha_fit: float | None = None

    def as_dict(self):
        return {"lambda": self.lam, "mu1": self.mu1, "mu2": self.mu2, "r_star_norm": self.r_star_norm,
                "theta_sup": self.theta_sup, "theta_sup_global": self.theta_sup_global,
                "core_radius": self.core_radius, "alpha_fit": self.alpha_fit}


def ansatz_residual(cfg: AnsatzConfig, mesh: Mesh, a: WeightField, norms: WeightedNorms | None = None, *,
                    ansatz: Ansatz | None = None, core_radius=10.0, sigma=0.1) -> ResidualReport:
    """R = -(dV/dnu - 2 lam^2 sinh V) on the boundary of the expanded domain.

    The Neumann data of each correction is imposed exactly, so
    dU/dnu = (lam e^{u1} - c1) - (lam e^{u2} - c2) on the boundary and

        R = lam^2 [e^{u1} expm1(U - u1) - e^{u2} expm1(-U - u2)] + lam (c1 - c2),

    a form free of the large cancelling terms. theta is
    W / sum_j 2 mu_j/|y - xi'_j - mu_j nu'_j|^2 - 1; ``theta_sup`` is taken over
    the boundary cores |y - xi'_j| <= core_radius * mu_j (scaled units).
    """
    ans = ansatz or build_ansatz(cfg, mesh, a)
    lam = cfg.lam
    b = mesh.boundary
    p1, p2 = ans.parts
    U = ans.U.values[b]
    u1, u2 = p1.u[b], p2.u[b]
    if np.abs(U).max() > 700:
        raise FloatingPointError(f"|V| = {np.abs(U).max():.1f} exceeds the overflow guard")
    R = lam ** 2 * (np.exp(u1) * np.expm1(U - u1) - np.exp(u2) * np.expm1(-U - u2)) + lam * (p1.c - p2.c)
    W = 2 * lam ** 2 * np.cosh(U)
    lead = lam ** 2 * (np.exp(u1) + np.exp(u2))           # = sum_j 2 mu_j / |y - xi'_j - mu_j nu'_j|^2
    theta = W / lead - 1
    y = mesh.nodes[b] / lam
    centers = (cfg.xi1 / lam, cfg.xi2 / lam)
    norms = norms or WeightedNorms(centers, sigma)
    core = (np.linalg.norm(y - centers[0], axis=1) <= core_radius * cfg.mu1) | \
           (np.linalg.norm(y - centers[1], axis=1) <= core_radius * cfg.mu2)
    return ResidualReport(lam, cfg.mu1, cfg.mu2, R, W, theta, norms.star(R, y),
                          float(np.abs(theta[core]).max()) if core.any() else float("nan"),
                          float(np.abs(theta).max()), core_radius)


def rate_fit(lams, values):
    """Least-squares slope of log(values) against log(lams)."""
    x, y = np.log(np.asarray(lams, dtype=float)), np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def write_residual_report(path, reports, alpha=None):
    rows = []
    for r in reports:
        d = r.as_dict()
        d["alpha_fit"] = alpha
        rows.append(d)
    with open(path, "w") as fh:
        json.dump(rows if len(rows) != 1 else rows[0], fh, indent=2, sort_keys=True)
        fh.write("\n")
