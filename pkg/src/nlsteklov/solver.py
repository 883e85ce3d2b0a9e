"""Damped Newton for K u = lam B^a sinh u and natural continuation in lam.

The discrete problem is the P1 weak form of div(a grad u) = 0 with
du/dnu = lam sinh u, using the lumped boundary mass, so the nonlinearity is
nodal: F(u) = K u - lam wa * sinh(u), J(u) = K - lam diag(wa cosh u).

Ansatz seeds: the two-bubble ansatz of ``asymptotics`` approximates
du/dnu = 2 lam' sinh u, so a branch at parameter lam is seeded with the
ansatz built at lam' = lam / 2.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .asymptotics import AnsatzConfig, build_ansatz
from .fem import BoundaryMass, Field, assemble_boundary_mass, assemble_stiffness
from .geometry import Mesh, WeightField

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class ContinuationError(RuntimeError):
    pass


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 40
    backtrack: float = 0.5
    min_step: float = 2.0 ** -10
    armijo: float = 1e-4
    guard: float = 700.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.guard <= 700:
            raise ValueError("overflow guard must lie in (0, 700]")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass
class NewtonResult:
    u: Field
    iterations: int
    history: list                 # residual 2-norms, starting with the initial guess
    steps: list                   # accepted damping factors
    tail_ratio: float | None      # last residual / previous residual
    relative_residual: float

    @property
    def quadratic_tail(self):
        return self.iterations <= 2 or (self.tail_ratio is not None and self.tail_ratio <= 0.1)

    def as_dict(self):
        return {"iterations": self.iterations, "history": self.history, "steps": self.steps,
                "tail_ratio": self.tail_ratio, "relative_residual": self.relative_residual}


class SteklovProblem:
    """Assembled operators for one (mesh, weight)."""

    def __init__(self, mesh: Mesh, a: WeightField, K=None, B: BoundaryMass | None = None):
        self.mesh, self.a = mesh, a
        self.K = (K if K is not None else assemble_stiffness(mesh, a)).tocsr()
        self.B = B if B is not None else assemble_boundary_mass(mesh, a)
        self.wa = self.B.wa
        self.bnd = mesh.boundary

    def nonlinear(self, u):
        return self.wa * np.sinh(u)

    def residual(self, u, lam):
        return self.K @ u - lam * self.nonlinear(u)

    def jacobian(self, u, lam):
        return (self.K - sp.diags(lam * self.wa * np.cosh(u))).tocsc()

    def relative_residual(self, u, lam):
        F = self.residual(u, lam)
        scale = np.linalg.norm(self.K @ u) + lam * np.linalg.norm(self.nonlinear(u))
        nF = np.linalg.norm(F)
        return nF / scale if scale > 0 else (0.0 if nF == 0 else np.inf)

    def norm_a(self, v):
        """||v||_a^2 = v^T K v + (int a v)^2."""
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(max(v @ (self.K @ v), 0.0) + (self.wa @ v) ** 2))

    def compatibility(self, u):
        """Relative |int a sinh u| (the weak form tested with phi = 1)."""
        N = self.nonlinear(u)
        s = np.abs(N).sum()
        return float(abs(N.sum()) / s) if s > 1e-200 else 0.0


# ---------------------------------------------------------------------------
# deflation


@dataclass
class Deflation:
    """M(u) = prod_i (||u - u_i||_a^-p + shift)."""

    known: list
    power: float = 2.0
    shift: float = 1.0
    threshold: float = 1e-3

    def log_gradient(self, problem: SteklovProblem, u):
        """grad M / M."""
        g = np.zeros_like(u)
        for ui in self.known:
            d = u - ui
            Kd = problem.K @ d
            cd = problem.wa @ d
            n2 = max(d @ Kd + cd ** 2, 1e-300)
            m = n2 ** (-self.power / 2) + self.shift
            g += -self.power * n2 ** (-self.power / 2 - 1) * (Kd + problem.wa * cd) / m
        return g

    def value(self, problem: SteklovProblem, u):
        m = 1.0
        for ui in self.known:
            m *= problem.norm_a(u - ui) ** (-self.power) + self.shift
        return m

    def close_to(self, problem: SteklovProblem, u):
        for ui in self.known:
            if problem.norm_a(u - ui) <= self.threshold * max(1.0, problem.norm_a(ui)):
                return True
        return False


# ---------------------------------------------------------------------------
# Newton


def _condition_estimate(lu):
    d = np.abs(lu.U.diagonal())
    return float(d.max() / d.min()) if d.min() > 0 else np.inf


def newton_solve(problem: SteklovProblem, lam, u0, opts: NewtonOptions | None = None, *,
                 deflation: Deflation | None = None) -> NewtonResult:
    """Damped Newton iteration from u0 (Field or nodal array)."""
    opts = opts or NewtonOptions()
    if not lam > 0:
        raise ValueError("lambda must be positive")
    u = np.array(u0.values if isinstance(u0, Field) else u0, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial guess is not finite")
    if np.abs(u).max(initial=0.0) > opts.guard:
        raise NewtonError(f"initial |u| = {np.abs(u).max():.1f} exceeds the overflow guard",
                          {"reason": "overflow"})
    F = problem.residual(u, lam)
    history = [float(np.linalg.norm(F))]
    deflating = deflation is not None and bool(deflation.known)

    def merit(v, nF):
        # deflated iterations descend on ||M(u) F(u)||
        return nF * deflation.value(problem, v) if deflating else nF

    cur = merit(u, history[-1])
    steps = []
    cond = None
    for it in range(opts.max_iter + 1):
        rel = problem.relative_residual(u, lam)
        if rel <= opts.tol or history[-1] == 0.0:
            tail = history[-1] / history[-2] if len(history) >= 2 and history[-2] > 0 else None
            return NewtonResult(Field(problem.mesh, u), it, history, steps, tail, float(rel))
        if it == opts.max_iter:
            break
        try:
            lu = spla.splu(problem.jacobian(u, lam))
        except RuntimeError as exc:
            raise NewtonError(f"singular Jacobian at lambda={lam:.6g}: {exc}",
                              {"reason": "singular", "condition": np.inf, "iteration": it,
                               "history": history}) from exc
        cond = _condition_estimate(lu)
        if cond > 1e14:
            raise NewtonError(f"Jacobian nearly singular at lambda={lam:.6g} (condition ~ {cond:.2e})",
                              {"reason": "singular", "condition": cond, "iteration": it, "history": history})
        z = lu.solve(-F)
        if deflating:
            h = deflation.log_gradient(problem, u)
            # Sherman-Morrison on (M J + F grad M^T)
            z = z / (1.0 - h @ z)
        s = 1.0
        while True:
            trial = u + s * z
            if np.abs(trial).max() <= opts.guard:
                Ft = problem.residual(trial, lam)
                nt = float(np.linalg.norm(Ft))
                mt = merit(trial, nt)
                if mt <= (1 - opts.armijo * s) * cur:
                    break
            if s <= opts.min_step:
                if np.abs(trial).max() > opts.guard:
                    raise NewtonError(f"overflow guard tripped at lambda={lam:.6g}",
                                      {"reason": "overflow", "iteration": it, "history": history})
                break          # accept the minimal step and let the iteration budget decide
            s *= opts.backtrack
        u, F, cur = trial, Ft, mt
        history.append(nt)
        steps.append(s)
    raise NewtonError(f"no convergence in {opts.max_iter} iterations at lambda={lam:.6g}",
                      {"reason": "divergence", "history": history, "condition": cond})


# ---------------------------------------------------------------------------
# seeds


@dataclass
class Seed:
    kind: str                     # "trivial", "eigen" or "ansatz"
    n: int = 0
    amplitude: float = 0.0
    xi1: tuple | None = None
    xi2: tuple | None = None
    mu: tuple | None = None

    @classmethod
    def parse(cls, text: str) -> "Seed":
        """'trivial', 'eigen:n:amp' or 'ansatz:x,y:x,y[:mu1,mu2]'."""
        parts = text.strip().split(":")
        kind = parts[0]
        try:
            if kind == "trivial" and len(parts) == 1:
                return cls("trivial")
            if kind == "eigen" and len(parts) == 3:
                return cls("eigen", n=int(parts[1]), amplitude=float(parts[2]))
            if kind == "ansatz" and len(parts) in (3, 4):
                pts = [tuple(float(v) for v in p.split(",")) for p in parts[1:3]]
                if any(len(p) != 2 for p in pts):
                    raise ValueError
                mu = tuple(float(v) for v in parts[3].split(",")) if len(parts) == 4 else None
                if mu is not None and len(mu) != 2:
                    raise ValueError
                return cls("ansatz", xi1=pts[0], xi2=pts[1], mu=mu)
        except ValueError:
            pass
        raise ValueError(f"bad seed specification {text!r}")

    def describe(self):
        if self.kind == "eigen":
            return f"eigen:{self.n}:{self.amplitude:g}"
        if self.kind == "ansatz":
            s = f"ansatz:{self.xi1[0]:g},{self.xi1[1]:g}:{self.xi2[0]:g},{self.xi2[1]:g}"
            return s + (f":{self.mu[0]:.17g},{self.mu[1]:.17g}" if self.mu else "")
        return "trivial"

    def ansatz_config(self, lam, normalization="unweighted"):
        if self.mu is None:
            raise ValueError("ansatz seed has no mu; call resolve_mu first")
        return AnsatzConfig(self.xi1, self.xi2, self.mu[0], self.mu[1], lam / 2, normalization)


def resolve_mu(seed: Seed, curve, a: WeightField, *, h=0.1, levels=3, normalization="unweighted"):
    """Fill seed.mu from the Green's function on a nested mesh ladder."""
    from .greens import build_table, mesh_ladder, mu_parameters
    if seed.kind != "ansatz" or seed.mu is not None:
        return seed
    pts = [np.asarray(seed.xi1, dtype=float), np.asarray(seed.xi2, dtype=float)]
    ladder = mesh_ladder(curve, h, pts, levels=levels)
    table = build_table(ladder[-1], a, pts, normalization=normalization, ladder=ladder, regular=False)
    seed.mu = mu_parameters(table, pts[0], pts[1])
    return seed


def mean_split_shift(problem: SteklovProblem, v):
    """v0 + s(v0) with v0 = v minus its weighted mean and
    s = (1/2) log(int a e^{-v0} / int a e^{v0}), so that int a sinh(.) = 0."""
    wa = problem.wa
    v0 = v - (wa @ v) / wa.sum()
    m = np.abs(v0).max()
    # log-sum-exp form of the two boundary integrals
    lp = np.log(wa @ np.exp(v0 - m)) + m
    ln = np.log(wa @ np.exp(-v0 - m)) + m
    return v0 + 0.5 * (ln - lp)


def seed_field(problem: SteklovProblem, seed: Seed, lam, *, spectrum=None,
               normalization="unweighted") -> np.ndarray:
    mesh = problem.mesh
    if seed.kind == "trivial":
        return np.zeros(mesh.n_nodes)
    if seed.kind == "eigen":
        if spectrum is None or spectrum.vectors.shape[1] <= seed.n + 3:
            from .spectrum import steklov_spectrum
            # a few extra pairs so that the cluster containing n is complete
            spectrum = steklov_spectrum(problem.K, problem.B, seed.n + 4)
        v = spectrum.vectors[:, seed.n]
        cluster = next(c for c in spectrum.clusters if seed.n in c)
        if len(cluster) > 1:
            # inside a multiple eigenvalue use the member peaking at the first
            # boundary node, so that a mirror-symmetric mesh keeps the iterates
            # symmetric (a rotation-invariant family otherwise drifts)
            Vc = spectrum.vectors[:, cluster]
            w = Vc[mesh.boundary[0]]
            v = Vc @ (w / np.linalg.norm(w))
        return seed.amplitude * v
    if seed.kind == "ansatz":
        ans = build_ansatz(seed.ansatz_config(lam, normalization), mesh, problem.a)
        return mean_split_shift(problem, ans.U.values)
    raise ValueError(f"unknown seed kind {seed.kind!r}")


# ---------------------------------------------------------------------------
# continuation


@dataclass
class BranchPoint:
    lam: float
    u: Field
    iterations: int
    record: dict = field(default_factory=dict)


@dataclass
class Branch:
    seed: Seed
    points: list = field(default_factory=list)
    flagged: bool = False
    report: dict = field(default_factory=dict)

    @property
    def lambdas(self):
        return np.array([p.lam for p in self.points])

    def solution(self, lam):
        for p in self.points:
            if np.isclose(p.lam, lam, rtol=1e-12, atol=0):
                return p.u
        return None

    def append(self, point: BranchPoint):
        if self.points and not point.lam < self.points[-1].lam:
            raise ContinuationError("branch lambdas must be strictly decreasing")
        self.points.append(point)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        files = []
        for k, p in enumerate(self.points):
            name = f"u_{k:04d}.csv"
            _atomic(os.path.join(directory, name), lambda path, p=p: p.u.to_csv(path))
            files.append(name)
        index = {"seed": self.seed.describe(), "flagged": self.flagged, "report": _jsonable(self.report),
                 "points": [{"lambda": p.lam, "iterations": p.iterations, "file": f,
                             "record": _jsonable(p.record)} for p, f in zip(self.points, files)]}
        _atomic(os.path.join(directory, "branch.json"),
                lambda path: _write_json(path, index))

    @classmethod
    def load(cls, directory, mesh):
        with open(os.path.join(directory, "branch.json")) as fh:
            idx = json.load(fh)
        b = cls(Seed.parse(idx["seed"]), flagged=idx["flagged"], report=idx["report"])
        for e in idx["points"]:
            b.points.append(BranchPoint(e["lambda"], Field.from_csv(mesh, os.path.join(directory, e["file"])),
                                        e["iterations"], e["record"]))
        return b


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _atomic(path, writer):
    tmp = path + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def lambda_schedule(start, end, factor):
    """Geometric schedule start, start*factor, ... down to end (inclusive)."""
    if not (start > end > 0 and 0 < factor < 1):
        raise ValueError("need start > end > 0 and 0 < factor < 1")
    n = int(np.floor(np.log(end / start) / np.log(factor) + 1e-9))
    lams = list(start * factor ** np.arange(n + 1))
    if lams[-1] > end * (1 + 1e-12):
        lams.append(end)
    return np.array(lams)


def _deflation_at(deflate, lam, problem, opts_threshold, trivial=False):
    known = [np.zeros(problem.mesh.n_nodes)] if trivial else []
    for d in deflate or ():
        if isinstance(d, Branch):
            u = d.solution(lam)
            if u is not None:
                known.append(u.values)
        else:
            known.append(d.values if isinstance(d, Field) else np.asarray(d, dtype=float))
    return Deflation(known, threshold=opts_threshold) if known else None


def continuation(problem: SteklovProblem, seed: Seed, schedule, *, opts: NewtonOptions | None = None,
                 deflate=None, max_bisections=6, deflation_threshold=1e-3, spectrum=None,
                 normalization="unweighted", predictor=None) -> Branch:
    """Natural continuation along a strictly decreasing schedule.

    Each converged solution seeds the next lambda. For ansatz seeds the
    predictor adds the change of the ansatz between consecutive lambdas
    (``predictor="ansatz"``, the default for those seeds), which tracks the
    growing peaks; otherwise a secant predictor in lambda is used once two
    points exist. Eigen-seeded branches always deflate u = 0. Failed steps
    are bisected geometrically up to ``max_bisections`` times; an unresolved
    failure ends the branch with ``flagged`` set.
    """
    opts = opts or NewtonOptions()
    schedule = np.asarray(schedule, dtype=float)
    if schedule.ndim != 1 or schedule.size == 0 or np.any(np.diff(schedule) >= 0):
        raise ValueError("schedule must be strictly decreasing")
    if predictor is None:
        predictor = "ansatz" if seed.kind == "ansatz" else "secant"
    if predictor not in ("ansatz", "secant", "previous"):
        raise ValueError(f"unknown predictor {predictor!r}")
    nontrivial = seed.kind == "eigen"

    def guide(lam):
        return seed_field(problem, seed, lam, normalization=normalization)

    branch = Branch(seed)

    def solve_at(lam, u0):
        defl = _deflation_at(deflate, lam, problem, deflation_threshold, trivial=nontrivial)
        res = newton_solve(problem, lam, u0, opts)
        if defl is not None and defl.close_to(problem, res.u.values):
            res = newton_solve(problem, lam, u0, opts, deflation=defl)
            if defl.close_to(problem, res.u.values):
                raise NewtonError("deflated solve returned a known solution", {"reason": "deflation"})
            return res, True
        return res, False

    lam0 = schedule[0]
    u0 = seed_field(problem, seed, lam0, spectrum=spectrum, normalization=normalization)
    try:
        res, deflated = solve_at(lam0, u0)
    except NewtonError as exc:
        raise ContinuationError(f"seed did not converge at lambda={lam0:.6g}: {exc}") from exc
    branch.append(_point(problem, lam0, res, deflated, 0))
    prev_lam, prev_u = lam0, res.u.values
    prev_guide = guide(lam0) if predictor == "ansatz" else None
    # (lambda, u) of the point before the current one, for the secant predictor
    older = None

    for lam in schedule[1:]:
        target = lam
        cur_lam, cur_u, cur_guide, cur_older = prev_lam, prev_u, prev_guide, older
        substeps = 0
        bisections = 0
        while True:
            g = guide(target) if predictor == "ansatz" else None
            if g is not None:
                pred = cur_u + (g - cur_guide)
            elif predictor == "secant" and cur_older is not None:
                pred = cur_u + (target - cur_lam) / (cur_lam - cur_older[0]) * (cur_u - cur_older[1])
            else:
                pred = cur_u
            try:
                res, deflated = solve_at(target, pred)
            except (NewtonError, FloatingPointError) as exc:
                bisections += 1
                if bisections > max_bisections:
                    branch.flagged = True
                    branch.report = {"terminated_at": float(lam), "last_lambda": float(cur_lam),
                                     "reason": str(exc),
                                     "newton": getattr(exc, "report", {})}
                    log.warning("branch terminated before lambda=%.6g: %s", lam, exc)
                    return branch
                target = float(np.sqrt(cur_lam * target))
                continue
            substeps += 1
            if np.isclose(target, lam, rtol=1e-14, atol=0):
                break
            cur_older = (cur_lam, cur_u)
            cur_lam, cur_u, cur_guide = target, res.u.values, g
            target = lam
            bisections = 0
        branch.append(_point(problem, lam, res, deflated, substeps - 1))
        older = (cur_lam, cur_u)
        prev_lam, prev_u, prev_guide = lam, res.u.values, g
    return branch


def _point(problem, lam, res: NewtonResult, deflated, substeps):
    u = res.u.values
    rec = res.as_dict()
    rec.update({"deflated": deflated, "substeps": substeps, "compatibility": problem.compatibility(u),
                "max_abs": float(np.abs(u).max()), "norm_a": problem.norm_a(u)})
    return BranchPoint(float(lam), res.u, res.iterations, rec)


__all__ = ["NewtonOptions", "NewtonResult", "NewtonError", "SteklovProblem", "Deflation", "newton_solve",
           "Seed", "resolve_mu", "seed_field", "Branch", "BranchPoint", "continuation", "lambda_schedule",
           "ContinuationError"]
