"""Experiment steps run from an ExperimentConfig.

Every step writes its files into the output directory through a temporary
name and an atomic rename. Data files carry no timestamps, so reruns of the
same config give identical bytes; wall-clock times only go to the log.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import platform
import time

import numpy as np

from . import __version__
from .config import ExperimentConfig

log = logging.getLogger("nlsteklov")

DEPENDS = {"mesh": (), "spectrum": (), "green": (), "ansatz": (), "solve": ("mesh",),
           "continue": ("mesh",), "diagnose": ("continue",), "axisym": ("continue",), "report": ()}


class StepError(RuntimeError):
    pass


def _atomic(path, writer):
    tmp = path + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return _clean(x.item())
    return x


def write_json(path, obj):
    def w(p):
        with open(p, "w") as fh:
            json.dump(_clean(obj), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    _atomic(path, w)


def write_csv(path, header, rows):
    def w(p):
        with open(p, "w") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in r) + "\n")
    _atomic(path, w)


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    import scipy
    import triangle
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "triangle": getattr(triangle, "__version__", "unknown"), "nlsteklov": __version__}


class Context:
    """Lazily built shared objects of one experiment (all immutable once built)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = cfg.run.out
        os.makedirs(self.out, exist_ok=True)
        self.curve = cfg.curve()
        self.a = cfg.weight_field()
        self.results = {}
        self.status = {}
        self._seed = None
        self._mesh = None
        self._problem = None
        self.branch = None

    def path(self, *names):
        p = os.path.join(self.out, *names)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    # -- shared objects ----------------------------------------------------

    def predicted_points(self):
        if self.cfg.green.sources:
            return [np.asarray(p, dtype=float) for p in self.cfg.green.sources]
        from .geometry import boundary_critical_points
        return [p.xi for p in boundary_critical_points(self.a, self.curve)]

    @property
    def seed(self):
        if self._seed is None:
            seed = self.cfg.seed
            if seed.kind == "ansatz" and seed.mu is None:
                mu = self.results.get("green", {}).get("mu_by_points", {}).get(
                    (tuple(seed.xi1), tuple(seed.xi2)))
                if mu is not None:
                    seed.mu = tuple(mu)
                else:
                    from .solver import resolve_mu
                    h = self.cfg.mesh.h
                    resolve_mu(seed, self.curve, self.a, h=h[0], levels=len(h),
                               normalization=self.cfg.green.normalization)
            self._seed = seed
        return self._seed

    @property
    def mesh(self):
        if self._mesh is None:
            from .asymptotics import ansatz_mesh
            from .geometry import build_mesh
            m = self.cfg.mesh
            seed = self.seed
            if seed.kind == "ansatz":
                lam_min = min(self.cfg.cont.lambda_end, self.cfg.solve.lam)
                self._mesh = ansatz_mesh(self.curve, seed.ansatz_config(lam_min), m.solve_h,
                                         edges_per_width=m.edges_per_width, mirror=m.mirror, symmetry=m.symmetry)
            else:
                grading = [(p, min(m.grade, m.solve_h)) for p in self.predicted_points()] if m.grade else []
                self._mesh = build_mesh(self.curve, m.solve_h, grading, mirror=m.mirror, symmetry=m.symmetry)
        return self._mesh

    @property
    def problem(self):
        if self._problem is None:
            from .solver import SteklovProblem
            self._problem = SteklovProblem(self.mesh, self.a)
        return self._problem

    def newton_options(self):
        from .solver import NewtonOptions
        return NewtonOptions(tol=self.cfg.solve.tol, max_iter=self.cfg.solve.max_iter)

    def load_branch(self):
        if self.branch is None:
            from .solver import Branch
            d = self.path("branch", "branch.json")
            if not os.path.exists(d):
                raise StepError("no branch in the output directory; run 'continue' first")
            self.branch = Branch.load(os.path.dirname(d), self.mesh)
        return self.branch

    # -- steps ---------------------------------------------------------------

    def step_mesh(self):
        from .plots import mesh_plot
        mesh = self.mesh
        _atomic(self.path("mesh.txt"), mesh.save)
        bl = mesh.boundary_edge_lengths()
        info = {"n_nodes": mesh.n_nodes, "n_triangles": len(mesh.triangles), "n_boundary": len(mesh.boundary),
                "h": mesh.h, "boundary_h_min": float(bl.min()), "boundary_h_max": float(bl.max()),
                "grading": [[list(map(float, p)), float(lh)] for p, lh in mesh.grading],
                "seed": self.seed.describe()}
        write_json(self.path("mesh.json"), info)
        marks = [p for p, _ in mesh.grading]
        _atomic(self.path("mesh.svg"), lambda p: mesh_plot(p, mesh, title="solution mesh", marks=marks))
        self.results["mesh"] = info

    def step_spectrum(self):
        from .fem import assemble_boundary_mass, assemble_stiffness
        from .geometry import build_mesh
        from .plots import line_chart
        from .spectrum import steklov_spectrum
        m = self.cfg.mesh
        h = self.cfg.spectrum.h or m.solve_h
        mesh = build_mesh(self.curve, h, mirror=m.mirror, symmetry=m.symmetry)
        sp = steklov_spectrum(assemble_stiffness(mesh, self.a), assemble_boundary_mass(mesh, self.a),
                              self.cfg.spectrum.count)
        _atomic(self.path("spectrum.csv"), sp.to_csv)
        write_json(self.path("spectrum.json"), {"h": mesh.h, "n_nodes": mesh.n_nodes,
                                                "eigenvalues": sp.eigenvalues, "clusters": sp.clusters,
                                                "multiplicities": sp.multiplicities,
                                                "max_residual": float(np.max(sp.residuals))})
        n = np.arange(len(sp.eigenvalues))
        _atomic(self.path("spectrum.svg"), lambda p: line_chart(
            p, [("lambda_n", n, sp.eigenvalues)], title="Steklov eigenvalues", xlabel="n", ylabel="lambda_n"))
        self.results["spectrum"] = [float(v) for v in sp.eigenvalues]

    def step_green(self):
        from .geometry import boundary_critical_points
        from .greens import build_table, mesh_ladder, mu_parameters
        crit = boundary_critical_points(self.a, self.curve)
        write_csv(self.path("critical_points.csv"), ["x1", "x2", "t", "kind", "degree"],
                  [[p.xi[0], p.xi[1], p.t, p.kind, str(p.degree_sign)] for p in crit])
        pts = self.predicted_points()
        if not pts:
            raise StepError("no Green sources: a has no C1-stable boundary critical points; set [green] sources")
        h = self.cfg.mesh.h
        if len(h) != 3:
            raise StepError("[mesh] h must have three levels for the Robin extrapolation")
        ladder = mesh_ladder(self.curve, h[0], pts, levels=len(h))
        table = build_table(ladder[-1], self.a, pts, normalization=self.cfg.green.normalization,
                            ladder=ladder, regular=False)
        rows = []
        for j, p in enumerate(pts):
            e = table.robin[j]
            rows.append([p[0], p[1], e.value, e.error, "true" if e.extrapolated else "false", e.flag or "-"])
        write_csv(self.path("robin.csv"), ["x1", "x2", "robin", "error", "extrapolated", "flag"], rows)
        doc = {"ladder_h": table.ladder_h, "normalization": table.normalization,
               "robin": {str(j): e.as_dict() for j, e in sorted(table.robin.items())},
               "sources": [list(map(float, p)) for p in pts]}
        res = {"mu_by_points": {}}
        if len(pts) >= 2:
            mu = mu_parameters(table, pts[0], pts[1])
            doc["mu"] = list(mu)
            res["mu"] = mu
            res["mu_by_points"][(tuple(map(float, pts[0])), tuple(map(float, pts[1])))] = mu
        write_json(self.path("green.json"), doc)
        self.results["green"] = res

    def _ansatz_points(self):
        seed = self.cfg.seed
        if seed.kind == "ansatz":
            s = self.seed
            return np.asarray(s.xi1), np.asarray(s.xi2), s.mu
        pts = self.predicted_points()
        if len(pts) < 2:
            raise StepError("ansatz needs two concentration points")
        mu = self.results.get("green", {}).get("mu")
        if mu is None:
            from .solver import Seed, resolve_mu
            s = resolve_mu(Seed("ansatz", xi1=tuple(pts[0]), xi2=tuple(pts[1])), self.curve, self.a,
                           h=self.cfg.mesh.h[0], levels=len(self.cfg.mesh.h))
            mu = s.mu
        return pts[0], pts[1], mu

    def step_ansatz(self):
        from .asymptotics import AnsatzConfig, ansatz_mesh, ansatz_residual, rate_fit
        from .plots import line_chart
        xi1, xi2, mu = self._ansatz_points()
        spec = self.cfg.ansatz
        reps = []
        for lam in spec.lambdas:
            c = AnsatzConfig(xi1, xi2, mu[0], mu[1], lam)
            reps.append(ansatz_residual(c, ansatz_mesh(self.curve, c, spec.h), self.a, sigma=spec.sigma))
        lams = [r.lam for r in reps]
        norms = [r.r_star_norm for r in reps]
        alpha = rate_fit(lams, norms) if len(reps) >= 2 else float("nan")
        c = AnsatzConfig(xi1, xi2, mu[0] * spec.mis_scale, mu[1], lams[-1])
        bad = ansatz_residual(c, ansatz_mesh(self.curve, c, spec.h), self.a, sigma=spec.sigma)
        ratio = bad.r_star_norm / norms[-1]
        write_csv(self.path("residual.csv"),
                  ["lambda", "mu1", "mu2", "r_star_norm", "theta_sup", "theta_sup_global"],
                  [[r.lam, r.mu1, r.mu2, r.r_star_norm, r.theta_sup, r.theta_sup_global] for r in reps])
        write_json(self.path("residual.json"), {"alpha_fit": alpha, "mis_scale": spec.mis_scale,
                                                "mis_scaled_r_star_norm": bad.r_star_norm, "mis_ratio": ratio,
                                                "points": [r.as_dict() for r in reps],
                                                "xi1": list(map(float, xi1)), "xi2": list(map(float, xi2))})
        _atomic(self.path("residual.svg"), lambda p: line_chart(
            p, [("||R||_*", lams, norms), ("theta (cores)", lams, [r.theta_sup for r in reps])],
            title="ansatz residual", xlabel="lambda", ylabel="value", logx=True, logy=True))
        self.results["ansatz"] = {"alpha": alpha, "mis_ratio": ratio}

    def step_solve(self):
        from .solver import NewtonError, newton_solve, seed_field
        lam = self.cfg.solve.lam
        P = self.problem
        u0 = seed_field(P, self.seed, lam)
        try:
            res = newton_solve(P, lam, u0, self.newton_options())
        except NewtonError as exc:
            write_json(self.path("newton.json"), {"lambda": lam, "converged": False, "reason": str(exc),
                                                  "report": exc.report, "seed": self.seed.describe()})
            raise StepError(f"Newton failed at lambda={lam:g}: {exc}") from exc
        _atomic(self.path("solution.csv"), res.u.to_csv)
        doc = res.as_dict()
        doc.update({"lambda": lam, "converged": True, "seed": self.seed.describe(),
                    "compatibility": P.compatibility(res.u.values)})
        write_json(self.path("newton.json"), doc)
        self.results["solve"] = doc

    def step_continue(self):
        from .solver import Branch, ContinuationError, continuation
        cfg = self.cfg.cont
        sched = cfg.schedule()
        deflate = [Branch.load(self.cfg._path(d), self.mesh) for d in cfg.deflate]
        try:
            br = continuation(self.problem, self.seed, sched, opts=self.newton_options(), deflate=deflate,
                              max_bisections=cfg.max_bisections)
        except ContinuationError as exc:
            cause = exc.__cause__
            write_json(self.path("continuation_failure.json"),
                       {"seed": self.seed.describe(), "lambda": float(sched[0]), "reason": str(exc),
                        "newton": getattr(cause, "report", {})})
            self.results["branch"] = {"flagged": True, "n_points": 0, "n_scheduled": len(sched)}
            raise StepError(str(exc)) from exc
        br.save(os.path.join(self.out, "branch"))
        self.branch = br
        self.results["branch"] = {"flagged": br.flagged, "n_points": len(br.points), "n_scheduled": len(sched),
                                  "report": br.report}
        if br.flagged:
            log.warning("branch flagged: %s", br.report.get("reason"))

    def _predicted_xi(self):
        seed = self.seed
        if seed.kind == "ansatz":
            return [np.asarray(seed.xi1, dtype=float), np.asarray(seed.xi2, dtype=float)]
        return self.predicted_points()

    def step_diagnose(self):
        from .diagnostics import concentration_report, write_report_json, write_summary_csv
        from .plots import boundary_strip, line_chart
        br = self.load_branch()
        if not br.points:
            raise StepError("branch has no points")
        d = self.cfg.diagnose
        xi = self._predicted_xi()
        mu = self.seed.mu if self.seed.kind == "ansatz" else None
        recs = concentration_report(br, self.problem, self.curve, predicted_xi=xi, predicted_mu=mu,
                                    fit_radius=d.fit_radius, peak_factor=d.peak_factor,
                                    support_fraction=d.support_fraction)
        _atomic(self.path("summary.csv"), lambda p: write_summary_csv(p, recs))
        lead = 2 * math.pi * float(sum(self.a(np.asarray(p)) for p in xi[:2]))
        _atomic(self.path("diagnostics.json"), lambda p: write_report_json(
            p, recs, {"seed": br.seed.describe(), "energy_lead": lead, "flagged": br.flagged,
                      "predicted_xi": [list(map(float, p)) for p in xi],
                      "predicted_mu": list(mu) if mu else None}))
        last = recs[-1]
        fm = last.flux
        b = self.mesh.boundary
        write_csv(self.path("flux_density.csv"), ["t", "x1", "x2", "density"],
                  [[t, x[0], x[1], f] for t, x, f in zip(fm.t, self.mesh.nodes[b], fm.density)])
        lams = [r.lam for r in recs]
        _atomic(self.path("flux_strip.svg"), lambda p: boundary_strip(
            p, fm.t, fm.density, title=f"flux density lambda sinh u at lambda = {last.lam:.3g}"))
        _atomic(self.path("energy.svg"), lambda p: line_chart(
            p, [("E / log(1/lambda)", lams, [r.energy_over_log for r in recs]),
                ("2 pi (a(xi1) + a(xi2))", lams, [lead] * len(lams))],
            title="energy scaling", xlabel="lambda", ylabel="E / log(1/lambda)", logx=True))
        _atomic(self.path("flux_total.svg"), lambda p: line_chart(
            p, [("total |flux|", lams, [r.flux.total_abs for r in recs])],
            title="total boundary flux", xlabel="lambda", ylabel="int |lambda sinh u| ds", logx=True))
        self.results["diagnostics"] = recs
        self.results["energy_lead"] = lead

    def step_axisym(self):
        from .axisym import CartesianGrid, TorusDomain, lift_to_3d, predicted_points, write_geodesics
        from .diagnostics import flux_measure
        if self.a.name != "x1":
            raise StepError("the axisymmetric lift needs the weight a = x1")
        br = self.load_branch()
        if not br.points:
            raise StepError("branch has no points")
        pt = br.points[-1]
        T = TorusDomain(self.curve)
        spec = self.cfg.axisym
        pts = predicted_points(T)
        signs = [int(np.sign(pt.u.values[self.mesh.nearest_boundary_node(p)])) for p in pts]
        grid = CartesianGrid.covering(*T.bounding_box(), spec.grid)
        lift = lift_to_3d(pt.u, grid, domain=T, concentration=pts, signs=signs, outside="nan",
                          threads=self.cfg.run.threads)
        r, n = lift.residual(exclude=spec.exclude)
        fm = flux_measure(pt.u, pt.lam, self.problem.B)
        detected = [{"radius": float(p.location[0]), "height": float(p.location[1]), "sign": p.sign,
                     "mass": p.mass} for p in fm.peaks]
        write_geodesics(self.path("geodesics.json"), lift.geodesics,
                        {"lambda": pt.lam, "detected_peaks": _clean(detected), "fd_residual": r,
                         "fd_stencils": n, "grid": spec.grid, "exclude": spec.exclude, "mesh_h": self.mesh.h})
        coarse = CartesianGrid.covering(*T.bounding_box(), spec.csv_grid)
        small = lift_to_3d(pt.u, coarse, domain=T, outside="nan", threads=self.cfg.run.threads)
        _atomic(self.path("lift3d.csv"), small.to_csv)
        self.results["axisym"] = {"residual": r, "stencils": n, "h": self.mesh.h, "grid": spec.grid,
                                  "radii": [g.radius for g in lift.geodesics]}

    def step_report(self):
        from .checks import run_checks
        self._restore()
        checks = run_checks(self.cfg.checks, self.results)
        for c in checks:
            print(c.line())
        write_json(self.path("asserts.json"), {"checks": [c.as_dict() for c in checks],
                                               "all_passed": all(c.passed for c in checks)})
        self.results["checks"] = checks
        return checks

    def _restore(self):
        """Fill results of steps not run in this process from their files."""
        if "spectrum" not in self.results and os.path.exists(self.path("spectrum.json")):
            with open(self.path("spectrum.json")) as fh:
                self.results["spectrum"] = json.load(fh)["eigenvalues"]
        if "ansatz" not in self.results and os.path.exists(self.path("residual.json")):
            with open(self.path("residual.json")) as fh:
                d = json.load(fh)
            self.results["ansatz"] = {"alpha": d["alpha_fit"], "mis_ratio": d["mis_ratio"]}
        if "mesh" not in self.results and os.path.exists(self.path("mesh.json")):
            with open(self.path("mesh.json")) as fh:
                self.results["mesh"] = json.load(fh)
        if "branch" not in self.results and os.path.exists(self.path("branch", "branch.json")):
            with open(self.path("branch", "branch.json")) as fh:
                d = json.load(fh)
            sched = self.cfg.cont.schedule()
            self.results["branch"] = {"flagged": d["flagged"], "n_points": len(d["points"]),
                                      "n_scheduled": len(sched), "report": d["report"]}
            if "diagnostics" not in self.results:
                try:
                    self.step_diagnose()
                except StepError:
                    pass
        if "axisym" not in self.results and os.path.exists(self.path("geodesics.json")):
            with open(self.path("geodesics.json")) as fh:
                d = json.load(fh)
            self.results["axisym"] = {"residual": d["fd_residual"], "stencils": d["fd_stencils"],
                                      "h": d["mesh_h"], "grid": d["grid"],
                                      "radii": [g["radius"] for g in d["geodesics"]]}

    # -- orchestration -------------------------------------------------------

    def run_step(self, name):
        failed = [d for d in DEPENDS[name] if self.status.get(d, "ok") not in ("ok",)]
        if failed:
            self.status[name] = f"skipped (dependency {failed[0]} {self.status[failed[0]]})"
            log.error("%s: %s", name, self.status[name])
            return False
        t0 = time.perf_counter()
        try:
            getattr(self, "step_" + name)()
        except Exception as exc:           # recorded in the manifest; downstream steps are skipped
            self.status[name] = f"failed: {exc}"
            log.error("%s failed: %s", name, exc)
            return False
        self.status[name] = "ok"
        log.info("%s done in %.1fs", name, time.perf_counter() - t0)
        return True

    def manifest(self):
        outputs = {}
        for root, _, files in sorted(os.walk(self.out)):
            for f in sorted(files):
                p = os.path.join(root, f)
                rel = os.path.relpath(p, self.out)
                if rel != "manifest.json" and not f.endswith(".tmp") and not f.endswith(".log"):
                    outputs[rel] = sha256(p)
        nopts = self.newton_options()
        doc = {"config": self.cfg.text, "config_sha256": self.cfg.digest(), "base_dir": self.cfg.base_dir,
               "versions": versions(), "steps": self.status,
               "tolerances": {"newton_tol": nopts.tol, "newton_max_iter": nopts.max_iter,
                              "max_bisections": self.cfg.cont.max_bisections,
                              "peak_factor": self.cfg.diagnose.peak_factor,
                              "support_fraction": self.cfg.diagnose.support_fraction,
                              "asserts": self.cfg.checks},
               "seed": self.cfg.cont.seed, "overrides": self.cfg.overrides, "outputs": outputs}
        if "checks" in self.results:
            doc["asserts_passed"] = all(c.passed for c in self.results["checks"])
        write_json(self.path("manifest.json"), doc)
        return doc


def run(cfg: ExperimentConfig, steps=None):
    """Run ``steps`` (default: the config's [run] steps) in dependency order.

    Returns (exit status, context): 0 when every step succeeded and every
    assert passed, 1 when an assert failed, 2 when a step failed.
    """
    from .config import STEPS
    steps = list(steps or cfg.run.steps)
    ctx = Context(cfg)
    for name in STEPS:
        if name in steps:
            ctx.run_step(name)
    if "report" not in steps and cfg.checks:
        ctx.run_step("report")
    ctx.manifest()
    if any(s != "ok" for s in ctx.status.values()):
        return 2, ctx
    if any(not c.passed for c in ctx.results.get("checks", [])):
        return 1, ctx
    return 0, ctx


__all__ = ["Context", "run", "StepError", "write_json", "write_csv", "DEPENDS", "versions"]
