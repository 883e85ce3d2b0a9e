"""Checks for the ``[assert]`` block of an experiment config.

Each key names a check, its value the tolerance or target. A check whose
inputs were not produced (step not run, or failed) fails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class CheckResult:
    name: str
    arg: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name} = {self.arg}: {self.detail}"

    def as_dict(self):
        return {"name": self.name, "arg": self.arg, "passed": self.passed, "detail": self.detail}


class _Missing(Exception):
    pass


def _need(results, key):
    if key not in results:
        raise _Missing(f"no {key} results (step not run or failed)")
    return results[key]


def _final_peaks(results):
    recs = _need(results, "diagnostics")
    if not recs:
        raise _Missing("branch has no points")
    return recs[-1]


def check_converged(results, arg):
    br = _need(results, "branch")
    want = arg.lower() in ("1", "true", "yes")
    ok = (not br["flagged"] and br["n_points"] == br["n_scheduled"]) == want
    return ok, f"{br['n_points']}/{br['n_scheduled']} points, flagged={br['flagged']}"


def check_peak_count(results, arg):
    n = int(arg)
    counts = [len(r.flux.peaks) for r in _need(results, "diagnostics")]
    rec = _final_peaks(results)
    return len(rec.flux.peaks) == n, f"peaks per point {counts}"


def check_flux_mass(results, arg):
    tol = float(arg)
    rec = _final_peaks(results)
    pk = rec.flux.peaks[:2]
    if len(pk) < 2:
        return False, f"{len(rec.flux.peaks)} peak(s) at lambda={rec.lam:.3g}"
    m = [p.mass / (2 * math.pi) for p in pk]
    ok = all(abs(abs(v) - 1) <= tol for v in m) and pk[0].sign != pk[1].sign
    return ok, f"masses/2pi = {', '.join(f'{v:+.4f}' for v in m)} at lambda={rec.lam:.3g}"


def check_peak_location(results, arg):
    rec = _final_peaks(results)
    h = _need(results, "mesh")["h"]
    if len(rec.xi_err) < 2:
        return False, f"{len(rec.xi_err)} located peak(s)"
    err = max(rec.xi_err)
    return err <= float(arg) * h, f"max distance {err:.3g} vs {float(arg):g} x h = {float(arg) * h:.3g}"


def check_mean_defect(results, arg):
    d = [r.mean_defect for r in _need(results, "diagnostics")]
    if not d:
        raise _Missing("branch has no points")
    return max(d) <= float(arg), f"max defect {max(d):.3g}"


def check_energy_window(results, arg):
    f = float(arg)
    recs = _need(results, "diagnostics")
    lead = _need(results, "energy_lead")
    v = np.array([r.energy_over_log for r in recs if r.lam < 1])
    if not v.size:
        raise _Missing("no points with lambda < 1")
    ok = bool(np.all((v >= lead / f) & (v <= lead * f)))
    return ok, f"E/log(1/lambda) in [{v.min():.4g}, {v.max():.4g}], window [{lead / f:.4g}, {lead * f:.4g}]"


def check_flux_growth(results, arg):
    from .diagnostics import flux_growth_ratio
    recs = _need(results, "diagnostics")
    r = flux_growth_ratio([x.lam for x in recs], [x.flux.total_abs for x in recs])
    return (math.isfinite(r) and r <= float(arg)), f"ratio {r:.4g}"


def check_mu_fit(results, arg):
    rec = _final_peaks(results)
    if len(rec.mu_gap) < 2:
        return False, "no mu fits against a prediction"
    return max(rec.mu_gap) <= float(arg), f"mu_hat = {', '.join(f'{m:.4g}' for m in rec.mu_fit)}"


def check_lambda1(results, arg):
    target, tol = (float(v) for v in arg.split(","))
    ev = _need(results, "spectrum")
    lam1 = next((v for v in ev if v > 1e-8), float("nan"))
    return abs(lam1 / target - 1) <= tol, f"lambda_1 = {lam1:.6g}"


def check_residual_rate(results, arg):
    res = _need(results, "ansatz")
    return res["alpha"] >= float(arg), f"alpha = {res['alpha']:.4g}, mis-scaled ratio {res['mis_ratio']:.3g}"


def check_axisym_residual(results, arg):
    ax = _need(results, "axisym")
    bound = float(arg) * (ax["h"] + ax["grid"] ** 2)
    return ax["residual"] <= bound, f"residual {ax['residual']:.4g} vs {bound:.4g} ({ax['stencils']} stencils)"


def check_geodesic_radii(results, arg):
    want = sorted(float(v) for v in arg.split(","))
    got = sorted(_need(results, "axisym")["radii"])
    ok = len(got) == len(want) and np.allclose(got, want, atol=1e-6)
    return ok, f"radii {', '.join(f'{r:.6g}' for r in got)}"


CHECKS = {
    "converged": check_converged,
    "peak_count": check_peak_count,
    "flux_mass": check_flux_mass,
    "peak_location": check_peak_location,
    "mean_defect": check_mean_defect,
    "energy_window": check_energy_window,
    "flux_growth": check_flux_growth,
    "mu_fit": check_mu_fit,
    "lambda1": check_lambda1,
    "residual_rate": check_residual_rate,
    "axisym_residual": check_axisym_residual,
    "geodesic_radii": check_geodesic_radii,
}


def parse_checks(block: dict):
    unknown = sorted(set(block) - set(CHECKS))
    if unknown:
        raise ValueError(f"unknown check(s) {unknown}; known: {sorted(CHECKS)}")
    return block


def run_checks(block: dict, results: dict):
    out = []
    for name in sorted(block):
        arg = block[name]
        try:
            ok, detail = CHECKS[name](results, arg)
        except _Missing as exc:
            ok, detail = False, str(exc)
        out.append(CheckResult(name, arg, bool(ok), detail))
    return out


__all__ = ["CHECKS", "CheckResult", "parse_checks", "run_checks"]
