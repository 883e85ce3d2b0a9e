"""Observables on computed solutions: energy, mean split, boundary flux and
concentration fits.

Conventions: ``B`` is the BoundaryMass of the solution mesh (it carries the
weight), flux densities are lam * sinh(u) at the boundary nodes, and masses
are reported in both the unweighted (ds) and weighted (a ds) measures.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .fem import BoundaryMass, Field

SUMMARY_HEADER = ["lambda", "energy", "energy_over_log", "flux_total", "xi1_err", "xi2_err", "mu1_fit", "mu2_fit"]


def _vals(u):
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


def energy(u, lam, K, B: BoundaryMass, guard=700.0):
    """E = 1/2 u^T K u - lam * int a (cosh u - 1)."""
    v = _vals(u)
    if np.abs(v).max(initial=0.0) > guard:
        raise FloatingPointError(f"|u| = {np.abs(v).max():.1f} exceeds the overflow guard")
    # cosh u - 1 = 2 sinh^2(u/2) avoids cancellation for small u
    return 0.5 * float(v @ (K @ v)) - lam * float(B.wa @ (2 * np.sinh(0.5 * v) ** 2))


def dirichlet(u, K):
    v = _vals(u)
    return float(v @ (K @ v))


def mean_split(u, B: BoundaryMass):
    """(u0, s, defect): s = weighted boundary mean, u0 = u - s and
    defect = |s - 1/2 log(int a e^{-u0} / int a e^{u0})|."""
    v = _vals(u)
    wa = B.wa
    s = float(wa @ v) / wa.sum()
    u0 = v - s
    b = B.mesh.boundary
    x = u0[b]
    m = np.abs(x).max(initial=0.0)
    lp = math.log(float(wa[b] @ np.exp(x - m))) + m
    ln = math.log(float(wa[b] @ np.exp(-x - m))) + m
    defect = abs(s - 0.5 * (ln - lp))
    mesh = u.mesh if isinstance(u, Field) else B.mesh
    return Field(mesh, u0), s, float(defect)


def _weighted_median(x, w):
    order = np.argsort(x)
    cw = np.cumsum(w[order])
    return float(x[order][np.searchsorted(cw, 0.5 * cw[-1])])


@dataclass
class Peak:
    index: int                 # position in the boundary loop
    location: np.ndarray
    t: float
    sign: int
    height: float              # |density| at the peak
    mass: float                # unweighted, signed
    weighted_mass: float       # signed
    window: tuple              # (first, last) loop positions of the support arc

    def as_dict(self):
        return {"location": self.location.tolist(), "t": self.t, "sign": self.sign, "height": self.height,
                "mass": self.mass, "weighted_mass": self.weighted_mass, "window": list(self.window)}


@dataclass
class FluxMeasure:
    t: np.ndarray
    density: np.ndarray
    total_abs: float
    total_abs_weighted: float
    signed: float
    signed_weighted: float
    peaks: list
    flagged: bool = False

    def as_dict(self):
        return {"total_abs": self.total_abs, "total_abs_weighted": self.total_abs_weighted,
                "signed": self.signed, "signed_weighted": self.signed_weighted,
                "peaks": [p.as_dict() for p in self.peaks], "flagged": self.flagged}


def flux_measure(u, lam, B: BoundaryMass, *, converged=True, peak_factor=5.0,
                 support_fraction=1e-3) -> FluxMeasure:
    """Boundary flux density lam sinh u and its peak decomposition.

    A peak is the maximum of |density| on a maximal same-sign arc where
    |density| exceeds ``peak_factor`` times its arclength-weighted median.
    Its mass integrates the density over the contiguous same-sign arc around
    the peak where |density| >= support_fraction * height.
    """
    mesh = B.mesh
    b = mesh.boundary
    v = _vals(u)[b]
    f = lam * np.sinh(v)
    w1, wa = B.w1[b], B.wa[b]
    af = np.abs(f)
    out = FluxMeasure(mesh.boundary_t.copy(), f, float(w1 @ af), float(wa @ af), float(w1 @ f),
                      float(wa @ f), [], not converged)
    if not af.any():
        return out
    thr = peak_factor * _weighted_median(af, w1)
    n = len(b)
    above = (af > thr) & (f != 0)
    if above.all() and np.all(np.sign(f) == np.sign(f[0])):
        arcs = [np.arange(n)]
    else:
        # split the loop into maximal runs of (above, same sign)
        key = np.where(above, np.sign(f), 0).astype(int)
        starts = [i for i in range(n) if key[i] != 0 and key[i - 1] != key[i]]
        arcs = []
        for s in starts:
            run = [s]
            i = (s + 1) % n
            while key[i] == key[s] and i != s:
                run.append(i)
                i = (i + 1) % n
            arcs.append(np.array(run))
    for arc in arcs:
        k = int(arc[np.argmax(af[arc])])
        sg = int(np.sign(f[k]))
        lim = support_fraction * af[k]
        lo = k
        while np.sign(f[(lo - 1) % n]) == sg and af[(lo - 1) % n] >= lim and (lo - 1) % n != k:
            lo -= 1
        hi = k
        while np.sign(f[(hi + 1) % n]) == sg and af[(hi + 1) % n] >= lim and (hi + 1) % n != lo % n:
            hi += 1
        idx = np.arange(lo, hi + 1) % n
        out.peaks.append(Peak(k, mesh.nodes[b[k]].copy(), float(mesh.boundary_t[k]), sg, float(af[k]),
                              float(w1[idx] @ f[idx]), float(wa[idx] @ f[idx]), (int(lo % n), int(hi % n))))
    out.peaks.sort(key=lambda p: -p.height)
    return out


def fit_mu(u, curve, xi_hat, lam_eff, radius, sign=1):
    """Least-squares mu for sign*u ~ log(2 mu / |x - (xi + lam_eff mu nu)|^2) on the
    boundary nodes with |x - xi_hat| <= radius. Returns (mu, rms) or (nan, nan)."""
    mesh = u.mesh
    b = mesh.boundary
    x = mesh.nodes[b]
    sel = np.linalg.norm(x - xi_hat, axis=1) <= radius
    if sel.sum() < 3:
        return float("nan"), float("nan")
    t, _ = curve.project(np.asarray(xi_hat, dtype=float))
    xi = curve.point(t)
    nu = curve.normal(t)
    y = sign * u.values[b][sel]
    xs = x[sel]

    def loss(logmu):
        mu = math.exp(logmu)
        r2 = np.sum((xs - xi - lam_eff * mu * nu) ** 2, axis=1)
        return float(np.mean((y - np.log(2 * mu / r2)) ** 2))

    res = minimize_scalar(loss, bounds=(math.log(1e-3), math.log(1e3)), method="bounded",
                          options={"xatol": 1e-10})
    return float(math.exp(res.x)), float(math.sqrt(res.fun))


@dataclass
class DiagnosticsRecord:
    lam: float
    energy: float
    dirichlet: float
    mean: float
    mean_defect: float
    flux: FluxMeasure
    xi_hat: list = field(default_factory=list)
    xi_err: list = field(default_factory=list)
    mu_fit: list = field(default_factory=list)
    mu_gap: list = field(default_factory=list)
    note: str = ""

    @property
    def energy_over_log(self):
        return self.energy / math.log(1 / self.lam) if self.lam < 1 else float("nan")

    def summary_row(self):
        def pick(seq, i):
            return seq[i] if len(seq) > i and seq[i] is not None else float("nan")
        return [self.lam, self.energy, self.energy_over_log, self.flux.total_abs,
                pick(self.xi_err, 0), pick(self.xi_err, 1), pick(self.mu_fit, 0), pick(self.mu_fit, 1)]

    def as_dict(self):
        return {"lambda": self.lam, "energy": self.energy, "energy_over_log": self.energy_over_log,
                "dirichlet": self.dirichlet, "mean": self.mean, "mean_defect": self.mean_defect,
                "flux": self.flux.as_dict(), "xi_hat": [list(map(float, x)) for x in self.xi_hat],
                "xi_err": self.xi_err, "mu_fit": self.mu_fit, "mu_gap": self.mu_gap, "note": self.note}


def diagnose(u: Field, lam, K, B: BoundaryMass, *, converged=True, **flux_kw) -> DiagnosticsRecord:
    _, s, defect = mean_split(u, B)
    return DiagnosticsRecord(float(lam), energy(u, lam, K, B), dirichlet(u, K), s, defect,
                             flux_measure(u, lam, B, converged=converged, **flux_kw))


def concentration_report(branch, problem, curve, *, predicted_xi=None, predicted_mu=None,
                         fit_radius=10.0, lam_scale=0.5, **flux_kw):
    """Diagnostics per branch point with peak locations and mu fits.

    Peaks are ordered positive first. ``predicted_xi`` defaults to the
    C1-stable critical points of a on the curve; each peak is compared with
    the nearest. The fit uses the bubble profile at lam_eff = lam_scale * lam
    (the solver's problem is du/dnu = lam sinh u, for which the ansatz
    parameter is lam/2) over |x - xi_hat| <= fit_radius * lam.
    """
    from .geometry import boundary_critical_points
    if predicted_xi is None:
        predicted_xi = [p.xi for p in boundary_critical_points(problem.a, curve)]
    predicted_xi = [np.asarray(p, dtype=float) for p in predicted_xi]
    records = []
    for pt in branch.points:
        rec = diagnose(pt.u, pt.lam, problem.K, problem.B, **flux_kw)
        peaks = rec.flux.peaks
        if len(peaks) < 2:
            rec.note = f"{len(peaks)} flux peak(s); fit skipped"
            records.append(rec)
            continue
        pos = [p for p in peaks if p.sign > 0]
        neg = [p for p in peaks if p.sign < 0]
        chosen = ([pos[0]] if pos else []) + ([neg[0]] if neg else [])
        if len(peaks) != 2 or len(chosen) != 2:
            rec.note = f"{len(peaks)} flux peaks ({len(pos)} positive, {len(neg)} negative)"
        for j, pk in enumerate(chosen):
            rec.xi_hat.append(pk.location)
            if predicted_xi:
                rec.xi_err.append(float(min(np.linalg.norm(pk.location - q) for q in predicted_xi)))
            mu, _ = fit_mu(pt.u, curve, pk.location, lam_scale * pt.lam, fit_radius * pt.lam, pk.sign)
            rec.mu_fit.append(mu)
            if predicted_mu is not None and j < len(predicted_mu):
                rec.mu_gap.append(abs(mu - predicted_mu[j]) / predicted_mu[j])
        records.append(rec)
    return records


def flux_growth_ratio(lams, totals, split=1e-2):
    """max total |flux| for lam < split over max for lam >= split (<= 1.25 reads as no growth)."""
    lams, totals = np.asarray(lams), np.asarray(totals)
    lo, hi = totals[lams < split], totals[lams >= split]
    if not lo.size or not hi.size:
        return float("nan")
    return float(lo.max() / hi.max())


def write_summary_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in records:
            w.writerow([f"{v:.17g}" for v in r.summary_row()])


def write_report_json(path, records, extra=None):
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return str(x)
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, list):
            return [clean(v) for v in x]
        return x
    doc = {"points": [r.as_dict() for r in records]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = ["energy", "dirichlet", "mean_split", "flux_measure", "FluxMeasure", "Peak", "fit_mu",
           "DiagnosticsRecord", "diagnose", "concentration_report", "flux_growth_ratio",
           "write_summary_csv", "write_report_json", "SUMMARY_HEADER"]
