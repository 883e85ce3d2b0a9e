"""Critical points of a weight restricted to a boundary curve."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CriticalPoint:
    xi: np.ndarray
    t: float
    kind: str            # "min" | "max" | "nondegenerate-saddle"
    degree_sign: int     # local Brouwer degree of the tangential derivative


@dataclass
class CriticalPointReport:
    points: list[CriticalPoint]
    plateaus: list[tuple[float, float]] = field(default_factory=list)

    @property
    def degenerate(self):
        return bool(self.plateaus)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


def tangential_derivative(a, curve, t):
    """d/dt a(gamma(t))."""
    t = np.asarray(t, dtype=float)
    return np.einsum("...i,...i->...", a.grad(curve.point(t)), curve.d1(t))


def _bisect(a, curve, lo, hi, dlo, dt_tol):
    while (hi - lo) > dt_tol:
        mid = 0.5 * (lo + hi)
        dm = float(tangential_derivative(a, curve, mid))
        if dm == 0.0:
            return mid
        if np.sign(dm) == np.sign(dlo):
            lo, dlo = mid, dm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def boundary_critical_points(a, curve, tol=1e-10, n=2048, plateau_tol=1e-9) -> CriticalPointReport:
    """C1-stable critical points of a restricted to the curve.

    Sign changes of the tangential derivative on ``n`` samples are refined by
    bisection until the point error is below ``tol``. Runs of samples where
    the derivative is negligible (relative ``plateau_tol``) are reported as
    degenerate plateaus and excluded.
    """
    t = np.arange(n) / n
    d = tangential_derivative(a, curve, t)
    vals = a(curve.point(t))
    flat_abs = plateau_tol * max(1.0, float(np.max(np.abs(vals)))) * float(np.max(curve.speed(t)))
    small = np.abs(d) <= flat_abs
    plateaus = []
    if small.all():
        return CriticalPointReport([], [(0.0, 1.0)])
    # plateau runs: two or more consecutive negligible samples
    run_mask = small & (np.roll(small, 1) | np.roll(small, -1))
    if run_mask.any():
        start = int(np.flatnonzero(~run_mask)[0])
        cur = None
        for k in range(1, n + 1):
            i = (start + k) % n
            if run_mask[i] and cur is None:
                cur = t[i]
            elif not run_mask[i] and cur is not None:
                plateaus.append((float(cur), float(t[(i - 1) % n])))
                cur = None
    sign = np.where(small, 0, np.sign(d)).astype(int)
    points = []
    speed_max = float(np.max(curve.speed(t)))
    dt_tol = tol / speed_max
    for i in range(n):
        j = (i + 1) % n
        if run_mask[i] or run_mask[j]:
            continue
        s0, s1 = sign[i], sign[j]
        if s0 != 0 and s1 != 0 and s0 != s1:
            tc = _bisect(a, curve, t[i], t[i] + 1.0 / n, d[i], dt_tol)
            jump = s1 - s0
        elif s0 == 0 and not run_mask[i]:
            sp, sn = sign[(i - 1) % n], s1
            if sp == 0 or sn == 0 or sp == sn:
                continue
            # an isolated negligible sample: refine between its neighbours
            tc = t[i] if d[i] == 0.0 else _bisect(a, curve, t[i] - 1.0 / n, t[i] + 1.0 / n,
                                                  d[(i - 1) % n], dt_tol)
            jump = sn - sp
        else:
            continue
        tc %= 1.0
        deg = int(np.sign(jump))
        kind = "min" if deg > 0 else "max"
        points.append(CriticalPoint(curve.point(tc), float(tc), kind, deg))
    points.sort(key=lambda p: p.t)
    return CriticalPointReport(points, plateaus)
