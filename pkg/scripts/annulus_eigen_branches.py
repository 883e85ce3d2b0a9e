"""Branches bifurcating from the first Steklov eigenvalues on the a = x1 cross-section.

For each mode n the branch is seeded by the eigenfunction, continued in lambda,
and the flux peaks (location, sign, mass in units of 2 pi) are printed per point.

    python3 scripts/annulus_eigen_branches.py --modes 1 2 --lambda-end 0.02
"""
import argparse

import numpy as np

from nlsteklov.diagnostics import flux_measure
from nlsteklov.geometry import Circle, build_mesh, linear_x1
from nlsteklov.solver import Seed, SteklovProblem, continuation, lambda_schedule
from nlsteklov.spectrum import steklov_spectrum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--h", type=float, default=0.05)
    ap.add_argument("--grade", type=float, default=0.01)
    ap.add_argument("--lambda-end", type=float, default=0.02)
    ap.add_argument("--factor", type=float, default=0.8)
    ap.add_argument("--amplitude", type=float, default=0.5)
    args = ap.parse_args()

    curve = Circle(center=(2.0, 0.0))
    mesh = build_mesh(curve, args.h, [((3.0, 0.0), args.grade), ((1.0, 0.0), args.grade)], mirror=True)
    P = SteklovProblem(mesh, linear_x1())
    sp = steklov_spectrum(P.K, P.B, max(args.modes) + 4)
    print("eigenvalues:", " ".join(f"{v:.6f}" for v in sp.eigenvalues[:max(args.modes) + 3]))
    for n in args.modes:
        start = 0.98 * sp.eigenvalues[n]
        br = continuation(P, Seed("eigen", n=n, amplitude=args.amplitude),
                          lambda_schedule(start, args.lambda_end, args.factor), spectrum=sp)
        print(f"\nmode {n} (lambda_n = {sp.eigenvalues[n]:.6f}), {len(br.points)} points"
              + (f", terminated: {br.report['reason']}" if br.flagged else ""))
        for p in br.points:
            fm = flux_measure(p.u, p.lam, P.B)
            peaks = "; ".join(f"({q.location[0]:.3f},{q.location[1]:.3f}) {q.sign:+d} {q.mass / (2 * np.pi):.3f}"
                              for q in fm.peaks)
            print(f"  lambda={p.lam:.4e}  max|u|={np.abs(p.u.values).max():6.2f}  peaks: {peaks or '-'}")


if __name__ == "__main__":
    main()
