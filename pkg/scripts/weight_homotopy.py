"""Deform the weight from a = 2 to a = x1 at fixed lambda on the (2,0)-centred circle.

Starts from the converged two-bubble solution for a = 2 (where a(3,0) = a(1,0))
and follows a_t = 2 (1 - t) + t x1 with a secant predictor and adaptive steps
in t. Prints the local flux masses near (3,0) and (1,0), the far-field flux and
the smallest Jacobian eigenvalue; the path ends where the step collapses (a fold).

    python3 scripts/weight_homotopy.py --lam 0.01
"""
import argparse

import numpy as np
import scipy.sparse.linalg as spla

from nlsteklov.asymptotics import ansatz_mesh
from nlsteklov.geometry import Circle, from_expression
from nlsteklov.solver import NewtonError, NewtonOptions, Seed, SteklovProblem, newton_solve, seed_field


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lam", type=float, default=0.01)
    ap.add_argument("--h", type=float, default=0.05)
    ap.add_argument("--dt", type=float, default=1e-3, help="initial step in t")
    ap.add_argument("--min-dt", type=float, default=1e-7)
    ap.add_argument("--radius", type=float, default=0.3, help="neighbourhood for the local masses")
    args = ap.parse_args()

    lam = args.lam
    curve = Circle(center=(2.0, 0.0))
    seed = Seed("ansatz", xi1=(3.0, 0.0), xi2=(1.0, 0.0), mu=(2.0, 2.0))
    mesh = ansatz_mesh(curve, seed.ansatz_config(lam), args.h, mirror=True)
    b = mesh.boundary
    xb = mesh.nodes[b]
    near1 = np.linalg.norm(xb - (3.0, 0.0), axis=1) < args.radius
    near2 = np.linalg.norm(xb - (1.0, 0.0), axis=1) < args.radius
    far = ~(near1 | near2)

    def problem(t):
        return SteklovProblem(mesh, from_expression(f"{2 * (1 - t)!r} + {t!r}*x1"))

    P0 = problem(0.0)
    u = newton_solve(P0, lam, seed_field(P0, seed, lam)).u.values
    t, dt = 0.0, args.dt
    prev = None
    last = -1.0
    print("t, iterations, dt, max u, min u, m(3,0), m(1,0), far, smallest |eig J|")
    while t < 1.0 and dt > args.min_dt:
        tn = min(1.0, t + dt)
        pred = u if prev is None else u + (tn - t) / (t - prev[0]) * (u - prev[1])
        try:
            r = newton_solve(problem(tn), lam, pred, NewtonOptions(max_iter=25))
        except NewtonError:
            dt /= 2
            continue
        prev = (t, u)
        t, u = tn, r.u.values
        if r.iterations <= 5:
            dt *= 1.5
        if t - last >= 0.004 or t == 1.0:
            last = t
            P = problem(t)
            f = lam * np.sinh(u[b])
            w = P.B.w1[b]
            ev = spla.eigsh(P.jacobian(u, lam), k=1, sigma=0, which="LM", return_eigenvectors=False)[0]
            m1, m2, mf = (w[s] @ f[s] / (2 * np.pi) for s in (near1, near2, far))
            print(f"{t:.4f}, {r.iterations}, {dt:.1e}, {u.max():.3f}, {u.min():.3f}, "
                  f"{m1:+.3f}, {m2:+.3f}, {mf:+.3f}, {abs(ev):.3e}", flush=True)
    print(f"path ended at t = {t:.5f} (a(3,0)/a(1,0) = {(2 + t) / (2 - t):.5f}), last dt = {dt:.1e}")


if __name__ == "__main__":
    main()
