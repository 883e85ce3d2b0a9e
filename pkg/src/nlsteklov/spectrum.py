"""Linear weighted Steklov eigenproblem K v = lambda B^a v."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .fem import BoundaryMass, Field, assemble_boundary_mass


class SpectrumError(ValueError):
    pass


@dataclass(eq=False)
class SteklovSpectrum:
    mesh: object
    eigenvalues: np.ndarray          # (k+1,)
    vectors: np.ndarray              # (n_nodes, k+1), orthonormal in the a-norm
    gram: np.ndarray                 # (k+1, k+1)
    residuals: np.ndarray            # relative residual per pair
    clusters: list = field(default_factory=list)

    def field(self, n) -> Field:
        return Field(self.mesh, self.vectors[:, n])

    @property
    def multiplicities(self):
        return [len(c) for c in self.clusters]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "lambda", "residual"])
            for n, (lam, r) in enumerate(zip(self.eigenvalues, self.residuals)):
                w.writerow([n, f"{lam:.17g}", f"{r:.17g}"])


def cluster_eigenvalues(vals, rel_gap=1e-6):
    """Group sorted eigenvalues whose relative gap is below ``rel_gap``."""
    groups = [[0]]
    for i in range(1, len(vals)):
        prev = vals[groups[-1][-1]]
        if abs(vals[i] - prev) <= rel_gap * max(abs(vals[i]), abs(prev), 1e-300):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def boundary_schur(K, mesh):
    """Dense Schur complement S = K_bb - K_bi K_ii^{-1} K_ib and the interior extension operator."""
    K = K.tocsr()
    b, i = mesh.boundary, mesh.interior
    Kbb = K[b][:, b].toarray()
    Kib = K[i][:, b].toarray()
    lu = spla.splu(K[i][:, i].tocsc())
    X = lu.solve(Kib)                  # K_ii^{-1} K_ib
    S = Kbb - Kib.T @ X
    return 0.5 * (S + S.T), X


def steklov_spectrum(K, B: BoundaryMass, k: int, *, rel_gap=1e-6) -> SteklovSpectrum:
    """Smallest k+1 eigenpairs of K v = lambda B^a v.

    The problem is condensed onto the boundary unknowns, solved densely and
    extended harmonically. The constant mode is fixed to 1/int(a); the
    remaining fields are normalized with ||u||_a^2 = u^T K u + (int a u)^2 and
    re-orthonormalized inside each eigenvalue cluster.
    """
    mesh = B.mesh
    nb = len(mesh.boundary)
    if k < 0 or k >= nb:
        raise SpectrumError(f"k={k} must be below the number of boundary unknowns ({nb})")
    S, X = boundary_schur(K, mesh)
    wb = B.wa[mesh.boundary]
    vals, vecs = sla.eigh(S, np.diag(wb), subset_by_index=[0, k])
    n = mesh.n_nodes
    V = np.zeros((n, k + 1))
    V[mesh.boundary] = vecs
    V[mesh.interior] = -X @ vecs
    vals = vals.copy()
    vals[0] = 0.0
    V[:, 0] = 1.0 / B.total_a
    c = B.wa
    # the generalized eigenvectors are B-orthogonal to constants; remove round-off
    V[:, 1:] -= (c @ V[:, 1:]) / B.total_a
    Kd = K @ V
    gram = V.T @ Kd + np.outer(c @ V, c @ V)
    clusters = cluster_eigenvalues(vals, rel_gap)
    for grp in clusters:
        if grp == [0]:
            continue
        idx = np.array(grp)
        G = gram[np.ix_(idx, idx)]
        w, Q = np.linalg.eigh(G)
        V[:, idx] = V[:, idx] @ (Q / np.sqrt(w)) @ Q.T
    Kd = K @ V
    gram = V.T @ Kd + np.outer(c @ V, c @ V)
    BV = B.weighted @ V
    res = np.linalg.norm(Kd - BV * vals, axis=0)
    scale = np.linalg.norm(Kd, axis=0)
    scale[0] = abs(K).sum(axis=1).max() * np.linalg.norm(V[:, 0])
    if vals[1:].size and np.any(vals[1:] <= 0):
        raise SpectrumError("nonpositive eigenvalue beyond the constant mode")
    return SteklovSpectrum(mesh, vals, V, gram, res / scale, clusters)


def project_mean_free(u: Field, a=None, B: BoundaryMass | None = None):
    """u minus its weighted boundary mean; returns (field, mean)."""
    if B is None:
        if a is None:
            raise ValueError("need a weight or a boundary mass")
        B = assemble_boundary_mass(u.mesh, a)
    s = B.integrate(u.values) / B.total_a
    return Field(u.mesh, u.values - s), s


def sign_changes(values):
    """Number of sign changes of a periodic sequence (zeros skipped)."""
    s = np.sign(values[np.abs(values) > 1e-12 * np.abs(values).max()])
    return int(np.sum(s != np.roll(s, 1)))
