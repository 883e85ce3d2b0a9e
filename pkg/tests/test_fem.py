import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlsteklov.fem import (AssemblyError, CompatibilityError, Field, NeumannSolver, assemble_boundary_mass,
                           assemble_stiffness, solve_neumann)
from nlsteklov.geometry import Circle, Mesh, build_mesh, constant, from_expression, linear_x1


def square_mesh(x0=0.0, y0=0.0, n=8):
    """Structured right-triangle mesh of the square [x0, x0+1] x [y0, y0+1]."""
    g = np.linspace(0, 1, n + 1)
    X, Y = np.meshgrid(g + x0, g + y0, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = lambda i, j: i * (n + 1) + j
    tris = []
    for i in range(n):
        for j in range(n):
            tris += [[idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)], [idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]]
    loop = [idx(i, 0) for i in range(n)] + [idx(n, j) for j in range(n)] \
        + [idx(i, n) for i in range(n, 0, -1)] + [idx(0, j) for j in range(n, 0, -1)]
    bt = np.arange(len(loop)) / len(loop)
    return Mesh(nodes, np.array(tris), np.array(loop), bt, h=np.sqrt(2) / n)


def test_stiffness_kernel_and_symmetry(annulus_mesh):
    K = assemble_stiffness(annulus_mesh, linear_x1())
    nK = abs(K).sum(axis=1).max()
    assert np.abs(K @ np.ones(K.shape[0])).max() <= 1e-10 * nK
    assert abs(K - K.T).max() <= 1e-12 * nK
    v = np.random.default_rng(0).normal(size=K.shape[0])
    assert v @ K @ v > 0


def test_stiffness_square_oracles():
    m = square_mesh()
    K = assemble_stiffness(m, constant(1.0))
    u = m.nodes[:, 0]
    assert np.isclose(u @ K @ u, 1.0, rtol=1e-13)
    m2 = square_mesh(x0=1.0)
    K2 = assemble_stiffness(m2, linear_x1())
    u2 = m2.nodes[:, 1]
    assert np.isclose(u2 @ K2 @ u2, 1.5, rtol=1e-13)


def test_nonpositive_weight_rejected():
    with pytest.raises(AssemblyError):
        assemble_stiffness(square_mesh(x0=-0.5), linear_x1())


def test_boundary_mass_totals(disk_mesh, annulus_mesh):
    B = assemble_boundary_mass(disk_mesh, constant(1.0))
    h = disk_mesh.boundary_edge_lengths().max()
    assert abs(B.perimeter - 2 * np.pi) <= h ** 2
    B2 = assemble_boundary_mass(disk_mesh, constant(2.0))
    assert np.allclose(B2.weighted.toarray(), 2 * B.weighted.toarray())
    Ba = assemble_boundary_mass(annulus_mesh, linear_x1())
    assert abs(Ba.total_a - 4 * np.pi) <= 10 * annulus_mesh.h ** 2
    # agreement with a direct edge-by-edge trapezoid sum
    e = annulus_mesh.boundary_edges
    p = annulus_mesh.nodes
    ref = np.sum(0.5 * (p[e[:, 0], 0] + p[e[:, 1], 0]) * annulus_mesh.boundary_edge_lengths())
    assert abs(Ba.total_a - ref) <= 1e-12 * ref
    assert (Ba.weighted.diagonal() >= 0).all()


def _disk_system(mesh):
    a = constant(1.0)
    return assemble_stiffness(mesh, a), assemble_boundary_mass(mesh, a)


def test_neumann_zero_data(disk_mesh):
    K, B = _disk_system(disk_mesh)
    w = solve_neumann(K, B, np.zeros(disk_mesh.n_nodes))
    assert np.all(w.values == 0)


def _cos_error(mesh):
    K, B = _disk_system(mesh)
    f = mesh.nodes[:, 0] / np.hypot(*mesh.nodes.T)
    w = solve_neumann(K, B, f)
    return np.abs(w.values - mesh.nodes[:, 0]).max(), K, B, f, w


def test_neumann_cos_oracle_and_convergence(disk_mesh, disk_mesh_fine):
    e1, K, B, f, w = _cos_error(disk_mesh)
    e2, *_ = _cos_error(disk_mesh_fine)
    assert e1 <= 2 * disk_mesh.h
    assert e1 / e2 >= 1.7
    # Galerkin orthogonality on every nodal test vector
    r = K @ w.values - B.weighted @ f
    assert np.abs(r).max() <= 1e-10 * np.abs(B.weighted @ f).max()
    assert abs(B.integrate(w.values)) <= 1e-12


def test_neumann_rejects_incompatible(disk_mesh):
    K, B = _disk_system(disk_mesh)
    f = np.ones(disk_mesh.n_nodes)
    with pytest.raises(CompatibilityError) as info:
        solve_neumann(K, B, f)
    assert info.value.defect == pytest.approx(B.total_a)
    w = solve_neumann(K, B, f, project=True)
    assert np.abs(w.values).max() < 1e-10


@given(st.integers(0, 2 ** 31 - 1))
def test_neumann_reciprocity(annulus_mesh, seed):
    rng = np.random.default_rng(seed)
    a = linear_x1()
    K, B = assemble_stiffness(annulus_mesh, a), assemble_boundary_mass(annulus_mesh, a)
    solver = NeumannSolver(K, B)
    from nlsteklov.fem import project_compatible
    f1 = project_compatible(B, rng.normal(size=annulus_mesh.n_nodes))
    f2 = project_compatible(B, rng.normal(size=annulus_mesh.n_nodes))
    w1 = solve_neumann(K, B, f1, solver=solver)
    w2 = solve_neumann(K, B, f2, solver=solver)
    l, r = B.integrate(f1 * w2.values), B.integrate(f2 * w1.values)
    assert abs(l - r) <= 1e-8 * max(abs(l), abs(r))


def test_field_csv_roundtrip(tmp_path, disk_mesh, rng):
    u = Field(disk_mesh, rng.normal(size=disk_mesh.n_nodes) * 1e3)
    u.to_csv(tmp_path / "u.csv")
    v = Field.from_csv(disk_mesh, tmp_path / "u.csv")
    assert np.array_equal(u.values, v.values)
    assert (tmp_path / "u.csv").read_text().startswith("node_id,value\n")


def test_field_arith_and_trace(disk_mesh):
    u = Field(disk_mesh, disk_mesh.nodes[:, 0])
    assert np.array_equal((2 * u - u).values, u.values)
    assert np.allclose(u.trace(), disk_mesh.nodes[disk_mesh.boundary, 0])
    assert np.allclose(u.at_boundary_params(disk_mesh.boundary_t), u.trace())
    with pytest.raises(ValueError):
        Field(disk_mesh, np.zeros(3))
