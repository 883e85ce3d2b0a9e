import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlsteklov.geometry import (Circle, Ellipse, GeometryError, Mesh, PeriodicSpline, StarShaped,
                                WeightError, boundary_critical_points, build_mesh, constant,
                                from_expression, linear_x1, tangential_derivative)


def test_disk_mesh_invariants(disk_mesh):
    assert disk_mesh.validate()
    assert np.all(disk_mesh.areas > 0)
    assert disk_mesh.edge_lengths().max() <= 0.05


def test_grading_postcondition():
    m = build_mesh(Circle(), 0.1, grading=[((1.0, 0.0), 0.01)])
    p = m.nodes[m.boundary_edges]
    mid = p.mean(axis=1)
    L = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    near = np.linalg.norm(mid - [1.0, 0.0], axis=1) <= 0.03
    assert near.sum() >= 4
    assert L[near].max() <= 0.01 + 1e-12
    assert m.edge_lengths().max() <= 0.1
    assert np.isclose(m.nodes[m.boundary], [1.0, 0.0]).all(axis=1).any()


def test_node_count_quadruples():
    n1 = build_mesh(Circle(), 0.1).n_nodes
    n2 = build_mesh(Circle(), 0.05).n_nodes
    assert 4 * 0.7 <= n2 / n1 <= 4 * 1.3


def test_symmetric_mesh_is_rotation_invariant():
    m = build_mesh(Circle(), 0.1, symmetry=8)
    c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
    rot = m.nodes @ np.array([[c, s], [-s, c]])
    from scipy.spatial import cKDTree
    d, _ = cKDTree(m.nodes).query(rot)
    assert d.max() < 1e-12


def test_mesh_errors():
    with pytest.raises(GeometryError):
        build_mesh(Circle(), 0.0)
    with pytest.raises(GeometryError):
        build_mesh(Circle(), 0.1, grading=[((3.0, 0.0), 0.01)])
    with pytest.raises(GeometryError):
        build_mesh(Circle(), 0.1, grading=[((0.0, 0.0), 0.2)])


def test_degenerate_curve_rejected():
    class Collapsed(Circle):
        def d1(self, t):
            return 0 * super().d1(t)
    with pytest.raises(GeometryError):
        Collapsed().check()


def test_mesh_roundtrip(tmp_path, disk_mesh):
    path = tmp_path / "disk.mesh"
    disk_mesh.save(path)
    m = Mesh.load(path, curve=disk_mesh.curve)
    assert np.array_equal(m.nodes, disk_mesh.nodes)
    assert np.array_equal(m.triangles, disk_mesh.triangles)
    assert np.array_equal(m.boundary_t, disk_mesh.boundary_t)
    assert m.validate()
    assert path.read_text().splitlines()[0].startswith("nodes ")


def test_interpolation_is_exact_at_nodes(disk_mesh, rng):
    v = rng.normal(size=disk_mesh.n_nodes)
    idx = rng.choice(disk_mesh.n_nodes, 50, replace=False)
    assert np.allclose(disk_mesh.interpolate(v, disk_mesh.nodes[idx]), v[idx], atol=1e-13)


def test_interpolation_reproduces_linear(disk_mesh, rng):
    f = lambda p: 1.5 * p[..., 0] - 0.25 * p[..., 1] + 3
    pts = rng.uniform(-0.6, 0.6, size=(100, 2))
    assert np.allclose(disk_mesh.interpolate(f(disk_mesh.nodes), pts), f(pts), atol=1e-12)


def test_other_curves_mesh():
    for c in (Ellipse(ax=1.0, ay=0.6), StarShaped(modes=((5, 0.1),))):
        m = build_mesh(c, 0.08)
        assert m.validate()
    t = np.linspace(0, 1, 40, endpoint=False)
    spl = PeriodicSpline(np.stack([np.cos(2 * np.pi * t), 0.7 * np.sin(2 * np.pi * t)], axis=1))
    assert build_mesh(spl, 0.1).validate()


# -- weights ------------------------------------------------------------------

def test_weight_expression_and_gradient(rng):
    a = from_expression("1 + 0.5*x1**2 + sin(x2)")
    x = rng.uniform(-1, 1, size=(20, 2))
    assert np.allclose(a(x), 1 + 0.5 * x[:, 0] ** 2 + np.sin(x[:, 1]))
    assert a.grad_defect(x) < 1e-8


@pytest.mark.parametrize("expr", ["__import__('os')", "x1.real", "open('f')", "x3", "lambda: 1"])
def test_weight_expression_rejects_code(expr):
    with pytest.raises(WeightError):
        from_expression(expr)


def test_weight_bounds():
    m_pts = Circle((2.0, 0.0)).sample(256)[1]
    a = linear_x1().with_bounds(m_pts)
    assert np.isclose(a.a0, 1.0) and np.isclose(a.a1, 3.0)
    with pytest.raises(WeightError):
        from_expression("x1").check_bounds(np.array([[-1.0, 0.0]]))


# -- critical points ---------------------------------------------------------

def test_critical_points_linear_on_shifted_circle():
    rep = boundary_critical_points(linear_x1(), Circle((2.0, 0.0), 1.0))
    kinds = {p.kind: p for p in rep}
    assert len(rep) == 2 and not rep.degenerate
    assert np.allclose(kinds["max"].xi, [3.0, 0.0], atol=1e-9)
    assert np.allclose(kinds["min"].xi, [1.0, 0.0], atol=1e-9)
    assert kinds["max"].degree_sign == -1 and kinds["min"].degree_sign == 1


def test_constant_weight_is_degenerate():
    rep = boundary_critical_points(constant(2.0), Circle())
    assert len(rep) == 0 and rep.degenerate


def test_diagonal_linear_weight():
    c = Circle((2.0, 0.0), 1.0)
    rep = boundary_critical_points(from_expression("x1 + x2"), c)
    ang = sorted(2 * np.pi * p.t for p in rep)
    assert np.allclose(ang, [np.pi / 4, 5 * np.pi / 4], atol=1e-9)


@given(st.floats(0.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_critical_point_properties(phase, b1, b2):
    a = from_expression(f"exp(0.3*x1) + {b1}*x2**2 + {b2}*x1*x2 + 5")
    c0, c1 = StarShaped(modes=((3, 0.15),)), StarShaped(modes=((3, 0.15),), phase=phase)
    r0, r1 = boundary_critical_points(a, c0), boundary_critical_points(a, c1)
    if r0.degenerate:
        return
    assert len(r0) % 2 == 0
    tt = np.linspace(0, 1, 4096, endpoint=False)
    dmax = np.abs(tangential_derivative(a, c0, tt)).max()
    for p in r0:
        assert abs(float(tangential_derivative(a, c0, p.t))) <= 10 * 1e-10 * dmax
    assert len(r0) == len(r1)
    for p in r0:
        assert min(np.linalg.norm(p.xi - q.xi) for q in r1) < 1e-8


@pytest.mark.parametrize("k", [1, 2, 8])
def test_mirror_mesh_is_reflection_symmetric(k):
    from scipy.spatial import cKDTree
    grading = [((1.0, 0.0), 0.005), ((-1.0, 0.0), 0.005)] if k <= 2 else []
    mesh = build_mesh(Circle(), 0.08, grading, symmetry=k, mirror=True)
    tree = cKDTree(mesh.nodes)
    d, idx = tree.query(mesh.nodes * [1.0, -1.0])
    assert d.max() < 1e-12
    # the reflection maps triangles to triangles
    tris = {tuple(sorted(t)) for t in mesh.triangles.tolist()}
    assert all(tuple(sorted(idx[t])) in tris for t in mesh.triangles.tolist())
    assert np.all(np.diff(mesh.boundary_t) > 0)
    assert len(set(mesh.boundary.tolist())) == len(mesh.boundary)


def test_mirror_rejects_asymmetric_grading():
    with pytest.raises(GeometryError):
        build_mesh(Circle(), 0.1, [((1.0, 0.0), 0.01), ((0.0, 1.0), 0.01)], mirror=True)
