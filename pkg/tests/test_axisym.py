import csv
import json

import numpy as np
import pytest

from nlsteklov.axisym import (CartesianGrid, TorusDomain, lift_to_3d, predicted_points, torus_problem,
                              write_geodesics)
from nlsteklov.fem import interpolate
from nlsteklov.geometry import Circle, GeometryError, build_mesh
from nlsteklov.solver import Seed, SteklovProblem, continuation, lambda_schedule

REF = Circle(center=(2.0, 0.0))


@pytest.fixture(scope="module")
def ref_mesh():
    return build_mesh(REF, 0.05, [((3.0, 0.0), 0.01), ((1.0, 0.0), 0.01)], mirror=True)


def test_domain_rejects_axis():
    with pytest.raises(GeometryError, match="x1 > 0"):
        TorusDomain(Circle(center=(0.5, 0.0)))
    with pytest.raises(GeometryError):
        TorusDomain(Circle(center=(1.0, 0.0)))


def test_torus_weight_and_bounds(ref_mesh):
    T = TorusDomain(REF)
    a, (a0, a1) = torus_problem(T)
    assert (a0, a1) == pytest.approx((1.0, 3.0), abs=1e-12)
    assert a(np.array([2.5, 0.3])) == 2.5
    lo, hi = a.check_bounds(ref_mesh.nodes)
    assert a0 <= lo and hi <= a1
    pts = sorted(predicted_points(T), key=lambda p: -p[0])
    assert np.allclose(pts, [(3.0, 0.0), (1.0, 0.0)], atol=1e-9)


def test_linear_lift_is_harmonic(ref_mesh):
    T = TorusDomain(REF)
    G = CartesianGrid.covering(*T.bounding_box(), 0.1)
    L = lift_to_3d(interpolate(ref_mesh, lambda x: x[:, 1]), G, outside="nan")
    r, n = L.residual()
    assert n > 10_000 and r <= 1e-10
    ok = L.in_mesh
    assert np.abs(L.values[ok] - G.points()[..., 2][ok]).max() <= 1e-13


@pytest.mark.parametrize("g", [0.2, 0.1])
def test_log_lift_residual(ref_mesh, g):
    T = TorusDomain(REF)
    G = CartesianGrid.covering(*T.bounding_box(), g)
    L = lift_to_3d(interpolate(ref_mesh, lambda x: np.log(x[:, 0])), G, outside="nan")
    r, _ = L.residual()
    assert r <= 5 * (ref_mesh.h + g ** 2)


def test_rotation_invariance_is_bitwise(ref_mesh, rng):
    u = interpolate(ref_mesh, lambda x: np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]))
    G = CartesianGrid.covering(*TorusDomain(REF).bounding_box(), 0.15)
    L = lift_to_3d(u, G, outside="nan")
    assert np.array_equal(L.values, L.values.transpose(1, 0, 2), equal_nan=True)
    L4 = lift_to_3d(u, G, outside="nan", threads=4)
    assert np.array_equal(L.values, L4.values, equal_nan=True)


def test_outside_points_rejected(ref_mesh):
    G = CartesianGrid.covering((-3, -3, -1), (3, 3, 1), 0.5)
    with pytest.raises(GeometryError, match="torus shell"):
        lift_to_3d(interpolate(ref_mesh, lambda x: x[:, 0]), G)
    inner = CartesianGrid.covering((1.6, -0.3, -0.3), (2.4, 0.3, 0.3), 0.1)
    L = lift_to_3d(interpolate(ref_mesh, lambda x: x[:, 0]), inner)
    assert np.all(np.isfinite(L.values))


def test_lifted_solution(ref_mesh, tmp_path):
    T = TorusDomain(REF)
    a, _ = torus_problem(T)
    P = SteklovProblem(ref_mesh, a)
    br = continuation(P, Seed.parse("eigen:2:0.5"), lambda_schedule(1.08, 0.1, 0.8))
    assert not br.flagged
    u = br.points[-1].u
    g = 0.1
    G = CartesianGrid.covering(*T.bounding_box(), g)
    L = lift_to_3d(u, G, outside="nan", concentration=predicted_points(T), signs=[1, -1])
    r, n = L.residual(exclude=0.75)
    assert n > 1000 and r <= 5 * (ref_mesh.h + g ** 2)
    assert sorted(c.radius for c in L.geodesics) == pytest.approx([1.0, 3.0], abs=1e-9)
    write_geodesics(tmp_path / "geo.json", L.geodesics)
    doc = json.loads((tmp_path / "geo.json").read_text())
    assert {"radius", "height", "sign"} == set(doc["geodesics"][0])
    small = CartesianGrid.covering((1.6, -0.3, -0.3), (2.4, 0.3, 0.3), 0.2)
    lift_to_3d(u, small).to_csv(tmp_path / "u3.csv")
    rows = list(csv.reader(open(tmp_path / "u3.csv")))
    assert rows[0] == ["y1", "y2", "y3", "value"] and len(rows) == 1 + np.prod(small.shape)
