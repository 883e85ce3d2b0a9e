import numpy as np
import pytest

from nlsteklov.fem import Field, assemble_boundary_mass, assemble_stiffness
from nlsteklov.geometry import Circle, build_mesh, constant, linear_x1
from nlsteklov.spectrum import SpectrumError, project_mean_free, sign_changes, steklov_spectrum


def _spec(mesh, a, k=6):
    K, B = assemble_stiffness(mesh, a), assemble_boundary_mass(mesh, a)
    return steklov_spectrum(K, B, k), K, B


@pytest.fixture(scope="module")
def disk_spec(disk_mesh_sym):
    return _spec(disk_mesh_sym, constant(1.0))


def test_disk_spectrum(disk_spec):
    s, K, B = disk_spec
    assert np.allclose(s.eigenvalues, [0, 1, 1, 2, 2, 3, 3], rtol=0, atol=0.01 * np.arange(7) + 1e-14)
    assert s.multiplicities == [1, 2, 2, 2]
    assert s.residuals.max() <= 1e-8
    assert np.abs(s.gram - np.eye(7)).max() <= 1e-8


def test_constant_mode_and_mean_free(disk_spec):
    s, K, B = disk_spec
    v0 = s.vectors[:, 0]
    assert np.ptp(v0) == 0 and s.eigenvalues[0] == 0
    assert np.abs(B.wa @ s.vectors[:, 1:]).max() <= 1e-8


def test_courant_sign_changes(disk_spec, disk_mesh_sym):
    disk_mesh = disk_mesh_sym
    s, *_ = disk_spec
    order = np.argsort(disk_mesh.boundary_t)
    for n in range(1, 7):
        trace = s.vectors[disk_mesh.boundary, n][order]
        assert sign_changes(trace) == 2 * int(np.ceil(n / 2))


def test_radius_scaling():
    s2, *_ = _spec(build_mesh(Circle(radius=2.0), 0.1), constant(1.0), k=4)
    s1, *_ = _spec(build_mesh(Circle(radius=1.0), 0.05), constant(1.0), k=4)
    assert np.allclose(s2.eigenvalues[1:], 0.5 * s1.eigenvalues[1:], rtol=1e-10)


def test_weighted_spectrum_is_positive(annulus_mesh):
    s, *_ = _spec(annulus_mesh, linear_x1(), k=5)
    assert np.all(s.eigenvalues[1:] > 0)
    assert np.abs(s.gram - np.eye(6)).max() <= 1e-8


def test_refinement_changes_eigenvalues_by_order_h(disk_spec, disk_mesh_fine):
    s, *_ = disk_spec
    sf, *_ = _spec(disk_mesh_fine, constant(1.0))
    assert np.all(np.abs(s.eigenvalues - sf.eigenvalues) <= 0.05 * np.arange(7) * 0.05 + 1e-12)


def test_k_too_large(disk_mesh):
    a = constant(1.0)
    K, B = assemble_stiffness(disk_mesh, a), assemble_boundary_mass(disk_mesh, a)
    with pytest.raises(SpectrumError):
        steklov_spectrum(K, B, len(disk_mesh.boundary))


def test_project_mean_free(disk_mesh, rng):
    a = constant(1.0)
    u0, s = project_mean_free(Field(disk_mesh, np.full(disk_mesh.n_nodes, 3.5)), a)
    assert s == pytest.approx(3.5) and np.abs(u0.values).max() <= 1e-12
    w, _ = project_mean_free(Field(disk_mesh, rng.normal(size=disk_mesh.n_nodes)), a)
    w2, s2 = project_mean_free(w, a)
    assert abs(s2) <= 1e-12 and np.abs(w2.values - w.values).max() <= 1e-12
    c = Field(disk_mesh, disk_mesh.nodes[:, 0] / np.maximum(np.hypot(*disk_mesh.nodes.T), 1e-300))
    c2, s3 = project_mean_free(c, a)
    assert abs(s3) <= 1e-12


def test_spectrum_csv(tmp_path, disk_spec):
    s, *_ = disk_spec
    s.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "n,lambda,residual" and len(lines) == 8
