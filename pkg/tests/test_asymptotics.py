import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nlsteklov.asymptotics import (AnsatzConfig, AnsatzError, Bubble, KernelPair, WeightedNorms,
                                   ansatz_mesh, ansatz_residual, bubble_boundary_identity,
                                   bubble_field, build_ansatz, correction_field, kernel_residual,
                                   rate_fit)
from nlsteklov.geometry import Circle, build_mesh, constant, linear_x1

DISK_CFG = dict(xi1=(1.0, 0.0), xi2=(-1.0, 0.0), mu1=2.0, mu2=2.0)


def disk_cfg(lam, **kw):
    d = dict(DISK_CFG, lam=lam)
    d.update(kw)
    return AnsatzConfig(**d)


# --- half-plane objects -----------------------------------------------------


def test_bubble_point_values():
    b = Bubble(0.0, 1.0)
    p0 = np.array([[0.0, 0.0]])
    p1 = np.array([[1.0, 0.0]])
    assert -b.dx2(p0)[0] == pytest.approx(2.0) and np.exp(b(p0))[0] == pytest.approx(2.0)
    assert -b.dx2(p1)[0] == pytest.approx(1.0) and np.exp(b(p1))[0] == pytest.approx(1.0)
    assert bubble_boundary_identity(b, [0.0, 1.0]) == 0.0


def test_bubble_identity_random(rng):
    for t, mu in [(0.0, 1.0), (0.3, 0.05), (-2.0, 7.0)]:
        sample = t + mu * rng.standard_cauchy(10_000).clip(-1e3, 1e3)
        assert bubble_boundary_identity(Bubble(t, mu), sample) <= 1e-12 * 2 / mu + 1e-300


def test_bubble_peak(rng):
    b = Bubble(0.4, 0.3)
    pts = np.column_stack([rng.uniform(-3, 3, 5000), rng.uniform(0, 3, 5000)])
    loc, val = b.peak
    assert val == pytest.approx(np.log(2 / 0.3))
    assert b(pts).max() <= val + 1e-14
    assert b(loc[None])[0] == pytest.approx(val)


def test_kernel_point_values():
    k = KernelPair(1.0)
    o = np.array([[0.0, 0.0]])
    assert -k.dz0_dx2(o)[0] == pytest.approx(-2.0)
    assert k.potential(0.0) * k.z0(o)[0] == pytest.approx(-2.0)
    assert k.z1(o)[0] == 0.0 and k.dz1_dx2(o)[0] == 0.0


def test_kernel_symmetry_and_bounds(rng):
    k = KernelPair(0.7)
    pts = np.column_stack([rng.uniform(-50, 50, 4000), rng.uniform(0, 50, 4000)])
    mirror = pts * [-1, 1]
    assert np.allclose(k.z0(mirror), k.z0(pts), rtol=0, atol=1e-15)
    assert np.allclose(k.z1(mirror), -k.z1(pts), rtol=0, atol=1e-15)
    assert np.abs(k.z0(pts)).max() <= 1.0 + 1e-12
    assert np.abs(k.z1(pts)).max() <= 1.0 / 0.7 + 1e-12


def test_kernel_residuals_and_fd_order():
    k = KernelPair(1.0)
    r1 = kernel_residual(k, step=0.1, margin=0.5)
    r2 = kernel_residual(k, step=0.05, margin=0.5)
    assert r1["boundary"] <= 1e-12 and r2["boundary"] <= 1e-12
    assert r1["laplacian"] / r2["laplacian"] == pytest.approx(4.0, rel=0.1)


# --- weighted norms ------------------------------------------------------------

_vals = arrays(float, 30, elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(_vals, _vals, st.floats(-50, 50, allow_nan=False))
def test_norm_axioms(f, g, c):
    y = np.column_stack([np.linspace(-20, 20, 30), np.zeros(30)])
    n = WeightedNorms(((0.0, 0.0), (5.0, 0.0)), sigma=0.1)
    for norm in (n.star, n.star2):
        assert norm(c * f, y) == pytest.approx(abs(c) * norm(f, y), rel=1e-12, abs=1e-300)
        assert norm(f + g, y) <= norm(f, y) + norm(g, y) + 1e-9
        assert norm(np.abs(f) * 0.5, y) <= norm(f, y)
        assert norm(np.zeros(30), y) == 0.0


def test_norm_weight_decay():
    n = WeightedNorms(((0.0, 0.0),), sigma=0.1)
    y = np.array([[0.0, 0.0], [9.0, 0.0]])
    assert n.weight(y, 1.1)[1] == pytest.approx(10 ** -1.1)
    assert n.weight(y, 2.1)[1] == pytest.approx(10 ** -2.1)


# --- corrections and ansatz on the unit disk -------------------------------------


@pytest.fixture(scope="module")
def disk_ansatz():
    cfg = disk_cfg(1e-2)
    mesh = ansatz_mesh(Circle(), cfg, 0.1)
    return cfg, mesh, build_ansatz(cfg, mesh, constant(1.0))


def test_center_outside_and_config_checks():
    with pytest.raises(AnsatzError):
        AnsatzConfig((1, 0), (1, 0), 1, 1, 0.1)
    with pytest.raises(AnsatzError):
        AnsatzConfig((1, 0), (-1, 0), -1, 1, 0.1)
    with pytest.raises(AnsatzError):
        bubble_field(build_mesh(Circle(), 0.2), (0.5, 0.0), 1.0, 0.1)


def test_under_resolved_rejected():
    mesh = build_mesh(Circle(), 0.05)
    with pytest.raises(AnsatzError, match="under-resolved"):
        correction_field(mesh, constant(1.0), (1.0, 0.0), 2.0, 1e-2)


def test_correction_normalization_and_compatibility(disk_ansatz):
    cfg, mesh, ans = disk_ansatz
    from nlsteklov.fem import assemble_boundary_mass
    B = assemble_boundary_mass(mesh, constant(1.0))
    for p in ans.parts:
        assert B.w1 @ (p.H.values + p.u) == pytest.approx(0.0, abs=1e-10)
        assert p.defect <= 1e-12
        assert p.quadrature_gap < 0.05


def test_weighted_normalization_switch():
    cfg = AnsatzConfig((3.0, 0.0), (1.0, 0.0), 1.7, 0.8, 0.05, normalization="weighted")
    mesh = ansatz_mesh(Circle(center=(2.0, 0.0)), cfg, 0.1)
    a = linear_x1()
    from nlsteklov.fem import assemble_boundary_mass
    B = assemble_boundary_mass(mesh, a)
    p = correction_field(mesh, a, cfg.xi1, cfg.mu1, cfg.lam, normalization="weighted")
    assert B.wa @ (p.H.values + p.u) == pytest.approx(0.0, abs=1e-9)


def test_disk_correction_tends_to_constant():
    errs = []
    lams = [1e-1, 10 ** -1.5, 1e-2]
    for lam in lams:
        cfg = disk_cfg(lam)
        mesh = ansatz_mesh(Circle(), cfg, 0.1)
        p = correction_field(mesh, constant(1.0), cfg.xi1, 2.0, lam)
        errs.append(np.abs(p.H.values + np.log(4.0)).max())
    assert errs[0] > errs[1] > errs[2]
    assert rate_fit(lams, errs) >= 0.5


def test_antisymmetry(disk_ansatz):
    cfg, mesh, ans = disk_ansatz
    swapped = build_ansatz(cfg.swapped(), mesh, constant(1.0))
    assert np.array_equal(swapped.U.values, -ans.U.values)


def test_peak_growth_and_far_field():
    peaks, far = [], []
    for lam in (1e-1, 1e-2, 1e-3):
        cfg = disk_cfg(lam)
        mesh = ansatz_mesh(Circle(), cfg, 0.1)
        ans = build_ansatz(cfg, mesh, constant(1.0))
        x = mesh.nodes
        near = np.linalg.norm(x - cfg.xi1, axis=1) < 0.25
        peaks.append(ans.U.values[near].max() - 2 * np.log(1 / lam))
        away = (np.linalg.norm(x - cfg.xi1, axis=1) >= 0.5) & (np.linalg.norm(x - cfg.xi2, axis=1) >= 0.5)
        far.append(np.abs(ans.U.values[away]).max())
    assert np.ptp(peaks) < 1.0
    assert max(far) < 5.0 and np.ptp(far) < 0.5


def test_leading_weight_at_peak():
    cfg = disk_cfg(1e-2, mu1=3.0)
    mesh = ansatz_mesh(Circle(), cfg, 0.1)
    i = np.argmin(np.linalg.norm(mesh.nodes - cfg.xi1, axis=1))
    assert np.allclose(mesh.nodes[i], cfg.xi1, atol=1e-14)
    u1 = bubble_field(mesh, cfg.xi1, cfg.mu1, cfg.lam)
    assert cfg.lam ** 2 * np.exp(u1[i]) == pytest.approx(2 / cfg.mu1, rel=1e-12)


def test_residual_decay_and_theta_disk():
    lams = [1e-1, 1e-2, 1e-3]
    reps = []
    for lam in lams:
        cfg = disk_cfg(lam)
        reps.append(ansatz_residual(cfg, ansatz_mesh(Circle(), cfg, 0.1), constant(1.0)))
    norms = [r.r_star_norm for r in reps]
    assert rate_fit(lams, norms) >= 0.5
    thetas = [r.theta_sup for r in reps]
    assert thetas[0] > thetas[1] > thetas[2]
    cfg = disk_cfg(1e-3, mu1=8.0)
    bad = ansatz_residual(cfg, ansatz_mesh(Circle(), cfg, 0.1), constant(1.0))
    assert bad.r_star_norm >= 3 * norms[-1]


def test_residual_report_json(tmp_path, disk_ansatz):
    import json
    from nlsteklov.asymptotics import write_residual_report
    cfg, mesh, ans = disk_ansatz
    rep = ansatz_residual(cfg, mesh, constant(1.0), ansatz=ans)
    write_residual_report(tmp_path / "r.json", [rep], alpha=0.7)
    d = json.loads((tmp_path / "r.json").read_text())
    assert {"lambda", "mu1", "mu2", "r_star_norm", "theta_sup", "alpha_fit"} <= set(d)
    assert d["alpha_fit"] == 0.7
