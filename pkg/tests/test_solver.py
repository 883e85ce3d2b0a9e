import numpy as np
import pytest

from nlsteklov.asymptotics import ansatz_mesh
from nlsteklov.geometry import Circle, build_mesh, constant
from nlsteklov.solver import (Branch, ContinuationError, NewtonError, NewtonOptions, Seed,
                              SteklovProblem, continuation, lambda_schedule, mean_split_shift,
                              newton_solve, seed_field)

ANTIPODAL = Seed("ansatz", xi1=(1.0, 0.0), xi2=(-1.0, 0.0), mu=(2.0, 2.0))


@pytest.fixture(scope="module")
def disk_problem():
    return SteklovProblem(build_mesh(Circle(), 0.05, symmetry=8, mirror=True), constant(1.0))


@pytest.fixture(scope="module")
def antipodal_problem():
    mesh = ansatz_mesh(Circle(), ANTIPODAL.ansatz_config(1e-3), 0.05, mirror=True)
    return SteklovProblem(mesh, constant(1.0))


def test_options_validation():
    with pytest.raises(ValueError):
        NewtonOptions(tol=0)
    with pytest.raises(ValueError):
        NewtonOptions(guard=800)
    with pytest.raises(ValueError):
        NewtonOptions(backtrack=1.0)


def test_zero_is_fixed(disk_problem):
    for lam in (0.05, 0.7, 3.0):
        r = newton_solve(disk_problem, lam, np.zeros(disk_problem.mesh.n_nodes))
        assert r.iterations <= 1
        assert np.all(r.u.values == 0)


def test_oddness(disk_problem, rng):
    u0 = 0.3 * rng.standard_normal(disk_problem.mesh.n_nodes)
    r1 = newton_solve(disk_problem, 0.7, u0)
    r2 = newton_solve(disk_problem, 0.7, -u0)
    assert np.array_equal(r2.u.values, -r1.u.values)
    assert r1.history == r2.history and r1.steps == r2.steps


def test_jacobian_matches_finite_differences(disk_problem, rng):
    P = disk_problem
    u = rng.standard_normal(P.mesh.n_nodes)
    lam = 0.8
    J = P.jacobian(u, lam)
    F0 = P.residual(u, lam)
    for _ in range(3):
        d = rng.standard_normal(P.mesh.n_nodes)
        errs = []
        for eps in (1e-3, 5e-4, 2.5e-4):
            fd = (P.residual(u + eps * d, lam) - F0) / eps
            errs.append(np.linalg.norm(fd - J @ d) / np.linalg.norm(J @ d))
        assert errs[0] < 1e-2
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


def test_antipodal_disk_converges_fast(antipodal_problem):
    P = antipodal_problem
    lam = 0.05
    u0 = seed_field(P, ANTIPODAL, lam)
    r = newton_solve(P, lam, u0)
    assert r.iterations <= 8
    assert r.quadratic_tail
    assert r.relative_residual <= 1e-10
    assert P.compatibility(r.u.values) <= 1e-10
    b = P.mesh.boundary
    ub = r.u.values[b]
    assert np.allclose(P.mesh.nodes[b][ub.argmax()], (1.0, 0.0))
    assert np.allclose(P.mesh.nodes[b][ub.argmin()], (-1.0, 0.0))


def test_mean_split_shift_balances(antipodal_problem, rng):
    P = antipodal_problem
    v = 3 * rng.standard_normal(P.mesh.n_nodes) + 1.5
    w = mean_split_shift(P, v)
    assert abs(P.wa @ np.sinh(w)) <= 1e-12 * (P.wa @ np.abs(np.sinh(w)))
    assert np.ptp(w - v) < 1e-12           # a pure constant shift


def test_bifurcation_from_first_eigenvalue(disk_problem):
    sched = lambda_schedule(0.98, 0.8, 0.95)
    br = continuation(disk_problem, Seed.parse("eigen:1:1.0"), sched)
    assert not br.flagged and len(br.points) == len(sched)
    b = disk_problem.mesh.boundary
    amps = np.array([np.abs(p.u.values[b]).max() for p in br.points])
    assert np.all(np.diff(amps) > 0)
    # weakly nonlinear amplitude for u ~ A cos(theta): A^2 = 8 (1 - lam)/lam
    pred = np.sqrt(8 * (1 - br.lambdas) / br.lambdas)
    assert amps[0] == pytest.approx(pred[0], rel=0.03)
    assert np.all(np.abs(amps / pred - 1) < 0.05)
    for p in br.points:
        assert p.record["compatibility"] <= 1e-10


def test_trivial_branch(disk_problem):
    br = continuation(disk_problem, Seed.parse("trivial"), [0.9, 0.5, 0.1])
    assert all(np.all(p.u.values == 0) for p in br.points)


def test_determinism(disk_problem):
    sched = [0.97, 0.93, 0.9]
    a = continuation(disk_problem, Seed.parse("eigen:1:1.0"), sched)
    b = continuation(disk_problem, Seed.parse("eigen:1:1.0"), sched)
    for p, q in zip(a.points, b.points):
        assert np.abs(p.u.values - q.u.values).max() <= 1e-12


def test_ansatz_branch_profile(antipodal_problem):
    lams = lambda_schedule(1e-2, 1e-3, 10 ** -0.5)
    br = continuation(antipodal_problem, ANTIPODAL, lams)
    assert not br.flagged and len(br.points) == len(lams)
    for p in br.points:
        ratio = np.abs(p.u.values).max() / (2 * np.log(1 / p.lam))
        assert 0.5 <= ratio <= 1.5
        assert p.record["relative_residual"] <= 1e-10


def test_deflation_finds_a_different_solution(antipodal_problem):
    P = antipodal_problem
    lam = 0.05
    known = continuation(P, ANTIPODAL, [lam])
    other = continuation(P, ANTIPODAL, [lam], deflate=[known])
    u, v = known.points[0].u.values, other.points[0].u.values
    assert other.points[0].record["deflated"]
    assert P.norm_a(u - v) > 1e-3 * P.norm_a(u)
    assert P.relative_residual(v, lam) <= 1e-10


def test_schedule_and_branch_order():
    s = lambda_schedule(0.1, 1e-3, 0.1)
    assert np.allclose(s, [0.1, 0.01, 0.001])
    s = lambda_schedule(1.0, 0.3, 0.5)
    assert s[-1] == 0.3 and np.all(np.diff(s) < 0)
    with pytest.raises(ValueError):
        lambda_schedule(0.1, 0.2, 0.5)


def test_continuation_rejects_increasing_schedule(disk_problem):
    with pytest.raises(ValueError):
        continuation(disk_problem, Seed.parse("trivial"), [0.1, 0.2])


def test_failed_seed_raises(disk_problem):
    opts = NewtonOptions(max_iter=1)
    with pytest.raises(ContinuationError):
        continuation(disk_problem, Seed.parse("eigen:1:8.0"), [0.5], opts=opts)


def test_divergence_report(disk_problem):
    u0 = seed_field(disk_problem, Seed.parse("eigen:3:6.0"), 0.5)
    with pytest.raises(NewtonError) as exc:
        newton_solve(disk_problem, 0.5, u0, NewtonOptions(max_iter=2))
    assert exc.value.report["reason"] == "divergence"
    assert exc.value.report["condition"] > 1


def test_overflow_guard(disk_problem):
    with pytest.raises(NewtonError, match="overflow"):
        newton_solve(disk_problem, 0.5, np.full(disk_problem.mesh.n_nodes, 701.0))


@pytest.mark.parametrize("text", ["trivial", "eigen:2:0.5", "ansatz:3,0:1,0", "ansatz:1,0:-1,0:2,2"])
def test_seed_roundtrip(text):
    s = Seed.parse(text)
    assert Seed.parse(s.describe()) == s


@pytest.mark.parametrize("text", ["eigen:2", "ansatz:3:1,0", "bubble:1", "eigen:x:1"])
def test_seed_parse_errors(text):
    with pytest.raises(ValueError):
        Seed.parse(text)


def test_branch_roundtrip(tmp_path, disk_problem):
    br = continuation(disk_problem, Seed.parse("eigen:1:1.0"), [0.97, 0.95])
    br.save(tmp_path / "b")
    back = Branch.load(tmp_path / "b", disk_problem.mesh)
    assert np.allclose(back.lambdas, br.lambdas, rtol=0, atol=0)
    for p, q in zip(br.points, back.points):
        assert np.array_equal(p.u.values, q.u.values)
    assert not list((tmp_path / "b").glob("*.tmp"))
