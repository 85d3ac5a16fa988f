import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iqcrate.sdp_interface import SdpProblem, SolveOptions, Status, solve_feasibility, verify_solution, write_sdpa


def trivial() -> SdpProblem:
    p = SdpProblem("trivial")
    p.matrix("X", 1, psd_margin=0.0)
    p.add_lmi(lambda v: v["X"] - np.eye(1), "le", name="X<=1")
    return p


def test_trivially_feasible():
    p = trivial()
    res = solve_feasibility(p)
    assert res.feasible
    assert 0.0 - 1e-7 <= res.assignment["X"][0, 0] <= 1.0 + 1e-7
    rep = verify_solution(p, {"X": np.array([[0.5]])})
    assert rep.ok and min(rep.margins.values()) >= 0


def test_contradictory_constraints():
    p = SdpProblem()
    p.matrix("X", 1)
    p.add_lmi(lambda v: v["X"] - np.eye(1), "ge")
    p.add_lmi(lambda v: v["X"] + np.eye(1), "le")
    assert solve_feasibility(p).status == Status.INFEASIBLE


def test_psd_determinant_condition():
    p = SdpProblem()
    p.scalar("t", lower=2.0)
    p.add_lmi(lambda v: np.array([[1.0, v["t"]], [v["t"], 1.0]]), "ge")
    assert solve_feasibility(p).status == Status.INFEASIBLE


def test_wrong_direction_perturbation():
    p = trivial()
    res = solve_feasibility(p)
    before = res.report.margins["X<=1"]
    bad = {"X": res.assignment["X"] + 10 * np.eye(1)}
    rep = verify_solution(p, bad)
    assert not rep.ok
    # the identity shift moves the eigenvalue by exactly 10
    assert abs(rep.max_violation - (10 - before)) < 1e-9 and 9 <= rep.max_violation <= 10
    rep = verify_solution(p, {"X": np.eye(1) * 11})
    assert abs(rep.max_violation - 10) < 1e-12


def test_empty_problem():
    p = SdpProblem()
    rep = verify_solution(p, {})
    assert rep.margins == {} and rep.ok
    assert solve_feasibility(p).feasible


def test_strict_margin_respected():
    p = SdpProblem()
    p.matrix("X", 2, psd_margin=0.25)
    p.add_lmi(lambda v: v["X"], "le", 0.0, strict=False)
    assert solve_feasibility(p).status != Status.FEASIBLE


def test_non_affine_rejected():
    p = SdpProblem()
    p.scalar("t")
    p.add_lmi(lambda v: np.array([[v["t"] ** 2]]), "ge")
    with pytest.raises(ValueError, match="not affine"):
        p.compile()


def test_asymmetric_rejected():
    p = SdpProblem()
    p.scalar("t")
    p.add_lmi(lambda v: np.array([[0.0, v["t"]], [0.0, 0.0]]), "ge")
    with pytest.raises(ValueError, match="symmetric"):
        p.compile()


def test_declaration_errors():
    p = SdpProblem()
    p.scalar("a")
    with pytest.raises(ValueError):
        p.scalar("a")
    with pytest.raises(ValueError):
        p.add_lmi(lambda v: v["a"], "lt")
    with pytest.raises(ValueError):
        p.add_linear(lambda v: v["a"], "gt")


class _Crash:
    def solve(self, p, opts):
        raise RuntimeError("boom")


class _LiarBackend:
    """Claims optimality with a point that violates the constraints."""

    def solve(self, p, opts):
        return "optimal", np.full(p.nvar, 5.0), 1.0, {}


def test_backend_crash_is_inconclusive():
    res = solve_feasibility(trivial(), backend=_Crash())
    assert res.status == Status.INCONCLUSIVE and "boom" in res.diagnostic


def test_unverified_claim_is_not_feasible():
    res = solve_feasibility(trivial(), backend=_LiarBackend())
    assert res.status == Status.INCONCLUSIVE and res.max_violation > 1


def test_deterministic():
    r1, r2 = solve_feasibility(trivial()), solve_feasibility(trivial())
    np.testing.assert_array_equal(r1.assignment["X"], r2.assignment["X"])


def _read_sdpa(path):
    with open(path) as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith('"')]
    n, nb = int(lines[0]), int(lines[1])
    sizes = [int(s) for s in lines[2].split()]
    mats = [[np.zeros((abs(s), abs(s))) for s in sizes] for _ in range(n + 1)]
    for l in lines[4:]:
        k, b, i, j, val = l.split()
        M = mats[int(k)][int(b) - 1]
        M[int(i) - 1, int(j) - 1] = M[int(j) - 1, int(i) - 1] = float(val)
    assert nb == len(sizes)
    return n, mats


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_sdpa_matches_constraints(seed, tmp_path_factory):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    p = SdpProblem("rand")
    p.matrix("X", 3)
    p.scalar("s", lower=-1.0)
    p.add_lmi(lambda v: A.T @ v["X"] + v["X"] @ A + v["s"] * np.eye(3), "le", 0.1)
    p.add_linear(lambda v: v["X"][0, 0] - 2 * v["s"], "eq")
    path = tmp_path_factory.mktemp("sdpa") / "p.dat-s"
    write_sdpa(p, str(path))
    n, mats = _read_sdpa(path)
    assert n == p.nvar
    x = rng.standard_normal(n)
    vals = p.unpack(x)
    lmi = sum(x[k] * mats[k + 1][0] for k in range(n)) - mats[0][0]
    direct = -(A.T @ vals["X"] + vals["X"] @ A + vals["s"] * np.eye(3)) - 0.1 * np.eye(3)
    np.testing.assert_allclose(lmi, direct, atol=1e-9)
    lin = np.diag(sum(x[k] * mats[k + 1][1] for k in range(n)) - mats[0][1])
    r = vals["X"][0, 0] - 2 * vals["s"]
    np.testing.assert_allclose(lin, [vals["s"] + 1.0, r, -r], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pack_unpack_roundtrip(seed):
    rng = np.random.default_rng(seed)
    p = SdpProblem()
    p.matrix("X", 3)
    p.scalar("a")
    x = rng.standard_normal(p.nvar)
    np.testing.assert_array_equal(p.pack(p.unpack(x)), x)
    v = p.unpack(x)
    np.testing.assert_array_equal(v["X"], v["X"].T)


def test_dump_option(tmp_path):
    path = tmp_path / "t.dat-s"
    solve_feasibility(trivial(), SolveOptions(dump_sdpa=str(path)))
    assert path.read_text().startswith('"trivial')


def test_strict_margin_cannot_be_absorbed_by_tolerance():
    # X = 0 misses "X <= -delta I" by delta only, which is below the 1e-7
    # tolerance, yet it is no strict certificate
    p = SdpProblem()
    p.matrix("X", 2)
    p.add_lmi(lambda v: v["X"], "le", 1e-8)
    rep = verify_solution(p, {"X": np.zeros((2, 2))})
    assert rep.max_violation <= rep.tol and not rep.ok
    assert verify_solution(p, {"X": -0.6e-8 * np.eye(2)}).ok
