import numpy as np
import pytest

from iqcrate.ss_core import StateSpace, from_tf


def nmp_plant() -> StateSpace:
    # 5(s-1) / (s (s^2 + s + 25)); closing with u = y gives s^3 + s^2 + 20 s + 5
    return from_tf([5.0, -5.0], [1.0, 1.0, 25.0, 0.0])


def lpv_vertex(rho: float) -> StateSpace:
    # x' = v, v' = -rho v - u
    return StateSpace.build([[0.0, 1.0], [0.0, -rho]], [[0.0], [-1.0]], [[1.0, 0.0]], [[0.0]])


def random_stable(rng: np.random.Generator, n: int, m: int = 1, p: int = 1) -> StateSpace:
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.2, 1.5)) * np.eye(n)
    return StateSpace.build(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)), np.zeros((p, m)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
