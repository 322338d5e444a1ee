from __future__ import annotations

import numpy as np
import pytest

from levymerton.market import bns_example, derive_constants, merton_constant
from levymerton.oracle import McConfig, apply_operator
from levymerton.pide import SolverGrid, solve


@pytest.fixture(scope="session")
def bns():
    return bns_example()


@pytest.fixture(scope="session")
def bns_const(bns):
    return derive_constants(*bns)


@pytest.fixture(scope="session")
def merton():
    return merton_constant()


@pytest.fixture(scope="session")
def bns_surface(bns, bns_const):
    model, ou = bns
    return solve(model, ou, SolverGrid(M=2000, J=200), bns_const)


@pytest.fixture(scope="session")
def bns_fine_surface(bns, bns_const):
    """8000 x 800 grid: discretisation error well below the Monte Carlo noise."""
    model, ou = bns
    return solve(model, ou, SolverGrid(M=8000, J=800), bns_const)


@pytest.fixture(scope="session")
def bns_residual(bns, bns_const, bns_fine_surface):
    """Operator applied to the solver surface at the 20 standard probes, 1e5 paths each."""
    import time

    model, ou = bns
    start = time.perf_counter()
    rep = apply_operator(bns_fine_surface, model, ou, McConfig(n_paths=100_000, seed=2024),
                         bns_const)
    return rep, time.perf_counter() - start


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
    line = (number, name, bool(passed), detail)
    ACCEPTANCE.append(line)
    print(f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(
            f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
