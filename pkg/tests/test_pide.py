from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levymerton.factor import OuParams
from levymerton.levy import SubordinatorSpec, sample_jump_matrix, stream
from levymerton.market import (Affine, GrowthConstants, MarketModel, derive_constants,
                               merton_constant)
from levymerton.oracle import merton_closed_form
from levymerton.pide import (CFLViolation, SolverGrid, ValueSurface, backward_stepper,
                             cfl_number, consumption_surface, derivative_bound_check,
                             envelope_breaches, jump_matrix, read_surface_csv, solve,
                             write_surface_csv)


@pytest.mark.parametrize("reaction", ["exact", "euler"])
def test_merton_closed_form(merton, reaction):
    model, ou = merton
    start = time.perf_counter()
    s = solve(model, ou, SolverGrid(M=2000, J=200), reaction=reaction)
    elapsed = time.perf_counter() - start
    exact = merton_closed_form(0.04, 0.5, 1.0, s.t_nodes)[:, None]
    assert np.max(np.abs(s.values / exact - 1)) <= 1e-4
    assert elapsed < 10
    assert s(0.0, 0.5) == pytest.approx(math.sqrt(26 * math.exp(0.04) - 25), rel=1e-4)


def test_null_measure_columns_identical(merton):
    model, ou = merton
    s = solve(model, ou, SolverGrid(M=500, J=50))
    assert np.max(np.abs(s.values - s.values[:, :1])) <= 1e-12


def test_terminal_slice_and_bounds(bns, bns_const, bns_surface):
    model, _ = bns
    assert np.all(bns_surface.values[-1] == 1.0)
    assert envelope_breaches(bns_surface, model, bns_const) == []
    assert bns_surface.report.n_breaches == 0
    assert np.all(bns_surface.values >= 1.0)


def test_consumption_monotone(bns, bns_surface):
    c = consumption_surface(bns_surface, bns[0].gamma)
    assert np.all((c > 0) & (c <= 1))
    assert np.all(c[-1] == 1.0)
    assert np.all(np.diff(c, axis=0) >= 0)  # nondecreasing in t
    assert np.all(np.diff(c, axis=1) <= 0)  # nonincreasing in y


def test_euler_and_exact_reaction_agree(bns, bns_const, bns_surface):
    model, ou = bns
    euler = solve(model, ou, SolverGrid(M=2000, J=200), bns_const, reaction="euler")
    assert np.max(np.abs(euler.values - bns_surface.values)) <= 1e-4


def test_grid_refinement_cauchy_ratio(bns, bns_const):
    model, ou = bns
    vals = [solve(model, ou, SolverGrid(M=250 * 2**k, J=25 * 2**k), bns_const)(0.0, 0.2)
            for k in range(4)]
    d = np.abs(np.diff(vals))
    assert np.all(d[1:] / d[:-1] <= 0.6)


def test_derivative_bound(bns, bns_const, bns_surface):
    model, ou = bns
    rep = derivative_bound_check(bns_surface, model, ou, bns_const)
    assert rep.fraction_within >= 0.99
    assert rep.worst_ratio < 1


def test_derivative_bound_null(merton):
    model, ou = merton
    const = derive_constants(model, ou)
    s = solve(model, ou, SolverGrid(M=400, J=40), const)
    assert derivative_bound_check(s, model, ou, const).fraction_all == 1.0
    assert np.max(np.abs(np.diff(s.values, axis=1))) <= 1e-12


def test_cfl_and_kappa_preconditions(bns, bns_const):
    model, ou = bns
    with pytest.raises(CFLViolation):
        solve(model, ou, SolverGrid(M=2, J=2000), bns_const)
    with pytest.raises(ValueError, match="kappa"):
        solve(model, ou, SolverGrid(M=200, J=20, kappa=1.0), bns_const)
    with pytest.raises(ValueError, match="horizon"):
        solve(model, ou, SolverGrid(T=2.0, M=200, J=20), bns_const)
    assert cfl_number(model, ou, SolverGrid()) < 0.9


def test_jump_matrix_rows(bns, bns_const):
    _, ou = bns
    grid = SolverGrid(M=100, J=200)
    W0 = jump_matrix(ou, grid, 0.0)
    assert np.allclose(W0.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    # linear functions are reproduced inside the grid: E[y + Z] = y + 1/eta
    W = jump_matrix(ou, grid, bns_const.b_prime)
    y = grid.y_nodes
    inner = y + 12 / 15 < grid.y_max
    assert np.allclose((W @ y)[inner], (y + 1 / 15)[inner], rtol=0, atol=1e-5)


def test_jump_matrix_exponential_tail(bns, bns_const):
    # f = e^{B'y} is reproduced exactly by the extrapolation and tail rules
    _, ou = bns
    grid = SolverGrid(M=100, J=400)
    b = bns_const.b_prime
    W = jump_matrix(ou, grid, b)
    f = np.exp(b * grid.y_nodes)
    expect = f * 15 / (15 - b)
    assert np.allclose(W @ f, expect, rtol=2e-4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_scheme_preserves_order(seed):
    from levymerton.market import bns_example

    model, ou = bns_example()
    const = derive_constants(model, ou)
    base = SolverGrid(M=100, J=100)
    limit = 0.9 / (cfl_number(model, ou, base) / base.dt)
    grid = SolverGrid(M=math.ceil(2 / limit), J=100)  # dt at half the CFL limit
    rng = np.random.default_rng(seed)
    step = backward_stepper(model, ou, grid, const)
    lo = 1 + rng.uniform(0, 3, grid.J)
    hi = lo + rng.uniform(0, 1, grid.J)
    assert np.all(step(hi) >= step(lo) - 1e-14)


def test_y_max_covers_stationary_factor(bns):
    # factor started at the stationary mean and run for ten relaxation times
    _, ou = bns
    lam, horizon, n = ou.reversion, 60.0, 100_000
    times, sizes = sample_jump_matrix(ou.spec, 0.0, horizon, lam, n, stream(99, 0))
    when = np.where(np.isfinite(times), times, horizon)  # padded entries carry zero size
    y = (0.5 / 15) * math.exp(-lam * horizon) + (sizes * np.exp(-lam * (horizon - when))).sum(axis=1)
    assert np.mean(y > 2.0) < 1e-4
    assert abs(y.mean() - 0.5 / 15) <= 3 * y.std(ddof=1) / math.sqrt(n)


def test_surface_interpolation():
    t = np.linspace(0, 1, 5)
    y = np.linspace(0.1, 1.0, 10)
    vals = 1 + t[:, None] + 2 * y[None, :]
    s = ValueSurface(t, y, vals, tail_rate=0.5)
    assert s(0.25, 0.4) == pytest.approx(1 + 0.25 + 0.8)
    assert s(0.3, 0.55) == pytest.approx(1 + 0.3 + 1.1)  # bilinear reproduces affine
    assert s(0.0, 0.05) == pytest.approx(1 + 0.2)      # flat below the first node
    assert s(0.0, 1.4) == pytest.approx(3.0 * math.exp(0.5 * 0.4))
    with pytest.raises(ValueError):
        ValueSurface(np.array([0, 0.1, 0.5]), y, np.ones((3, 10)))


def test_surface_csv_roundtrip(tmp_path, merton):
    model, ou = merton
    s = solve(model, ou, SolverGrid(M=40, J=5))
    path = tmp_path / "surface.csv"
    write_surface_csv(s, model.gamma, path)
    header = path.read_text().splitlines()[0]
    assert header == "t,y,f,consumption_rate"
    back = read_surface_csv(path)
    assert np.array_equal(back.values, s.values)
