"""Acceptance criteria, one test each; a summary line per criterion is printed at the end."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import record
from levymerton.factor import integrated_level, path_from_jumps
from levymerton.levy import (SubordinatorSpec, check_condition_b, laplace_exponent,
                             laplace_exponent_quad, sample_jump_matrix, stream)
from levymerton.market import optimal_fraction
from levymerton.oracle import (McConfig, contraction_check, merton_closed_form,
                               pathwise_certainty, random_band_surface)
from levymerton.pide import SolverGrid, consumption_surface, envelope_breaches, solve
from levymerton.strategy import (constant_vol_policy, draw_noise, frozen_market, log_policy,
                                 optimality_probe, power_policy, simulate_batch)

pytestmark = pytest.mark.slow


def test_01_merton_oracle(merton):
    model, ou = merton
    start = time.perf_counter()
    s = solve(model, ou, SolverGrid(M=2000, J=200))
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(s.values / merton_closed_form(0.04, 0.5, 1.0, s.t_nodes)[:, None] - 1)))
    ok = record(1, "Merton closed form on 2000x200", err <= 1e-4 and elapsed < 10,
                f"max relative error {err:.2e} (tol 1e-4), {elapsed:.2f}s (limit 10s)")
    assert ok


def test_02_fixed_point_residual(bns_residual, bns_fine_surface):
    rep, seconds = bns_residual
    total = seconds + bns_fine_surface.report.seconds
    z = (rep.estimate - bns_fine_surface(rep.t, rep.y)) / rep.std_error
    ok = record(2, "fixed-point residual, 20 probes x 1e5 paths",
                bool(np.all(np.abs(z) <= 3)) and total < 120,
                f"max |residual|/SE = {np.max(np.abs(z)):.2f} (tol 3), {total:.1f}s (limit 120s)")
    assert ok


def test_03_contraction(bns, bns_const):
    model, ou = bns
    rng = stream(303, 0)
    t, y = np.linspace(0, 1, 5), np.linspace(0.05, 2.0, 9)
    cfg = McConfig(n_paths=2000, seed=31)
    worst, passed = -math.inf, 0
    for _ in range(10):
        phi = random_band_surface(t, y, model, bns_const, rng)
        xi = random_band_surface(t, y, model, bns_const, rng)
        cc = contraction_check(phi, xi, model, ou, cfg, bns_const)
        passed += cc.passed
        worst = max(worst, (cc.distance_out - 3 * cc.sigma) / cc.distance_in)
    ok = record(3, "contraction on 10 random band pairs", passed == 10,
                f"{passed}/10 pairs within bound; worst (d_out - 3 sigma)/d_in = {worst:.3f} "
                f"vs modulus {bns_const.contraction_modulus:.3f}")
    assert ok


def test_04_envelope_bounds(bns, bns_const, bns_surface, bns_fine_surface):
    model, _ = bns
    counts = [len(envelope_breaches(s, model, bns_const, rel_tol=1e-8))
              for s in (bns_surface, bns_fine_surface)]
    ok = record(4, "1 <= f <= envelope at every node", sum(counts) == 0,
                f"breaches on 2000x200 and 8000x800 grids: {counts}")
    assert ok


def test_05_consumption_surface_shape(bns, bns_surface):
    model, _ = bns
    c = consumption_surface(bns_surface, model.gamma)
    in_t = bool(np.all(np.diff(c, axis=0) >= 0))
    in_y = bool(np.all(np.diff(c, axis=1) <= 0))
    pi_one = bool(np.all(optimal_fraction(model, bns_surface.y_nodes) == 1.0))
    ok = record(5, "consumption nondecreasing in t, nonincreasing in y, pi = 1",
                in_t and in_y and pi_one, f"t-monotone {in_t}, y-monotone {in_y}, pi==1 {pi_one}")
    assert ok


def test_06_forced_jump_paths(bns, bns_surface):
    model, ou = bns
    jumps = ([0.05, 0.65], [0.12, 0.07])
    noise = draw_noise(ou, 1.0, 2000, 1, stream(606, 0), forced_jumps=jumps)
    sto = simulate_batch(power_policy(bns_surface, model), model, ou, noise).path(0)
    y0 = ou.initial_level
    const = simulate_batch(constant_vol_policy(model, y0), frozen_market(model, y0), ou,
                           noise).path(0)
    after = sto.t > 0.05
    above = sto.c_over_X[after] > const.c_over_X[after]
    steps = np.abs(np.diff(sto.c_over_X))
    k = int(round(0.05 * 2000))
    jump = steps[k]
    discontinuous = jump > 20 * np.median(steps)
    ok = record(6, "stochastic-vol c/X above constant-vol on (0.05, T], jump at 0.05",
                bool(above.all()) and discontinuous,
                f"above on {above.mean():.1%} of nodes after 0.05 "
                f"(min difference {np.min(sto.c_over_X[after] - const.c_over_X[after]):+.4f}); "
                f"c/X change at 0.05: {sto.c_over_X[k + 1] - sto.c_over_X[k]:+.4f} "
                f"vs median step {np.median(steps):.1e}")
    assert ok


def test_07_pathwise_identity(bns):
    _, ou = bns
    n = 10_000
    times, sizes = sample_jump_matrix(ou.spec, 0.0, 1.0, ou.reversion, n, stream(707, 0))
    worst = 0.0
    for i in range(n):
        live = np.isfinite(times[i])
        p = path_from_jumps(ou, 0.0, 1.0, times[i, live], sizes[i, live])
        resid = ou.reversion * integrated_level(p, 0.0, 1.0) + p(1.0) - ou.initial_level \
            - p.jump_mass(0.0, 1.0)
        worst = max(worst, abs(resid))
    ok = record(7, "pathwise identity on 1e4 paths", worst <= 1e-12,
                f"max |residual| = {worst:.2e} (tol 1e-12)")
    assert ok


def test_08_jensen_gap(bns, merton):
    model, ou = bns
    main = pathwise_certainty(model, ou, 0.0, 0.2, McConfig(n_paths=100_000, seed=808),
                              n_inner=20_000)
    other = pathwise_certainty(model, ou, 0.5, 0.5, McConfig(n_paths=20_000, seed=809),
                               n_inner=10_000)
    m_model, m_ou = merton
    null = pathwise_certainty(m_model, m_ou, 0.0, 0.2, McConfig(n_paths=1000, seed=810),
                              n_inner=1000)
    nonneg = all(r.gap >= -3 * r.gap_se for r in (main, other, null))
    strict = main.gap > 3 * main.gap_se
    zero = abs(null.gap) <= 3 * null.gap_se
    ok = record(8, "Jensen gap nonnegative, strict for jumps, zero without",
                nonneg and strict and zero,
                f"gap(0,0.2) = {main.gap:.3e} +- {main.gap_se:.1e}; "
                f"gap(0.5,0.5) = {other.gap:.3e} +- {other.gap_se:.1e}; "
                f"null gap = {null.gap:.1e} +- {null.gap_se:.1e}")
    assert ok


def test_09_log_utility(bns):
    model, ou = bns
    noise = draw_noise(ou, 1.0, 2000, 2000, stream(909, 0))
    b = simulate_batch(log_policy(model), model, ou, noise)
    rule = 1.0 / (1.0 + 1.0 - b.t)
    exact = bool(np.all(b.c_over_X == rule[None, :]))
    ratio = float(np.max(np.abs(b.c * (2.0 - b.t) / b.X - 1)))
    ok = record(9, "log utility c/X = 1/(1+T-t) on every path", exact and ratio <= 1e-15,
                f"2000 paths, exact equality {exact}, max |c(1+T-t)/X - 1| = {ratio:.1e}")
    assert ok


def test_10_laplace_exponent(bns):
    model, ou = bns
    spec = SubordinatorSpec.compound_poisson(0.5, 15.0)
    ws = [-2.0, -1.0] + list(np.arange(0.5, 15.0, 0.5))
    worst = max(abs(laplace_exponent(spec, w) / laplace_exponent_quad(spec, w) - 1) for w in ws)
    good = check_condition_b(spec, model, ou.reversion).passed
    bad = check_condition_b(SubordinatorSpec.compound_poisson(0.5, 1.0), model, ou.reversion).passed
    ok = record(10, "Laplace exponent vs quadrature; condition B gate",
                worst <= 1e-8 and good and not bad,
                f"max relative difference {worst:.1e} (tol 1e-8); eta=15 passes {good}, "
                f"eta=1 passes {bad}")
    assert ok


def test_11_grid_convergence(bns, bns_const):
    model, ou = bns
    vals = [solve(model, ou, SolverGrid(M=1000 * 2**k, J=100 * 2**k), bns_const)(0.0, 0.2)
            for k in range(4)]
    d = np.abs(np.diff(vals))
    ratios = d[1:] / d[:-1]
    ok = record(11, "Cauchy ratio under grid halving", bool(np.all(ratios <= 0.6)),
                f"f(0, 0.2) = {', '.join(f'{v:.8f}' for v in vals)}; ratios "
                f"{', '.join(f'{r:.3f}' for r in ratios)} (tol 0.6)")
    assert ok


def test_12_optimality_probe(bns, bns_surface):
    model, ou = bns
    res = optimality_probe(bns_surface, model, ou, 10_000, 2000, stream(1212, 0))
    worst = min(res, key=lambda c: c.mean_diff / c.std_error)
    ok = record(12, "optimal rule beats 8 perturbations (paired, -3 sigma)",
                len(res) == 8 and all(c.passed for c in res),
                f"{sum(c.passed for c in res)}/8 pass; closest: {worst.name} "
                f"{worst.mean_diff:+.2e} +- {worst.std_error:.1e}")
    assert ok
