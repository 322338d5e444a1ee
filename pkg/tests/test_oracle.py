from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp

from levymerton.factor import OuParams, integrated_q, path_from_jumps
from levymerton.levy import SubordinatorSpec, sample_jump_matrix, stream
from levymerton.market import (Affine, GrowthConstants, MarketModel, derive_constants,
                               envelope_upper, q_value)
from levymerton.oracle import (McConfig, MetricParams, ProbeReport, apply_operator, coarsen,
                               contraction_check, default_probes, fbar, fbar_samples,
                               fixed_point_iterate, merton_closed_form, metric_distance,
                               operator_samples, path_functionals, pathwise_certainty,
                               random_band_surface)
from levymerton.pide import ValueSurface

T = 1.0


def const_surface(value=1.0, t=np.linspace(0, 1, 5), y=np.linspace(0.05, 2.0, 6), tail=0.0):
    return ValueSurface(t, y, np.full((t.size, y.size), value), tail)


# --- closed form --------------------------------------------------------------------

def test_merton_reference_values():
    assert merton_closed_form(0.04, 0.5, 1.0, 1.0) == 1.0
    assert merton_closed_form(0.04, 0.5, 1.0, 0.0) == pytest.approx(
        math.sqrt(26 * math.exp(0.04) - 25), rel=1e-14)
    for g in (0.1, 0.5, 0.9):
        t = np.linspace(0, 1, 7)
        assert np.allclose(merton_closed_form(0.0, g, 1.0, t), (2 - t) ** (1 - g), rtol=1e-14)


@pytest.mark.parametrize("q,g", [(0.04, 0.5), (0.175, 0.75), (0.0, 0.3), (1e-9, 0.6)])
def test_merton_closed_form_matches_ode(q, g):
    p = g / (1 - g)
    sol = solve_ivp(lambda t, f: -(g * q * f + (1 - g) * f ** (-p)), (1.0, 0.0), [1.0],
                    method="DOP853", rtol=1e-13, atol=1e-14, dense_output=True)
    t = np.linspace(0, 1, 11)
    assert np.allclose(merton_closed_form(q, g, 1.0, t), sol.sol(t)[0], rtol=0, atol=1e-10)
    h = 1e-3
    f = lambda s: merton_closed_form(q, g, 1.0, s)
    for s in (0.1, 0.5, 0.9):
        d = (-f(s + 2 * h) + 8 * f(s + h) - 8 * f(s - h) + f(s - 2 * h)) / (12 * h)
        assert abs(d + g * q * f(s) + (1 - g) * f(s) ** (-p)) <= 1e-10


# --- operator -----------------------------------------------------------------------

def test_operator_constant_q_analytic(merton):
    model, ou = merton
    g, q = model.gamma, 0.04
    probes = ((0.0, 0.2), (0.4, 1.0), (0.9, 0.1))
    rep = apply_operator(const_surface(), model, ou, McConfig(n_paths=200, probe_points=probes))
    for t, est, se in zip(rep.t, rep.estimate, rep.std_error):
        e = math.exp(g * q * (T - t))
        exact = e + (1 - g) * (e - 1) / (g * q)
        assert abs(est - exact) <= 3 * se + 1e-12 * exact


def test_operator_at_horizon_is_one(bns):
    model, ou = bns
    rep = apply_operator(const_surface(1.3), model, ou,
                         McConfig(n_paths=100, probe_points=((1.0, 0.2), (1.0, 1.5))))
    assert np.all(rep.estimate == 1.0) and np.all(rep.std_error == 0.0)


def test_operator_rejects_surface_below_one(bns):
    model, ou = bns
    with pytest.raises(ValueError, match="precondition f<1"):
        apply_operator(const_surface(0.99), model, ou, McConfig(n_paths=100))


def test_mc_config_validation():
    with pytest.raises(ValueError):
        McConfig(n_paths=99)


def test_path_integrals_match_scalar_route(bns):
    # same jumps, two independent integration routes
    model, ou0 = bns
    ou = OuParams(ou0.reversion, 0.3, SubordinatorSpec.compound_poisson(30.0, 15.0))
    t, y, n, g = 0.2, 0.3, 60, model.gamma
    q = lambda v: q_value(model, v)
    I_T, (run,) = path_functionals(model, ou, t, y, n, stream(5, 1), None, [(g, None)])
    times, sizes = sample_jump_matrix(ou.spec, t, T, ou.reversion, n, stream(5, 1))
    for i in range(n):
        live = np.isfinite(times[i])
        p = path_from_jumps(ou, t, T, times[i, live], sizes[i, live])
        assert I_T[i] == pytest.approx(integrated_q(p, q, t, T), abs=1e-10)
        # affine Q: I(s) in closed form, outer integral by adaptive quadrature
        from levymerton.factor import integrated_level

        inner = lambda s: 0.1 * (s - t) + 0.375 * integrated_level(p, t, s)
        pts = list(p.jump_times)
        val, _ = quad(lambda s: math.exp(g * inner(s)), t, T, points=pts or None,
                      epsabs=1e-13, limit=200)
        assert run[i] == pytest.approx(val, abs=1e-9)


def test_envelope_maps_into_band(bns, bns_const):
    model, ou = bns
    t = np.linspace(0, 1, 11)
    y = np.linspace(0.01, 2.0, 21)
    env = ValueSurface(t, y, envelope_upper(bns_const, model.gamma, t[:, None], y[None, :], T),
                       bns_const.b_prime)
    rep = apply_operator(env, model, ou, McConfig(n_paths=2000, seed=3), bns_const)
    assert np.all(rep.estimate >= 1.0)
    assert np.all(rep.estimate - 3 * rep.std_error <= rep.envelope)


def test_probe_csv(tmp_path, bns, bns_const):
    model, ou = bns
    rep = apply_operator(const_surface(), model, ou,
                         McConfig(n_paths=100, probe_points=((0.0, 0.2),)), bns_const)
    f = tmp_path / "probes.csv"
    rep.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "t,y,estimate,std_error,lower_bound,upper_bound,envelope"
    row = [float(v) for v in lines[1].split(",")]
    assert row[4] == pytest.approx(row[2] - 3 * row[3]) and row[5] == pytest.approx(row[2] + 3 * row[3])


def test_default_probes():
    pts = default_probes()
    assert len(pts) == 20 and len(set(pts)) == 20


# --- metric ---------------------------------------------------------------------------

def _rand_surface(rng, t, y):
    return ValueSurface(t, y, 1 + rng.uniform(0, 3, (t.size, y.size)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(0.1, 5.0), b=st.floats(0.0, 3.0))
def test_metric_axioms(seed, alpha, b):
    rng = np.random.default_rng(seed)
    t, y = np.linspace(0, 1, 4), np.linspace(0.1, 2, 5)
    f, g, h = (_rand_surface(rng, t, y) for _ in range(3))
    m = MetricParams(alpha, b)
    assert metric_distance(f, f, m) == 0.0
    assert metric_distance(f, g, m) == metric_distance(g, f, m) > 0
    assert metric_distance(f, h, m) <= metric_distance(f, g, m) + metric_distance(g, h, m) + 1e-15


def test_metric_weights_and_grid_check():
    t, y = np.linspace(0, 1, 3), np.linspace(0.5, 1.5, 3)
    f = ValueSurface(t, y, np.ones((3, 3)))
    g = f.with_values(np.where(np.arange(9).reshape(3, 3) == 4, 2.0, 1.0))  # bump at (0.5, 1.0)
    assert metric_distance(f, g, MetricParams(2.0, 1.0)) == pytest.approx(math.exp(-1.0 - 1.0))
    other = ValueSurface(t, y + 0.1, np.ones((3, 3)))
    with pytest.raises(ValueError):
        metric_distance(f, other, MetricParams(1.0, 1.0))


def test_contraction_random_pairs(bns, bns_const):
    model, ou = bns
    rng = np.random.default_rng(8)
    t, y = np.linspace(0, 1, 5), np.linspace(0.05, 2.0, 9)
    cfg = McConfig(n_paths=2000, seed=4)
    for _ in range(3):
        phi = random_band_surface(t, y, model, bns_const, rng)
        xi = random_band_surface(t, y, model, bns_const, rng)
        assert np.all(phi.values >= 1)
        cc = contraction_check(phi, xi, model, ou, cfg, bns_const)
        assert cc.passed, cc


# --- fixed point iteration ---------------------------------------------------------------

def test_fixed_point_converges_to_closed_form(merton):
    model, ou = merton
    const = derive_constants(model, ou)
    t, y = np.linspace(0, 1, 41), np.array([0.1, 0.55, 1.0])
    res = fixed_point_iterate(const_surface(1.0, t, y), model, ou, McConfig(n_paths=100), 5,
                              const)
    f5 = res.surfaces[-1]
    exact = merton_closed_form(0.04, 0.5, 1.0, t)[:, None]
    # deterministic paths: standard errors vanish, the allowance covers t-interpolation
    assert np.max(np.abs(f5.values - exact)) <= 5 * max(res.std_errors) + 1e-4
    assert np.all(res.surfaces[1].values >= 1.0)
    d = np.array(res.distances)
    assert np.all(d[1:] <= const.contraction_modulus * d[:-1] + 1e-12)


def test_fixed_point_iteration_stochastic(bns, bns_const):
    model, ou = bns
    t, y = np.linspace(0, 1, 5), np.linspace(0.05, 1.0, 4)
    res = fixed_point_iterate(const_surface(1.0, t, y, bns_const.b_prime), model, ou,
                              McConfig(n_paths=500, seed=1), 4, bns_const)
    d = np.array(res.distances)
    noise = 3 * np.array(res.std_errors)
    assert np.all(res.surfaces[1].values >= 1.0)
    assert np.all(d[1:] <= bns_const.contraction_modulus * d[:-1] + noise[1:])


def test_coarsen_keeps_values(bns_surface):
    c = coarsen(bns_surface, np.linspace(0, 1, 11), np.linspace(0.2, 2.0, 10))
    assert c.values[3, 2] == pytest.approx(bns_surface(0.3, 0.6), rel=1e-14)


def test_pide_surface_within_99pct_band(bns_residual, bns_fine_surface):
    rep, _ = bns_residual
    z = (rep.estimate - bns_fine_surface(rep.t, rep.y)) / rep.std_error
    assert np.all(np.abs(z) <= 2.576)


# --- pathwise certainty ------------------------------------------------------------------

def test_fbar_null_equals_closed_form(merton):
    model, ou = merton
    p = path_from_jumps(ou, 0.0, 1.0, [], [])
    for t in (0.0, 0.3, 0.9):
        assert fbar(p, model, t) == pytest.approx(merton_closed_form(0.04, 0.5, 1.0, t), abs=1e-8)


def test_fbar_vectorised_matches_scalar(bns):
    model, ou0 = bns
    ou = OuParams(ou0.reversion, 0.2, SubordinatorSpec.compound_poisson(30.0, 15.0))
    vec = fbar_samples(model, ou, 0.1, 0.2, 40, stream(6, 2))
    times, sizes = sample_jump_matrix(ou.spec, 0.1, T, ou.reversion, 40, stream(6, 2))
    for i in range(40):
        live = np.isfinite(times[i])
        p = path_from_jumps(ou, 0.1, T, times[i, live], sizes[i, live])
        # the two routes place Simpson nodes differently on each piece
        assert vec[i] == pytest.approx(fbar(p, model), abs=1e-10)


def test_jensen_gap_null_is_zero(merton):
    model, ou = merton
    r = pathwise_certainty(model, ou, 0.0, 0.2, McConfig(n_paths=200), n_inner=500)
    assert r.gap == 0.0 and r.gap_se == 0.0
    assert r.mean_fbar == pytest.approx(merton_closed_form(0.04, 0.5, 1.0, 0.0), rel=1e-12)


def test_jensen_gap_positive_stochastic(bns):
    model, ou = bns
    r = pathwise_certainty(model, ou, 0.0, 0.2, McConfig(n_paths=20_000, seed=5), n_inner=5000)
    assert r.gap > 3 * r.gap_se
    # the deterministic-path value is never above the optimum it approximates
    assert r.mean_fbar < 1.3131628 + 3 * r.se_fbar
