"""Monte Carlo evaluation of the Feynman-Kac operator and its fixed point.

For a surface f >= 1 the operator is

    (Lf)(t, y) = E[ exp(gamma I(T)) + (1-gamma) int_t^T exp(gamma I(s)) f(s, Y(s))^{-p} ds ],
    I(s) = int_t^s Q(Y(u)) du,   p = gamma/(1-gamma),

with Y started at y at time t.  Time integrals are composite Simpson on each
inter-jump piece, so paths are simulated exactly and only quadrature error
remains.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .factor import FactorPath, OuParams
from .levy import sample_jump_matrix, stream
from .market import DerivedConstants, MarketModel, envelope_upper, q_value
from .pide import ValueSurface

_CHUNK = 1 << 21  # path-node evaluations held in memory at once


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 10_000
    seed: int = 0
    substep: float | None = None  # None -> (T - t)/128
    probe_points: tuple = ()

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")


@dataclass(frozen=True)
class MetricParams:
    alpha: float
    b_prime: float

    @classmethod
    def from_constants(cls, const: DerivedConstants) -> "MetricParams":
        return cls(const.alpha, const.b_prime)

    def weight(self, t, y, T):
        return np.exp(-self.alpha * (T - np.asarray(t)) - self.b_prime * np.asarray(y))


@dataclass
class ProbeReport:
    t: np.ndarray
    y: np.ndarray
    estimate: np.ndarray
    std_error: np.ndarray
    envelope: np.ndarray | None = None
    samples: list | None = field(default=None, repr=False)

    def to_csv(self, path) -> None:
        env = self.envelope if self.envelope is not None else np.full_like(self.t, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y", "estimate", "std_error", "lower_bound", "upper_bound", "envelope"])
            for row in zip(self.t, self.y, self.estimate, self.std_error, env):
                t, y, est, se, e = map(float, row)
                w.writerow([f"{v:.17g}" for v in (t, y, est, se, est - 3 * se, est + 3 * se, e)])


def default_probes(T: float = 1.0) -> list[tuple[float, float]]:
    """Twenty (t, y) points: four times by five factor levels."""
    return [(T * a, y) for a in (0.0, 0.25, 0.5, 0.75) for y in (0.1, 0.2, 0.3, 0.5, 0.8)]


def _simpson_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def path_functionals(model: MarketModel, ou: OuParams, t: float, y: float, n: int,
                     rng: np.random.Generator, substep: float | None,
                     terms: Sequence[tuple[float, Callable | None]]):
    """Simulate ``n`` factor paths from (t, y) and integrate along them.

    For every ``(rate, running)`` in ``terms`` returns, per path,
    ``int_t^T exp(rate * I(s)) running(s, Y(s)) ds`` where ``running`` may be
    ``None`` (meaning 1) or return an array with a leading channel axis.

    Returns
    -------
    I_T : (n,) array, int_t^T Q(Y(u)) du
    integrals : list with one (n,) or (C, n) array per term
    """
    T, lam = model.T, ou.reversion
    times, sizes = sample_jump_matrix(ou.spec, t, T, lam, n, rng)
    width_total = T - t
    if width_total <= 0:
        return np.zeros(n), [np.zeros(n) for _ in terms]
    if substep is None:
        substep = width_total / 128
    m = max(2, math.ceil(width_total / substep - 1e-9))
    m += m % 2
    x = np.linspace(0.0, 1.0, m + 1)
    sw = _simpson_weights(m)
    K = times.shape[1]

    I_T = np.zeros(n)
    out: list = [None] * len(terms)
    rows_per_chunk = max(1, _CHUNK // (m + 1))
    for lo in range(0, n, rows_per_chunk):
        hi = min(n, lo + rows_per_chunk)
        tt, zz = times[lo:hi], sizes[lo:hi]
        level = np.full(hi - lo, float(y))
        acc_I = np.zeros(hi - lo)
        acc = [None] * len(terms)
        for k in range(K + 1):
            rows = slice(None) if k == 0 else np.flatnonzero(np.isfinite(tt[:, k - 1]))
            if k and rows.size == 0:
                break
            left = np.full(hi - lo, t)[rows] if k == 0 else tt[rows, k - 1]
            right = tt[rows, k] if k < K else np.full_like(left, T)
            right = np.where(np.isfinite(right), right, T)
            width = right - left
            y0 = level[rows]
            decay = np.exp(-lam * width[:, None] * x[None, :])
            ys = y0[:, None] * decay
            s = left[:, None] + width[:, None] * x[None, :]
            h = (width / m)[:, None]
            cum = acc_I[rows][:, None] + cumulative_simpson(q_value(model, ys), dx=h, axis=1,
                                                            initial=0.0)
            for j, (rate, running) in enumerate(terms):
                weight = np.exp(rate * cum)
                vals = weight if running is None else weight * running(s, ys)
                piece = (vals @ sw) * h[:, 0]
                if acc[j] is None:
                    acc[j] = np.zeros(piece.shape[:-1] + (hi - lo,))
                acc[j][..., rows] += piece
            acc_I[rows] = cum[:, -1]
            level[rows] = ys[:, -1]
            if k < K:
                idx = np.arange(hi - lo)[rows]
                idx = idx[np.isfinite(tt[idx, k])]
                level[idx] += zz[idx, k]
        I_T[lo:hi] = acc_I
        for j in range(len(terms)):
            if out[j] is None:
                out[j] = np.zeros(acc[j].shape[:-1] + (n,))
            out[j][..., lo:hi] = acc[j]
    return I_T, out


def operator_samples(f: ValueSurface, model: MarketModel, ou: OuParams, t: float, y: float,
                     n: int, rng: np.random.Generator, substep: float | None = None) -> np.ndarray:
    """Per-path samples whose mean estimates (Lf)(t, y)."""
    g = model.gamma
    p = g / (1 - g)
    I_T, (run,) = path_functionals(model, ou, t, y, n, rng, substep,
                                   [(g, lambda s, ys: f(s, ys) ** (-p))])
    return np.exp(g * I_T) + (1 - g) * run


def _check_band(f: ValueSurface):
    if np.min(f.values) < 1 - 1e-12:
        raise ValueError(f"precondition f<1 violated: min f = {np.min(f.values):.6g}")


def apply_operator(f: ValueSurface, model: MarketModel, ou: OuParams, cfg: McConfig,
                   const: DerivedConstants | None = None, keep_samples: bool = False) -> ProbeReport:
    """Estimate (Lf) at ``cfg.probe_points``; probe ``k`` uses stream ``k`` of the seed."""
    _check_band(f)
    probes = list(cfg.probe_points) or default_probes(model.T)
    est, se, samples = [], [], []
    for k, (t, y) in enumerate(probes):
        x = operator_samples(f, model, ou, t, y, cfg.n_paths, stream(cfg.seed, k), cfg.substep)
        est.append(x.mean())
        se.append(x.std(ddof=1) / math.sqrt(x.size))
        if keep_samples:
            samples.append(x)
    t_arr = np.array([p[0] for p in probes], dtype=float)
    y_arr = np.array([p[1] for p in probes], dtype=float)
    env = None if const is None else envelope_upper(const, model.gamma, t_arr, y_arr, model.T)
    return ProbeReport(t_arr, y_arr, np.array(est), np.array(se), env,
                       samples if keep_samples else None)


def metric_distance(f: ValueSurface, g: ValueSurface, params: MetricParams) -> float:
    """sup over nodes of |exp(-alpha(T-t) - B'y) (f - g)|."""
    if not f.same_grid(g):
        raise ValueError("surfaces live on different grids")
    w = params.weight(f.t_nodes[:, None], f.y_nodes[None, :], f.T)
    return float(np.max(np.abs(w * (f.values - g.values))))


def coarsen(surface: ValueSurface, t_nodes, y_nodes) -> ValueSurface:
    """Sample ``surface`` on another lattice (keeps the tail rule)."""
    t_nodes, y_nodes = np.asarray(t_nodes, float), np.asarray(y_nodes, float)
    vals = surface(t_nodes[:, None], y_nodes[None, :])
    return ValueSurface(t_nodes, y_nodes, vals, surface.tail_rate)


@dataclass
class FixedPointResult:
    surfaces: list
    distances: list
    std_errors: list  # max weighted standard error per iteration


def fixed_point_iterate(f0: ValueSurface, model: MarketModel, ou: OuParams, cfg: McConfig,
                        n_iter: int, const: DerivedConstants) -> FixedPointResult:
    """Picard iteration f_{n+1} = L f_n on the lattice of ``f0``.

    Node ``k`` always draws from stream ``k`` so consecutive iterates share
    their random numbers.
    """
    _check_band(f0)
    params = MetricParams.from_constants(const)
    T = model.T
    surfaces, dists, errs = [f0], [], []
    nodes = [(i, j) for i in range(f0.t_nodes.size) for j in range(f0.y_nodes.size)]
    for _ in range(n_iter):
        cur = surfaces[-1]
        new = np.ones_like(cur.values)
        se = np.zeros_like(cur.values)
        for k, (i, j) in enumerate(nodes):
            t, y = cur.t_nodes[i], cur.y_nodes[j]
            if t >= T:
                continue
            x = operator_samples(cur, model, ou, t, y, cfg.n_paths, stream(cfg.seed, k),
                                 cfg.substep)
            new[i, j] = x.mean()
            se[i, j] = x.std(ddof=1) / math.sqrt(x.size)
        nxt = cur.with_values(new)
        w = params.weight(cur.t_nodes[:, None], cur.y_nodes[None, :], T)
        surfaces.append(nxt)
        dists.append(metric_distance(nxt, cur, params))
        errs.append(float(np.max(w * se)))
    return FixedPointResult(surfaces, dists, errs)


@dataclass
class ContractionCheck:
    distance_in: float
    distance_out: float
    sigma: float
    modulus: float

    @property
    def passed(self) -> bool:
        return self.distance_out <= self.modulus * self.distance_in + 3 * self.sigma


def contraction_check(phi: ValueSurface, xi: ValueSurface, model: MarketModel, ou: OuParams,
                      cfg: McConfig, const: DerivedConstants) -> ContractionCheck:
    """Compare d(L phi, L xi) at the probes with the contraction bound.

    Both operators see the same paths, so sigma is the paired standard error.
    """
    params = MetricParams.from_constants(const)
    a = apply_operator(phi, model, ou, cfg, keep_samples=True)
    b = apply_operator(xi, model, ou, cfg, keep_samples=True)
    w = params.weight(a.t, a.y, model.T)
    diff = np.array([(x - z).mean() for x, z in zip(a.samples, b.samples)])
    se = np.array([(x - z).std(ddof=1) / math.sqrt(x.size) for x, z in zip(a.samples, b.samples)])
    return ContractionCheck(metric_distance(phi, xi, params), float(np.max(w * np.abs(diff))),
                            float(np.max(w * se)), const.contraction_modulus)


def random_band_surface(t_nodes, y_nodes, model: MarketModel, const: DerivedConstants,
                        rng: np.random.Generator) -> ValueSurface:
    """Random element of the band 1 <= f <= envelope on a lattice."""
    t_nodes, y_nodes = np.asarray(t_nodes, float), np.asarray(y_nodes, float)
    env = envelope_upper(const, model.gamma, t_nodes[:, None], y_nodes[None, :], model.T)
    u = rng.uniform(size=env.shape)
    return ValueSurface(t_nodes, y_nodes, 1 + u * (env - 1), const.b_prime)


def merton_closed_form(q: float, gamma: float, T: float, t):
    """Solution of f' + gamma q f + (1-gamma) f^{-gamma/(1-gamma)} = 0, f(T) = 1.

    With u = f^{1/(1-gamma)} the equation is linear, u' + k u + 1 = 0 with
    k = gamma q/(1-gamma), so u(t) = (1 + 1/k) e^{k(T-t)} - 1/k, or 1 + T - t
    when q = 0.
    """
    tau = T - np.asarray(t, dtype=float)
    k = gamma * q / (1 - gamma)
    x = k * tau
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(x) > 1e-12, np.expm1(x) / np.where(x == 0, 1, x), 1 + x / 2)
    u = np.exp(x) + tau * ratio
    out = u ** (1 - gamma)
    return float(out) if out.ndim == 0 else out


# --- pathwise certainty equivalent --------------------------------------------------

def fbar(path: FactorPath, model: MarketModel, t: float | None = None,
         substep: float | None = None) -> float:
    """Deterministic-ODE value along one realised path, started at ``t``.

    Integrates u' + k(s) u + 1 = 0, u(T) = 1, k = gamma Q(Y(s))/(1-gamma)
    exactly: u(t) = e^{K(T)} + int_t^T e^{K(s)} ds with K(s) = int_t^s k.
    """
    g = model.gamma
    t = path.start if t is None else t
    T = model.T
    if path.end < T:
        raise ValueError("path must cover [t, T]")
    substep = substep or (T - t) / 128
    rate = g / (1 - g)
    lam = path.reversion
    K_acc, integral = 0.0, 0.0
    for left, right, y0 in path.pieces(t, T):
        width = right - left
        if width <= 0:
            continue
        m = max(2, math.ceil(width / substep))
        m += m % 2
        u = np.linspace(left, right, m + 1)
        qv = q_value(model, y0 * np.exp(-lam * (u - left)))
        h = width / m
        cum = K_acc + rate * cumulative_simpson(qv, dx=h, initial=0.0)
        integral += float(np.exp(cum) @ _simpson_weights(m)) * h
        K_acc = float(cum[-1])
    return float((math.exp(K_acc) + integral) ** (1 - g))


def fbar_samples(model: MarketModel, ou: OuParams, t: float, y: float, n: int,
                 rng: np.random.Generator, substep: float | None = None) -> np.ndarray:
    """Vectorised :func:`fbar` over ``n`` fresh paths from (t, y)."""
    g = model.gamma
    rate = g / (1 - g)
    I_T, (run,) = path_functionals(model, ou, t, y, n, rng, substep, [(rate, None)])
    return (np.exp(rate * I_T) + run) ** (1 - g)


def _centered_mean(x: np.ndarray) -> float:
    # exact when every sample is identical
    return float(x[0] + np.mean(x - x[0]))


@dataclass
class JensenReport:
    t: float
    y: float
    mean_fbar: float
    se_fbar: float
    operator_of_mean: float   # L applied to the lattice surface of E[fbar]
    se_operator: float
    direct_gap: float         # mean_fbar - operator_of_mean, paired
    direct_se: float
    gap: float                # conditional-Jensen estimate of the same gap
    gap_se: float
    n_paths: int


def pathwise_certainty(model: MarketModel, ou: OuParams, t: float, y: float, cfg: McConfig,
                       s_nodes=None, y_nodes=None, n_inner: int = 20_000,
                       n_batches: int = 5) -> JensenReport:
    """Gap between E[fbar] and L applied to E[fbar] at (t, y).

    Two estimates are returned.  The direct one differences the two Monte
    Carlo means.  The second uses the tower property: the gap equals

        (1-gamma) E[ int_t^T e^{gamma I(s)} Jg(s, Y(s)) ds ],
        Jg(s, y) = E^{s,y}[fbar^{-p}] - (E^{s,y}[fbar])^{-p} >= 0,

    with Jg tabulated on the (s_nodes x y_nodes) lattice from ``n_inner``
    paths per node.  Its standard error combines the outer path noise with the
    spread over ``n_batches`` independent sub-batches of the inner paths.
    """
    g = model.gamma
    p = g / (1 - g)
    T = model.T
    if s_nodes is None:
        s_nodes = np.linspace(t, T, 5)
    if y_nodes is None:
        y_nodes = np.linspace(0.05, 1.0, 8)
    s_nodes, y_nodes = np.asarray(s_nodes, float), np.asarray(y_nodes, float)
    ns, ny = s_nodes.size, y_nodes.size
    n_inner -= n_inner % n_batches
    F = np.ones((ns, ny))
    J = np.zeros((n_batches + 1, ns, ny))
    node = 0
    for i, s in enumerate(s_nodes):
        for j, yy in enumerate(y_nodes):
            node += 1
            if s >= T:
                continue
            x = fbar_samples(model, ou, s, yy, n_inner, stream(cfg.seed + 1, node), cfg.substep)
            m = _centered_mean(x)
            F[i, j] = m
            J[0, i, j] = _centered_mean(x ** (-p)) - m ** (-p)
            for b, part in enumerate(np.split(x, n_batches), start=1):
                mb = _centered_mean(part)
                J[b, i, j] = _centered_mean(part ** (-p)) - mb ** (-p)
    b_prime = g * max(model.growth.B, 1e-3) / ou.reversion
    F_surf = ValueSurface(s_nodes, y_nodes, F, b_prime)
    J_surfs = [ValueSurface(s_nodes, y_nodes, J[b]) for b in range(n_batches + 1)]

    def jensen_running(s, ys):
        return np.stack([js(s, ys) for js in J_surfs])

    rate_bar = g / (1 - g)
    I_T, (fb_run, op_run, gap_run) = path_functionals(
        model, ou, t, y, cfg.n_paths, stream(cfg.seed, 0), cfg.substep,
        [(rate_bar, None), (g, lambda s, ys: F_surf(s, ys) ** (-p)), (g, jensen_running)])
    fb = (np.exp(rate_bar * I_T) + fb_run) ** (1 - g)
    op = np.exp(g * I_T) + (1 - g) * op_run
    gaps = (1 - g) * gap_run  # (B+1, n)
    n = cfg.n_paths
    se = lambda v: float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    batch = gaps[1:].mean(axis=1)
    gap_se = math.sqrt(se(gaps[0]) ** 2 + float(batch.std(ddof=1)) ** 2 / n_batches)
    return JensenReport(t, y, float(fb.mean()), se(fb), float(op.mean()), se(op),
                        float((fb - op).mean()), se(fb - op), float(gaps[0].mean()), gap_se, n)
