"""Explicit upwind finite-difference solver for the reduced HJB equation.

Solves, backward from f(T, y) = 1,

    0 = f_t - lam*y*f_y + lam * int (f(t, y+z) - f(t, y)) nu(dz)
        + gamma*Q(y)*f + (1-gamma) * f^{-gamma/(1-gamma)}

on a uniform (t, y) grid.  The solver state is the scaled unknown
g = f * exp(-kappa*y); far-field values come from exponential extrapolation
with rate B'.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .factor import OuParams
from .market import (DerivedConstants, MarketModel, derive_constants, envelope_upper,
                     phi_bound, q_value)


class CFLViolation(ValueError):
    pass


class EnvelopeBreach(UserWarning):
    pass


@dataclass(frozen=True)
class SolverGrid:
    T: float = 1.0
    M: int = 2000
    J: int = 200
    y_max: float = 2.0
    kappa: float | None = None  # None -> B'' + 1
    quad_nodes: int = 32

    def __post_init__(self):
        if self.M < 1 or self.J < 3:
            raise ValueError("grid needs M >= 1 and J >= 3")
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def dy(self) -> float:
        return self.y_max / self.J

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)

    @property
    def y_nodes(self) -> np.ndarray:
        return self.dy * np.arange(1, self.J + 1)


@dataclass
class SolveReport:
    cfl: float
    kappa: float
    reaction: str
    breaches: list = field(default_factory=list)
    n_breaches: int = 0
    seconds: float = 0.0


@dataclass(frozen=True)
class ValueSurface:
    """Grid function on a uniform (t, y) lattice.

    Evaluation is bilinear inside the lattice, flat below the first y node and
    exponential with rate ``tail_rate`` beyond the last one.
    """

    t_nodes: np.ndarray
    y_nodes: np.ndarray
    values: np.ndarray
    tail_rate: float = 0.0
    report: SolveReport | None = field(default=None, compare=False)

    def __post_init__(self):
        t = np.asarray(self.t_nodes, dtype=float)
        y = np.asarray(self.y_nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (t.size, y.size) or t.size < 2 or y.size < 2:
            raise ValueError(f"values shape {v.shape} does not match lattice ({t.size}, {y.size})")
        for name, a in (("t", t), ("y", y)):
            d = np.diff(a)
            if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
                raise ValueError(f"{name} nodes must be uniform and increasing")
        object.__setattr__(self, "t_nodes", t)
        object.__setattr__(self, "y_nodes", y)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> float:
        return float(self.t_nodes[-1])

    @property
    def y_max(self) -> float:
        return float(self.y_nodes[-1])

    def same_grid(self, other: "ValueSurface") -> bool:
        return (self.values.shape == other.values.shape
                and np.array_equal(self.t_nodes, other.t_nodes)
                and np.array_equal(self.y_nodes, other.y_nodes))

    def with_values(self, values) -> "ValueSurface":
        return ValueSurface(self.t_nodes, self.y_nodes, np.asarray(values, dtype=float),
                            self.tail_rate)

    def __call__(self, t, y):
        t, y = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
        tn, yn, v = self.t_nodes, self.y_nodes, self.values
        dt, dy = tn[1] - tn[0], yn[1] - yn[0]
        ft = np.clip((t - tn[0]) / dt, 0, tn.size - 1)
        i = np.minimum(ft.astype(np.intp), tn.size - 2)
        wt = ft - i
        yc = np.clip(y, yn[0], yn[-1])
        fy = (yc - yn[0]) / dy
        j = np.minimum(fy.astype(np.intp), yn.size - 2)
        wy = fy - j
        lo = v[i, j] + wy * (v[i, j + 1] - v[i, j])
        hi = v[i + 1, j] + wy * (v[i + 1, j + 1] - v[i + 1, j])
        out = lo + wt * (hi - lo)
        if self.tail_rate:
            out = out * np.exp(self.tail_rate * np.maximum(y - yn[-1], 0.0))
        return out if out.ndim else float(out)


def cfl_number(model: MarketModel, ou: OuParams, grid: SolverGrid) -> float:
    """dt * (lam*y_max/dy + lam*c + gamma*max Q + 1); the scheme needs <= 0.9."""
    lam = ou.reversion
    qmax = float(np.max(q_value(model, grid.y_nodes)))
    return grid.dt * (lam * grid.y_max / grid.dy + lam * ou.spec.total_mass
                      + model.gamma * qmax + 1.0)


def jump_matrix(ou: OuParams, grid: SolverGrid, tail_rate: float) -> np.ndarray:
    """Matrix W with (W f)_j ~ E[f(y_j + Z)], Z ~ Exp(eta).

    Gauss-Legendre on [0, 12/eta] against the exponential density, linear
    interpolation between nodes, exponential extrapolation past y_max, and an
    analytic tail beyond the cut anchored at f(y_j + z_cut).
    """
    J, y = grid.J, grid.y_nodes
    W = np.zeros((J, J))
    if ou.spec.is_null:
        return W
    eta = ou.spec.jump_rate
    if not eta > tail_rate:
        raise ValueError("jump rate must exceed the extrapolation rate B'")
    z_cut = 12.0 / eta
    x, w = np.polynomial.legendre.leggauss(grid.quad_nodes)
    z = 0.5 * z_cut * (x + 1)
    wz = 0.5 * z_cut * w * eta * np.exp(-eta * z)
    tail = eta * math.exp(-eta * z_cut) / (eta - tail_rate)
    pts = np.concatenate([y[:, None] + z[None, :], (y + z_cut)[:, None]], axis=1)
    wts = np.concatenate([np.broadcast_to(wz, (J, z.size)), np.full((J, 1), tail)], axis=1)
    rows = np.broadcast_to(np.arange(J)[:, None], pts.shape)
    inside = pts <= grid.y_max
    # linear interpolation
    f = (pts - y[0]) / grid.dy
    k = np.clip(np.floor(f).astype(int), 0, J - 2)
    a = f - k
    np.add.at(W, (rows[inside], k[inside]), (wts * (1 - a))[inside])
    np.add.at(W, (rows[inside], k[inside] + 1), (wts * a)[inside])
    # extrapolation beyond y_max
    out = ~inside
    np.add.at(W, (rows[out], np.full(out.sum(), J - 1)),
              (wts * np.exp(tail_rate * (pts - grid.y_max)))[out])
    return W



def backward_stepper(model: MarketModel, ou: OuParams, grid: SolverGrid,
                     const: DerivedConstants, reaction: str = "exact"):
    """Return the map f(t, .) -> f(t - dt, .) used by :func:`solve`."""
    g_, lam, dt, dy = model.gamma, ou.reversion, grid.dt, grid.dy
    y = grid.y_nodes
    q = q_value(model, y)
    W = jump_matrix(ou, grid, const.b_prime)
    jump_rate = lam * ou.spec.total_mass
    nu = lam * y * dt / dy
    p = g_ / (1 - g_)
    k = g_ * q / (1 - g_)
    grow = np.exp(k * dt)
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = np.where(k > 0, np.expm1(k * dt) / np.where(k > 0, k, 1.0), dt)

    def step(f):
        lower = np.concatenate(([f[0]], f[:-1]))  # ghost node copies y_1
        change = -nu * (f - lower)
        if jump_rate:
            change = change + dt * jump_rate * (W @ f - f)
        if reaction == "euler":
            return f + change + dt * (g_ * q * f + (1 - g_) * f ** (-p))
        u = (f + change) ** (1 / (1 - g_))
        return (u * grow + inc) ** (1 - g_)

    return step


def solve(model: MarketModel, ou: OuParams, grid: SolverGrid,
          const: DerivedConstants | None = None, reaction: str = "exact",
          check_bounds: bool = True) -> ValueSurface:
    """March the reduced HJB equation backward from T.

    Parameters
    ----------
    reaction : {"exact", "euler"}
        ``"euler"`` advances every term with one forward Euler step.
        ``"exact"`` advances transport and jumps with the same Euler step and
        then integrates the reaction f' = -(gamma Q f + (1-gamma) f^{-p})
        exactly through u = f^{1/(1-gamma)}, for which it is linear.
    """
    if reaction not in ("exact", "euler"):
        raise ValueError(f"unknown reaction mode {reaction!r}")
    if abs(grid.T - model.T) > 1e-12:
        raise ValueError(f"grid horizon {grid.T} differs from model horizon {model.T}")
    started = time.perf_counter()
    const = const or derive_constants(model, ou)
    kappa = const.b_dprime + 1.0 if grid.kappa is None else grid.kappa
    if not kappa > const.b_dprime:
        raise ValueError(f"kappa={kappa} must exceed B''={const.b_dprime:.6g}")
    cfl = cfl_number(model, ou, grid)
    if cfl > 0.9:
        raise CFLViolation(f"CFL violated: {cfl:.4g} > 0.9 (reduce dt or enlarge dy)")

    step = backward_stepper(model, ou, grid, const, reaction)
    y = grid.y_nodes
    scale = np.exp(kappa * y)
    out = np.empty((grid.M + 1, grid.J))
    out[-1] = 1.0
    g = out[-1] / scale
    for i in range(grid.M, 0, -1):
        g = step(g * scale) / scale
        out[i - 1] = g * scale

    report = SolveReport(cfl=cfl, kappa=kappa, reaction=reaction)
    surface = ValueSurface(grid.t_nodes, y, out, const.b_prime, report)
    if check_bounds:
        breaches = envelope_breaches(surface, model, const)
        report.n_breaches = len(breaches)
        report.breaches = breaches[:20]
        if breaches:
            i, j = breaches[0]
            warnings.warn(f"envelope breach at node ({i}, {j}); {len(breaches)} in total",
                          EnvelopeBreach, stacklevel=2)
    report.seconds = time.perf_counter() - started
    return surface


def envelope_breaches(surface: ValueSurface, model: MarketModel, const: DerivedConstants,
                      rel_tol: float = 1e-8) -> list[tuple[int, int]]:
    """Nodes violating 1 <= f <= envelope beyond ``rel_tol * envelope``."""
    env = envelope_upper(const, model.gamma, surface.t_nodes[:, None], surface.y_nodes[None, :],
                         model.T)
    f = surface.values
    bad = (f < 1 - rel_tol * env) | (f > env * (1 + rel_tol)) | ~np.isfinite(f)
    return [tuple(map(int, ij)) for ij in np.argwhere(bad)]


def consumption_surface(surface: ValueSurface, gamma: float) -> np.ndarray:
    """c/x = f^{-1/(1-gamma)} at every node."""
    return surface.values ** (-1.0 / (1.0 - gamma))


@dataclass(frozen=True)
class DerivativeBoundReport:
    fraction_within: float      # interior nodes, two smallest-y columns excluded
    fraction_all: float         # every interior node
    worst_ratio: float          # max |f_y| / bound over the accepted nodes
    n_nodes: int


def derivative_bound_check(surface: ValueSurface, model: MarketModel, ou: OuParams,
                           const: DerivedConstants) -> DerivativeBoundReport:
    """Compare central differences of f in y against phi(t) e^{A''(T-t) + B''y}."""
    f, y, t = surface.values, surface.y_nodes, surface.t_nodes
    dy = y[1] - y[0]
    fy = (f[:, 2:] - f[:, :-2]) / (2 * dy)
    yi = y[1:-1]
    bound = (phi_bound(const, model.gamma, ou.reversion, t, model.T)[:, None]
             * np.exp(const.a_dprime * (model.T - t)[:, None] + const.b_dprime * yi[None, :]))
    ok = np.abs(fy) <= bound
    accepted = ok[:, 1:]  # drop the column at y_2 (y_1 has no central difference)
    ratio = np.abs(fy[:, 1:]) / bound[:, 1:]
    return DerivativeBoundReport(float(accepted.mean()), float(ok.mean()),
                                 float(ratio.max()), int(accepted.size))


def write_surface_csv(surface: ValueSurface, gamma: float, path) -> None:
    cons = consumption_surface(surface, gamma)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y", "f", "consumption_rate"])
        for i, t in enumerate(surface.t_nodes):
            for j, y in enumerate(surface.y_nodes):
                w.writerow([f"{t:.17g}", f"{y:.17g}", f"{surface.values[i, j]:.17g}",
                            f"{cons[i, j]:.17g}"])


def read_surface_csv(path, tail_rate: float = 0.0) -> ValueSurface:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    t = np.unique(data[:, 0])
    y = np.unique(data[:, 1])
    return ValueSurface(t, y, data[:, 2].reshape(t.size, y.size), tail_rate)
