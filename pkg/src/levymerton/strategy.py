"""Optimal strategies and exact wealth simulation.

Wealth follows the exponential representation

    log X(t) = log x + int_0^t [pi(mu - r) + r - c/X - pi^2 sigma^2 / 2] ds + int_0^t pi sigma dW,

so X stays positive whatever the step size.  Strategies are feedback rules
of (t, Y(t-)): a consumption rate ``c/X`` and a stock fraction ``pi``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .factor import OuParams
from .levy import sample_jump_matrix
from .market import Affine, GrowthConstants, MarketModel, log_fraction, optimal_fraction, q_value
from .oracle import merton_closed_form
from .pide import ValueSurface


@dataclass(frozen=True)
class Policy:
    """Feedback rule: ``rate(t, y)`` is c/X, ``fraction(t, y)`` is pi."""

    name: str
    rate: Callable
    fraction: Callable


def power_policy(surface: ValueSurface, model: MarketModel) -> Policy:
    p = 1.0 / (1.0 - model.gamma)
    return Policy("optimal",
                  lambda t, y: surface(t, y) ** (-p),
                  lambda t, y: optimal_fraction(model, y))


def log_policy(model: MarketModel, horizon: float | None = None) -> Policy:
    T = model.T if horizon is None else horizon
    return Policy("log",
                  lambda t, y: np.broadcast_to(1.0 / (1.0 + T - np.asarray(t, float)),
                                               np.broadcast(t, y).shape),
                  lambda t, y: log_fraction(model, y))


def frozen_market(model: MarketModel, y0: float) -> MarketModel:
    """Same market with every coefficient held at its value at ``y0``."""
    r, mu, s2 = float(model.r(y0)), float(model.mu(y0)), float(model.sigma2(y0))
    growth = GrowthConstants(A_r=r, A_mu=mu, A_sigma=s2, A=max(r, mu))
    return MarketModel.from_affine(Affine(r), Affine(mu), Affine(s2), model.gamma, model.T,
                                   growth=growth, name=f"{model.name}-frozen")


def constant_vol_policy(model: MarketModel, y0: float) -> Policy:
    """Optimal rule of the frozen market: closed-form rate, constant fraction."""
    g, T = model.gamma, model.T
    q = q_value(model, y0)
    pi0 = optimal_fraction(model, y0)

    def rate(t, y):
        return np.broadcast_to(merton_closed_form(q, g, T, t) ** (-1 / (1 - g)),
                               np.broadcast(t, y).shape)

    return Policy("constant-vol", rate,
                  lambda t, y: np.full(np.broadcast(t, y).shape, pi0))


@dataclass(frozen=True)
class Noise:
    """Random inputs shared by every strategy in a paired comparison."""

    jump_times: np.ndarray  # (n_paths, K), padded with inf
    jump_sizes: np.ndarray
    dW: np.ndarray          # (n_paths, n_steps)
    horizon: float

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]


def draw_noise(ou: OuParams, horizon: float, n_steps: int, n_paths: int,
               rng: np.random.Generator, forced_jumps=None) -> Noise:
    """Jumps of the factor driver and Brownian increments.

    ``forced_jumps`` is a pair (times, sizes) applied to every path in place
    of sampled jumps.
    """
    if forced_jumps is None:
        times, sizes = sample_jump_matrix(ou.spec, 0.0, horizon, ou.reversion, n_paths, rng)
    else:
        ft, fz = (np.asarray(a, dtype=float).ravel() for a in forced_jumps)
        order = np.argsort(ft)
        times = np.tile(ft[order], (n_paths, 1))
        sizes = np.tile(fz[order], (n_paths, 1))
    dW = rng.standard_normal((n_paths, n_steps)) * math.sqrt(horizon / n_steps)
    return Noise(times, sizes, dW, horizon)


@dataclass(frozen=True)
class StrategyPath:
    """One simulated path on a uniform grid.

    ``Y_left`` is Y(t-) (the level the strategy reads); ``Y`` is Y(t).
    """

    t: np.ndarray
    Y: np.ndarray
    Y_left: np.ndarray
    X: np.ndarray
    c: np.ndarray
    pi: np.ndarray
    c_over_X: np.ndarray
    dW: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "Y", "X", "c", "pi", "c_over_X"])
            for row in zip(self.t, self.Y_left, self.X, self.c, self.pi, self.c_over_X):
                w.writerow([f"{float(v):.17g}" for v in row])


@dataclass(frozen=True)
class StrategyBatch:
    """Many paths on a shared grid; arrays are (n_paths, n_steps + 1)."""

    t: np.ndarray
    Y: np.ndarray
    Y_left: np.ndarray
    X: np.ndarray
    pi: np.ndarray
    c_over_X: np.ndarray
    noise: Noise

    @property
    def c(self) -> np.ndarray:
        return self.c_over_X * self.X

    def path(self, i: int) -> StrategyPath:
        live = np.isfinite(self.noise.jump_times[i])
        return StrategyPath(self.t, self.Y[i], self.Y_left[i], self.X[i], self.c[i], self.pi[i],
                            self.c_over_X[i], self.noise.dW[i],
                            self.noise.jump_times[i, live], self.noise.jump_sizes[i, live])


def factor_on_grid(ou: OuParams, t: np.ndarray, times: np.ndarray, sizes: np.ndarray):
    """Y(t_k) and Y(t_k-) for every path; jumps at a node count from that node on."""
    lam = ou.reversion
    Y = np.broadcast_to(ou.initial_level * np.exp(-lam * t), (times.shape[0], t.size)).copy()
    Y_left = Y.copy()
    for k in range(times.shape[1]):
        tau, z = times[:, k:k + 1], sizes[:, k:k + 1]
        with np.errstate(over="ignore", invalid="ignore"):
            bump = z * np.exp(-lam * (t[None, :] - tau))
        Y += np.where(t[None, :] >= tau, bump, 0.0)
        Y_left += np.where(t[None, :] > tau, bump, 0.0)
    return Y, Y_left


def _drift(model: MarketModel, policy: Policy, s, y):
    pi = policy.fraction(s, y)
    r, mu, v = model.r(y), model.mu(y), model.sigma2(y)
    return pi * (mu - r) + r - policy.rate(s, y) - 0.5 * pi**2 * v


def _step_integrals(model, policy, ou, t, Y, noise):
    """int_{t_k}^{t_{k+1}} drift(s, Y(s)) ds for every path and step."""
    lam = ou.reversion
    h = t[1] - t[0]
    mid = np.exp(-lam * h / 2)
    end = np.exp(-lam * h)
    y0 = Y[:, :-1]
    s0 = np.broadcast_to(t[:-1], y0.shape)
    out = (h / 6) * (_drift(model, policy, s0, y0)
                     + 4 * _drift(model, policy, s0 + h / 2, y0 * mid)
                     + _drift(model, policy, s0 + h, y0 * end))
    # steps with a jump strictly inside are redone piece by piece
    times = noise.jump_times
    for i, j in zip(*np.nonzero(np.isfinite(times))):
        tau = times[i, j]
        k = min(int(tau / h), t.size - 2)
        if not (t[k] < tau < t[k + 1]):
            continue
        inside = times[i][(times[i] > t[k]) & (times[i] < t[k + 1])]
        if tau != inside[0]:
            continue  # step already handled by its first jump
        cuts = np.concatenate(([t[k]], inside, [t[k + 1]]))
        level, total = Y[i, k], 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            u = np.linspace(a, b, 5)
            ys = level * np.exp(-lam * (u - a))
            total += simpson(_drift(model, policy, u, ys), x=u)
            level = ys[-1] + noise.jump_sizes[i][times[i] == b].sum()
        out[i, k] = total
    return out


def simulate_batch(policy: Policy, model: MarketModel, ou: OuParams, noise: Noise,
                   x0: float = 1.0, y_limit: float | None = None) -> StrategyBatch:
    """Apply ``policy`` to every path of ``noise``.

    Raises ``ValueError`` when the factor exceeds ``y_limit``.
    """
    n = noise.n_steps
    t = np.linspace(0.0, noise.horizon, n + 1)
    Y, Y_left = factor_on_grid(ou, t, noise.jump_times, noise.jump_sizes)
    if y_limit is not None and np.max(Y) > y_limit:
        raise ValueError(f"surface range exceeded beyond extrapolation budget: "
                         f"Y reached {np.max(Y):.4g} > {y_limit:.4g}")
    drift = _step_integrals(model, policy, ou, t, Y, noise)
    # Ito left point: the integrand on (t_k, t_k+1] reads Y(t_k)
    pi_start = policy.fraction(t[None, :-1], Y[:, :-1])
    sigma = np.sqrt(model.sigma2(Y[:, :-1]))
    incr = drift + pi_start * sigma * noise.dW
    logX = math.log(x0) + np.concatenate((np.zeros((noise.n_paths, 1)),
                                          np.cumsum(incr, axis=1)), axis=1)
    tt = np.broadcast_to(t, Y.shape)
    pi = np.broadcast_to(policy.fraction(tt, Y_left), Y.shape)
    rate = np.broadcast_to(policy.rate(tt, Y_left), Y.shape)
    return StrategyBatch(t, Y, Y_left, np.exp(logX), np.array(pi, dtype=float),
                         np.array(rate, dtype=float), noise)


def simulate_power(surface: ValueSurface, model: MarketModel, ou: OuParams, horizon: float,
                   n_steps: int, rng: np.random.Generator, forced_jumps=None,
                   x0: float = 1.0) -> StrategyPath:
    noise = draw_noise(ou, horizon, n_steps, 1, rng, forced_jumps)
    return simulate_batch(power_policy(surface, model), model, ou, noise, x0,
                          2 * surface.y_max).path(0)


def simulate_log(model: MarketModel, ou: OuParams, horizon: float, n_steps: int,
                 rng: np.random.Generator, forced_jumps=None, x0: float = 1.0) -> StrategyPath:
    # log-optimality needs a finite second moment of the jump measure
    if not np.isfinite(ou.spec.second_moment()):
        raise ValueError("jump measure has no finite second moment; log rule not justified")
    noise = draw_noise(ou, horizon, n_steps, 1, rng, forced_jumps)
    return simulate_batch(log_policy(model, horizon), model, ou, noise, x0).path(0)


def utility_score(path, gamma: float):
    """int_0^T c^gamma ds + X(T)^gamma by Simpson on the path grid (per path)."""
    c = path.c
    return simpson(c**gamma, x=path.t, axis=-1) + path.X[..., -1] ** gamma


# --- optimality probe ---------------------------------------------------------------

def perturbations(surface: ValueSurface, model: MarketModel, ou: OuParams) -> list[Policy]:
    """The eight alternatives the optimal rule is compared against."""
    base = power_policy(surface, model)
    y0 = ou.initial_level

    def scaled(k):
        return Policy(f"c x{k}", lambda t, y: k * base.rate(t, y), base.fraction)

    def shifted(d):
        return Policy(f"pi {-d:+}", base.rate,
                      lambda t, y: np.clip(base.fraction(t, y) - d, 0.0, 1.0))

    r0 = float(base.rate(0.0, y0))
    flat = Policy("constant c/X", lambda t, y: np.full(np.broadcast(t, y).shape, r0),
                  base.fraction)
    frozen = constant_vol_policy(model, y0)
    log_rule = Policy("c/X = 1/(1+T-t)", log_policy(model).rate, base.fraction)
    return [scaled(0.8), scaled(1.25), scaled(1.1), shifted(0.2), shifted(0.1), flat,
            frozen, log_rule]


@dataclass
class Comparison:
    name: str
    mean_diff: float  # optimal minus alternative
    std_error: float

    @property
    def passed(self) -> bool:
        return self.mean_diff >= -3 * self.std_error


def optimality_probe(surface: ValueSurface, model: MarketModel, ou: OuParams, n_paths: int,
                     n_steps: int, rng: np.random.Generator) -> list[Comparison]:
    """Paired comparison of realised utility under common random numbers."""
    limit = 2 * surface.y_max
    policies = [power_policy(surface, model)] + perturbations(surface, model, ou)
    scores = [[] for _ in policies]
    chunk = 2000
    for lo in range(0, n_paths, chunk):
        noise = draw_noise(ou, model.T, n_steps, min(chunk, n_paths - lo), rng)
        for acc, pol in zip(scores, policies):
            acc.append(utility_score(simulate_batch(pol, model, ou, noise, y_limit=limit),
                                     model.gamma))
    best = np.concatenate(scores[0])
    out = []
    for pol, acc in zip(policies[1:], scores[1:]):
        d = best - np.concatenate(acc)
        out.append(Comparison(pol.name, float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))))
    return out
