"""Exact simulation of the subordinator-driven OU factor.

Between jumps the factor decays deterministically, so a path is fully
described by its start level and the list of jumps of ``L(lambda * .)``::

    Y(u) = y e^{-lam (u - t)} + sum_{tau_i <= u} z_i e^{-lam (u - tau_i)}

Every integral below is taken piecewise between jumps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.integrate import simpson

from .levy import JumpEvent, SubordinatorSpec, sample_jump_matrix


@dataclass(frozen=True)
class OuParams:
    reversion: float
    initial_level: float
    spec: SubordinatorSpec = field(default_factory=SubordinatorSpec.null)

    def __post_init__(self):
        if not self.reversion > 0:
            raise ValueError(f"reversion rate must be positive, got {self.reversion}")
        if not self.initial_level > 0:
            raise ValueError(f"initial level must be positive, got {self.initial_level}")


@dataclass(frozen=True)
class FactorPath:
    """One realised factor path on ``[start, end]``."""

    start: float
    end: float
    initial_level: float
    reversion: float
    jump_times: np.ndarray
    jump_sizes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float).ravel()
        sizes = np.asarray(self.jump_sizes, dtype=float).ravel()
        if times.shape != sizes.shape:
            raise ValueError("jump_times and jump_sizes differ in length")
        if np.any(sizes <= 0):
            raise ValueError("jump sizes must be positive")
        if np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if times.size and (times[0] <= self.start or times[-1] > self.end):
            raise ValueError("jump times must lie in (start, end]")
        times.flags.writeable = False
        sizes.flags.writeable = False
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "jump_sizes", sizes)

    @property
    def jumps(self) -> list[JumpEvent]:
        return [JumpEvent(float(t), float(z)) for t, z in zip(self.jump_times, self.jump_sizes)]

    def __call__(self, u, left: bool = False):
        """Y(u), or the left limit Y(u-) when ``left`` is set."""
        u = np.asarray(u, dtype=float)
        lam = self.reversion
        out = self.initial_level * np.exp(-lam * (u - self.start))
        for tau, z in zip(self.jump_times, self.jump_sizes):
            hit = (u > tau) if left else (u >= tau)
            out = out + np.where(hit, z * np.exp(-lam * (u - tau)), 0.0)
        return out

    def jump_mass(self, a: float, b: float) -> float:
        """L(lam b) - L(lam a): total jump size on (a, b]."""
        m = (self.jump_times > a) & (self.jump_times <= b)
        return float(self.jump_sizes[m].sum())

    def pieces(self, a: float, b: float):
        """Inter-jump pieces of ``[a, b]`` as (left, right, Y(left)) triples."""
        self._check_window(a, b)
        inside = self.jump_times[(self.jump_times > a) & (self.jump_times < b)]
        cuts = np.concatenate(([a], inside, [b]))
        levels = self(cuts[:-1])
        return list(zip(cuts[:-1], cuts[1:], levels))

    def _check_window(self, a, b):
        if not (self.start <= a <= b <= self.end):
            raise ValueError(f"[{a}, {b}] is outside the path window [{self.start}, {self.end}]")

    def to_csv(self, path, grid: Iterable[float]) -> None:
        grid = np.asarray(list(grid), dtype=float)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "Y"])
            for u, y in zip(grid, self(grid)):
                w.writerow([repr(float(u)), repr(float(y))])

    def jumps_to_csv(self, path) -> None:
        write_jump_csv(path, self.jump_times, self.jump_sizes)


def write_jump_csv(path, times, sizes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "z"])
        for t, z in zip(times, sizes):
            w.writerow([repr(float(t)), repr(float(z))])


def read_jump_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"tau", "z"}:
        raise ValueError(f"{path}: expected columns tau,z")
    times = np.array([float(r["tau"]) for r in rows])
    sizes = np.array([float(r["z"]) for r in rows])
    order = np.argsort(times)
    return times[order], sizes[order]


def evolve(params: OuParams, t: float, s: float, rng: np.random.Generator) -> FactorPath:
    """Sample a factor path on ``[t, s]`` started at ``params.initial_level``."""
    if s < t:
        raise ValueError(f"end time {s} precedes start time {t}")
    times, sizes = sample_jump_matrix(params.spec, t, s, params.reversion, 1, rng)
    live = np.isfinite(times[0])
    return FactorPath(t, s, params.initial_level, params.reversion, times[0, live], sizes[0, live])


def path_from_jumps(params: OuParams, t: float, s: float, times, sizes) -> FactorPath:
    """Build a path from an explicit jump list, bypassing the random stream."""
    return FactorPath(t, s, params.initial_level, params.reversion,
                      np.asarray(times, dtype=float), np.asarray(sizes, dtype=float))


def integrated_level(path: FactorPath, a: float, b: float) -> float:
    """Closed-form ``int_a^b Y(u) du``."""
    lam = path.reversion
    total = 0.0
    for left, right, y0 in path.pieces(a, b):
        total += y0 * -np.expm1(-lam * (right - left)) / lam
    return float(total)


def integrated_q(path: FactorPath, q: Callable, a: float, b: float,
                 substep: float | None = None) -> float:
    """``int_a^b q(Y(u)) du`` by composite Simpson on each inter-jump piece.

    ``q`` is a vectorised function of the factor level, e.g.
    ``lambda y: market.q_value(model, y)``.  Default per-piece step is
    ``(b - a)/64``.
    """
    if substep is None:
        substep = (b - a) / 64 if b > a else 1.0
    if substep <= 0:
        raise ValueError("substep must be positive")
    lam = path.reversion
    total = 0.0
    for left, right, y0 in path.pieces(a, b):
        width = right - left
        if width <= 0:
            continue
        n = max(2, int(np.ceil(width / substep)))
        n += n % 2
        u = np.linspace(left, right, n + 1)
        total += simpson(q(y0 * np.exp(-lam * (u - left))), x=u)
    return float(total)
