"""Subordinators: Levy measure, Laplace exponent, integrability gate, jump sampling.

Only finite-activity families are supported.  A compound Poisson subordinator
with intensity ``c`` and Exponential(``eta``) jump sizes has Levy measure
``nu(dz) = c * eta * exp(-eta * z) dz`` on ``z > 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .market import MarketModel


class Family(str, Enum):
    COMPOUND_POISSON_EXP = "compound_poisson_exp"
    NULL = "null"


@dataclass(frozen=True)
class SubordinatorSpec:
    """Levy measure of a finite-activity subordinator.

    Parameters
    ----------
    family : Family
    intensity : float
        Jump rate ``c`` per unit of the subordinator's own clock.
    jump_rate : float
        ``eta``; jump sizes are Exponential with mean ``1/eta``.
    """

    family: Family = Family.NULL
    intensity: float = 0.0
    jump_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.COMPOUND_POISSON_EXP:
            if not self.intensity >= 0:
                raise ValueError(f"intensity must be >= 0, got {self.intensity}")
            if not self.jump_rate > 0:
                raise ValueError(f"jump_rate must be > 0, got {self.jump_rate}")

    @classmethod
    def compound_poisson(cls, intensity: float, jump_rate: float) -> "SubordinatorSpec":
        return cls(Family.COMPOUND_POISSON_EXP, float(intensity), float(jump_rate))

    @classmethod
    def null(cls) -> "SubordinatorSpec":
        return cls(Family.NULL, 0.0, 1.0)

    @property
    def is_null(self) -> bool:
        return self.family is Family.NULL or self.intensity == 0.0

    @property
    def total_mass(self) -> float:
        """nu((0, inf))."""
        return 0.0 if self.is_null else self.intensity

    @property
    def mean_jump(self) -> float:
        return 0.0 if self.is_null else 1.0 / self.jump_rate

    @property
    def abscissa(self) -> float:
        """Supremum of ``w`` with finite Laplace exponent."""
        return math.inf if self.is_null else self.jump_rate

    def density(self, z):
        """Levy density ``nu(dz)/dz``."""
        z = np.asarray(z, dtype=float)
        if self.is_null:
            return np.zeros_like(z)
        return np.where(z > 0, self.intensity * self.jump_rate * np.exp(-self.jump_rate * z), 0.0)

    def second_moment(self) -> float:
        """int z^2 nu(dz); finite for every supported family."""
        return 0.0 if self.is_null else 2.0 * self.intensity / self.jump_rate**2


@dataclass(frozen=True)
class JumpEvent:
    time: float
    size: float


def laplace_exponent(spec: SubordinatorSpec, w: float) -> float:
    """psi(w) = int (e^{wz} - 1) nu(dz); returns ``math.inf`` past the abscissa."""
    if spec.is_null:
        return 0.0
    c, eta = spec.intensity, spec.jump_rate
    if w >= eta:
        return math.inf
    return c * w / (eta - w)


def laplace_exponent_quad(spec: SubordinatorSpec, w: float) -> float:
    """Same quantity by adaptive quadrature of the Levy integral (cross-check)."""
    from scipy.integrate import quad

    if spec.is_null:
        return 0.0
    if w >= spec.jump_rate:
        return math.inf
    c, eta = spec.intensity, spec.jump_rate

    def integrand(z):
        # expm1 keeps relative accuracy for small w*z; the merged exponent avoids overflow
        if w * z < 700:
            return c * eta * math.expm1(w * z) * math.exp(-eta * z)
        return c * eta * math.exp((w - eta) * z)

    val, _ = quad(integrand, 0.0, math.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return val


@dataclass(frozen=True)
class ConditionB:
    passed: bool
    threshold: float
    psi: float
    epsilon: float
    margin: float  # abscissa of convergence minus threshold


def check_condition_b(spec: SubordinatorSpec, model: "MarketModel", reversion: float,
                      epsilon: float = 0.1, b_floor: float = 1e-3) -> ConditionB:
    """Integrability gate psi(2(1 + gamma/2)(B' v B'_sigma) + eps) < inf.

    ``B' = gamma*B/lambda`` and ``B'_sigma = gamma*B_sigma/lambda`` come from the
    growth constants carried by ``model``; ``B = 0`` is replaced by ``b_floor``.
    """
    g = model.gamma
    b = model.growth.B if model.growth.B > 0 else b_floor
    b_prime = g * b / reversion
    b_sigma = g * model.growth.B_sigma / reversion
    w = 2.0 * (1.0 + g / 2.0) * max(b_prime, b_sigma) + epsilon
    psi = laplace_exponent(spec, w)
    return ConditionB(passed=math.isfinite(psi), threshold=w, psi=psi, epsilon=epsilon,
                      margin=spec.abscissa - w)


def stream(master_seed: int, k: int) -> np.random.Generator:
    """Independent generator number ``k`` derived from a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(k)]))


def sample_jumps(spec: SubordinatorSpec, a: float, b: float, clock_scale: float,
                 rng: np.random.Generator) -> list[JumpEvent]:
    """Jumps of ``u -> L(clock_scale * u)`` on ``(a, b]``.

    Count ~ Poisson(c * clock_scale * (b - a)); given the count, times are
    i.i.d. uniform on the interval and sizes i.i.d. Exponential(eta).
    """
    times, sizes = sample_jump_matrix(spec, a, b, clock_scale, 1, rng)
    n = int(np.isfinite(times[0]).sum())
    return [JumpEvent(float(times[0, i]), float(sizes[0, i])) for i in range(n)]


def sample_jump_matrix(spec: SubordinatorSpec, a: float, b: float, clock_scale: float,
                       n_paths: int, rng: np.random.Generator):
    """Vectorised :func:`sample_jumps` for ``n_paths`` independent paths.

    Returns
    -------
    times : (n_paths, K) array, sorted per row, padded with ``inf``
    sizes : (n_paths, K) array, padded with 0
    """
    if b < a:
        raise ValueError(f"empty horizon: b={b} < a={a}")
    if clock_scale <= 0:
        raise ValueError("clock_scale must be positive")
    if spec.is_null or b == a:
        return np.full((n_paths, 0), np.inf), np.zeros((n_paths, 0))
    rate = spec.intensity * clock_scale * (b - a)
    counts = rng.poisson(rate, size=n_paths)
    k = int(counts.max()) if n_paths else 0
    if k == 0:
        return np.full((n_paths, 0), np.inf), np.zeros((n_paths, 0))
    u = rng.uniform(size=(n_paths, k))
    z = rng.exponential(1.0 / spec.jump_rate, size=(n_paths, k))
    live = np.arange(k)[None, :] < counts[:, None]
    # (a, b]: flip the [0, 1) uniform so the left end is excluded
    times = np.where(live, b - (b - a) * u, np.inf)
    order = np.argsort(times, axis=1, kind="stable")
    times = np.take_along_axis(times, order, axis=1)
    sizes = np.take_along_axis(np.where(live, z, 0.0), order, axis=1)
    return times, sizes
