"""Market coefficients, the reduced Hamiltonian Q, optimal fraction and growth constants.

The coefficient functions ``r``, ``mu`` and ``sigma2`` act on the factor level
``y > 0`` and must be vectorised.  Growth constants are supplied by the user
and checked by sampling (:func:`validate`); they are never inferred silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .factor import OuParams
from .levy import check_condition_b, laplace_exponent


class ConditionBViolation(ValueError):
    """psi is infinite at a point required by the integrability gate."""


class GrowthViolation(ValueError):
    pass


class Regime(str, Enum):
    D1 = "D1"
    D2 = "D2"
    D3 = "D3"
    BOUNDARY12 = "Boundary12"
    BOUNDARY23 = "Boundary23"


_CODES = {0: Regime.D1, 1: Regime.D2, 2: Regime.D3, 3: Regime.BOUNDARY12, 4: Regime.BOUNDARY23}


@dataclass(frozen=True)
class Affine:
    """y -> a + b*y, with its derivative."""

    a: float
    b: float = 0.0

    def __call__(self, y):
        return self.a + self.b * np.asarray(y, dtype=float)

    def derivative(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.b)


@dataclass(frozen=True)
class GrowthConstants:
    A_r: float = 0.0
    B_r: float = 0.0
    A_mu: float = 0.0
    B_mu: float = 0.0
    A_sigma: float = 0.0
    B_sigma: float = 0.0
    A: float = 0.0  # Q(y) <= A + B y
    B: float = 0.0
    C: float = 0.0  # |Q'(y)| <= C + D y
    D: float = 0.0

    def __post_init__(self):
        for name, val in vars(self).items():
            if not val >= 0:
                raise ValueError(f"growth constant {name} must be nonnegative, got {val}")

    @classmethod
    def for_affine(cls, r: Affine, mu: Affine, sigma2: Affine, gamma: float) -> "GrowthConstants":
        """Valid (not necessarily tight) constants for affine coefficients.

        Q never exceeds max(r, mu), and on D2 the derivative is bounded by
        |mu'| + 2|r'| + (1-gamma)|sigma2'|/2.
        """
        pos = lambda v: max(v, 0.0)
        return cls(
            A_r=pos(r.a), B_r=pos(r.b), A_mu=pos(mu.a), B_mu=pos(mu.b),
            A_sigma=pos(sigma2.a), B_sigma=pos(sigma2.b),
            A=max(pos(r.a), pos(mu.a)), B=max(pos(r.b), pos(mu.b)),
            C=abs(mu.b) + 2 * abs(r.b) + 0.5 * (1 - gamma) * abs(sigma2.b), D=0.0,
        )


@dataclass(frozen=True)
class MarketModel:
    """Coefficient functions of the factor level plus preferences and horizon."""

    r: Callable
    dr: Callable
    mu: Callable
    dmu: Callable
    sigma2: Callable
    dsigma2: Callable
    gamma: float
    T: float
    growth: GrowthConstants = field(default_factory=GrowthConstants)
    name: str = "custom"
    affine: dict | None = None  # {"r": Affine, ...} when built from affine forms

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")

    @classmethod
    def from_affine(cls, r: Affine, mu: Affine, sigma2: Affine, gamma: float, T: float,
                    growth: GrowthConstants | None = None, name: str = "affine") -> "MarketModel":
        if growth is None:
            growth = GrowthConstants.for_affine(r, mu, sigma2, gamma)
        return cls(r, r.derivative, mu, mu.derivative, sigma2, sigma2.derivative,
                   gamma=gamma, T=T, growth=growth, name=name,
                   affine={"r": r, "mu": mu, "sigma2": sigma2})


@dataclass(frozen=True)
class DerivedConstants:
    gamma: float
    reversion: float
    b_prime: float
    a_prime: float
    b_dprime: float
    a_dprime: float
    b_sigma_prime: float
    a: float
    alpha: float

    @property
    def contraction_modulus(self) -> float:
        return self.gamma / (self.alpha - self.a_prime)


# --- presets ---------------------------------------------------------------

def bns_example() -> tuple[MarketModel, OuParams]:
    """Barndorff-Nielsen--Shephard example: r=0, mu=0.1+0.5y, sigma^2=y, gamma=0.75."""
    from .levy import SubordinatorSpec

    model = MarketModel.from_affine(
        Affine(0.0), Affine(0.1, 0.5), Affine(0.0, 1.0), gamma=0.75, T=1.0,
        growth=GrowthConstants(A_r=0, B_r=0, A_mu=0.1, B_mu=0.5, A_sigma=0, B_sigma=1,
                               A=0.1, B=0.375, C=0.375, D=0),
        name="bns-example")
    ou = OuParams(1 / 6, 0.2, SubordinatorSpec.compound_poisson(0.5, 15.0))
    return model, ou


def merton_constant() -> tuple[MarketModel, OuParams]:
    """Constant coefficients (Q = 0.04) with no jumps."""
    model = MarketModel.from_affine(
        Affine(0.0), Affine(0.1), Affine(0.25), gamma=0.5, T=1.0,
        growth=GrowthConstants(A_mu=0.1, A_sigma=0.25, A=0.04),
        name="merton-constant")
    return model, OuParams(1 / 6, 0.2)


PRESETS = {"bns-example": bns_example, "merton-constant": merton_constant}


# --- regimes and Q ------------------------------------------------------------

def _prepare(model: MarketModel, y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise ValueError("factor level must be positive")
    r, mu = model.r(y), model.mu(y)
    return y, r, mu, mu - r, (1 - model.gamma) * model.sigma2(y)


def _codes(r, mu, ex, v):
    tol = 1e-12 * (1 + np.abs(mu) + np.abs(r))
    pos = ex > tol
    return np.select(
        [ex < -tol, ~pos, pos & (np.abs(v - ex) <= tol), pos & (v > ex)],
        [0, 3, 4, 1], default=2)


def regime_codes(model: MarketModel, y) -> np.ndarray:
    """Integer regime labels (0=D1, 1=D2, 2=D3, 3=Boundary12, 4=Boundary23)."""
    _, r, mu, ex, v = _prepare(model, y)
    return _codes(r, mu, ex, v)


def classify_regime(model: MarketModel, y: float) -> Regime:
    return _CODES[int(regime_codes(model, y))]


def _scalar(x, like):
    return float(x) if np.ndim(like) == 0 else x


def q_value(model: MarketModel, y):
    """Q(y) = max_{pi in [0,1]} {pi(mu - r) - pi^2 (1-gamma) sigma^2 / 2} + r."""
    y_arr, r, mu, ex, v = _prepare(model, y)
    code = _codes(r, mu, ex, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = ex**2 / (2 * v) + r
    out = np.select([code == 0, code == 2], [r, mu - 0.5 * v], default=d2)
    return _scalar(out, y)


def q_derivative(model: MarketModel, y):
    """dQ/dy, branch by branch; uses d(sigma^2)/dy on D2."""
    y_arr, r, mu, ex, v = _prepare(model, y)
    code = _codes(r, mu, ex, v)
    dr, dmu, dv = model.dr(y_arr), model.dmu(y_arr), (1 - model.gamma) * model.dsigma2(y_arr)
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = ex * (dmu - dr) / v - ex**2 * dv / (2 * v**2) + dr
    out = np.select([code == 0, code == 2], [dr, dmu - 0.5 * dv], default=d2)
    return _scalar(out, y)


def optimal_fraction(model: MarketModel, y):
    """Constrained Merton fraction: 0 on D1, (mu-r)/((1-gamma)sigma^2) on D2, 1 on D3."""
    y_arr, r, mu, ex, v = _prepare(model, y)
    code = _codes(r, mu, ex, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = ex / v
    out = np.select([(code == 0) | (code == 3), (code == 2) | (code == 4)], [0.0, 1.0], default=d2)
    return _scalar(out, y)


def log_fraction(model: MarketModel, y):
    """Fraction maximising pi(mu - r) - pi^2 sigma^2 / 2 over [0, 1]."""
    y_arr = np.asarray(y, dtype=float)
    out = np.clip((model.mu(y_arr) - model.r(y_arr)) / model.sigma2(y_arr), 0.0, 1.0)
    return _scalar(out, y)


# --- derived constants -------------------------------------------------------------

def derive_constants(model: MarketModel, ou: OuParams, alpha_margin: float = 1.0,
                     epsilon: float = 0.1, b_floor: float = 1e-3,
                     cd_floor: float = 1e-6) -> DerivedConstants:
    g, lam, spec, gc = model.gamma, ou.reversion, ou.spec, model.growth
    gate = check_condition_b(spec, model, lam, epsilon, b_floor=b_floor)
    if not gate.passed:
        raise ConditionBViolation(
            f"condition B violated: psi({gate.threshold:.6g}) is infinite "
            f"(abscissa {spec.abscissa:.6g})")
    b_eff = gc.B if gc.B > 0 else b_floor
    b1 = g * b_eff / lam
    a1 = g * gc.A + lam * laplace_exponent(spec, b1)
    b2 = b1 * (1 + g / 4)
    psi2 = laplace_exponent(spec, b2)
    if not math.isfinite(psi2):
        raise ConditionBViolation(f"condition B violated: psi(B'') = psi({b2:.6g}) is infinite")
    a2 = g * gc.A + lam * psi2
    if not (a1 > 0 and a2 > 0):
        raise ValueError("A' must be positive; supply A > 0 in the growth constants")
    c_eff, d_eff = max(gc.C, cd_floor), max(gc.D, cd_floor)
    a = (1 / lam) * (1 + (1 - g) / a2) * max(4 * d_eff / b1, c_eff * g)
    return DerivedConstants(
        gamma=g, reversion=lam, b_prime=b1, a_prime=a1, b_dprime=b2, a_dprime=a2,
        b_sigma_prime=g * gc.B_sigma / lam, a=a, alpha=a1 + g + alpha_margin)


def envelope_upper(const: DerivedConstants, gamma: float, t, y, T: float):
    """Upper edge of the admissible band, (1 + (1-gamma)/A') e^{A'(T-t) + B'y}."""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    out = (1 + (1 - gamma) / const.a_prime) * np.exp(const.a_prime * (T - t) + const.b_prime * y)
    return _scalar(out, t if np.ndim(y) == 0 else y)


def phi_bound(const: DerivedConstants, gamma: float, lam: float, t, T: float):
    """phi solving phi' + (gamma - lam) phi + lam a = 0, phi(T) = a."""
    tau = T - np.asarray(t, dtype=float)
    beta, a = gamma - lam, const.a
    x = beta * tau
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(x) > 1e-12, np.expm1(x) / np.where(x == 0, 1, x), 1.0 + x / 2)
    out = a * np.exp(x) + lam * a * tau * ratio
    return _scalar(out, t)


# --- validation ------------------------------------------------------------

def validate(model: MarketModel, y_max: float, n: int = 10_000, seed: int = 0) -> None:
    """Check positivity and the stated growth constants on (0, 4*y_max].

    Raises :class:`GrowthViolation` listing every failed condition.
    """
    rng = np.random.default_rng(seed)
    y = np.sort(rng.uniform(0, 4 * y_max, n))
    y = y[y > 0]
    gc, tol = model.growth, 1e-12
    r, mu, s2 = model.r(y), model.mu(y), model.sigma2(y)
    q, dq = q_value(model, y), q_derivative(model, y)
    slack = lambda v: tol * (1 + np.abs(v))
    checks = {
        "r >= 0": r >= -tol,
        "mu >= 0": mu >= -tol,
        "sigma2 > 0": s2 > 0,
        "r <= A_r + B_r y": r <= gc.A_r + gc.B_r * y + slack(r),
        "mu <= A_mu + B_mu y": mu <= gc.A_mu + gc.B_mu * y + slack(mu),
        "sigma2 <= A_sigma + B_sigma y": s2 <= gc.A_sigma + gc.B_sigma * y + slack(s2),
        "r <= Q": r <= q + slack(q),
        "Q <= A + B y": q <= gc.A + gc.B * y + slack(q),
        "|Q'| <= C + D y": np.abs(dq) <= gc.C + gc.D * y + slack(dq),
    }
    failed = [f"{name} fails at y={y[~ok][0]:.6g}" for name, ok in checks.items() if not np.all(ok)]
    d2 = regime_codes(model, y) == 1
    if d2.any() and not np.min(s2[d2]) > 0:
        failed.append("inf sigma over D2 is not positive")
    if failed:
        raise GrowthViolation("; ".join(failed))
