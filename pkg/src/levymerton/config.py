"""Flat ``key = value`` run configuration.

Grammar (one entry per line)::

    # comment
    section.key = value

Values are numbers, words, ``none`` for optional entries, or an affine
coefficient written ``a + b*y`` (also ``a - b*y``, ``b*y`` or just ``a``).
``market.preset`` selects a named model whose values fill every market,
subordinator and OU key not given explicitly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .factor import OuParams
from .levy import Family, SubordinatorSpec
from .market import PRESETS, Affine, GrowthConstants, MarketModel

GROWTH_KEYS = ("A_r", "B_r", "A_mu", "B_mu", "A_sigma", "B_sigma", "A", "B", "C", "D")

# key -> (kind, default); a default of None under kind "preset" means "from the preset"
SCHEMA: dict[str, tuple[str, object]] = {
    "market.preset": ("str", "bns-example"),
    "market.gamma": ("float", None),
    "market.T": ("float", None),
    "market.r": ("affine", None),
    "market.mu": ("affine", None),
    "market.sigma2": ("affine", None),
    **{f"market.growth.{k}": ("float", None) for k in GROWTH_KEYS},
    "subordinator.family": ("str", None),
    "subordinator.intensity": ("float", None),
    "subordinator.jump_rate": ("float", None),
    "ou.reversion": ("float", None),
    "ou.initial_level": ("float", None),
    "grid.M": ("int", 2000),
    "grid.J": ("int", 200),
    "grid.y_max": ("float", 2.0),
    "grid.kappa": ("optfloat", None),
    "grid.quad_nodes": ("int", 32),
    "grid.reaction": ("str", "exact"),
    "mc.n_paths": ("int", 10_000),
    "mc.seed": ("int", 0),
    "mc.substep": ("optfloat", None),
    "sim.n_steps": ("int", 2000),
    "sim.n_paths": ("int", 1),
    "sim.utility": ("str", "power"),
    "verify.contraction_pairs": ("int", 2),
    "verify.jensen_inner": ("int", 5000),
    "verify.surface_scale": ("float", 1.0),
    "output.dir": ("str", "out"),
    "seed": ("int", 0),
}
_FROM_PRESET = {k for k, (_, d) in SCHEMA.items() if d is None and not k.startswith(("grid.", "mc."))}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_AFFINE = re.compile(rf"^\s*(?:({_NUM})\s*(?:([-+])\s*({_NUM})\s*\*\s*y)?|({_NUM})\s*\*\s*y)\s*$")


class ConfigError(ValueError):
    """Carries every problem found, each tagged with its config key."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("\n".join(f"config error [{k}]: {m}" for k, m in problems))


def parse_affine(text: str) -> Affine:
    m = _AFFINE.match(text)
    if not m:
        raise ValueError(f"not an affine form 'a + b*y': {text!r}")
    if m.group(4) is not None:
        return Affine(0.0, float(m.group(4)))
    a = float(m.group(1))
    if m.group(3) is None:
        return Affine(a, 0.0)
    b = float(m.group(3))
    return Affine(a, -b if m.group(2) == "-" else b)


def format_affine(f: Affine) -> str:
    sign = "-" if f.b < 0 or (f.b == 0 and str(f.b).startswith("-")) else "+"
    return f"{float(f.a)!r} {sign} {abs(float(f.b))!r}*y"


def _convert(kind: str, text: str):
    if kind == "str":
        return text
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "optfloat":
        return None if text.lower() == "none" else float(text)
    if kind == "affine":
        return parse_affine(text)
    raise AssertionError(kind)


def _format(kind: str, value) -> str:
    if value is None:
        return "none"
    if kind == "affine":
        return format_affine(value)
    if kind in ("float", "optfloat"):
        return repr(float(value))
    return str(value)


def parse_text(text: str) -> dict[str, str]:
    """Raw ``key -> value text`` mapping; rejects unknown or repeated keys."""
    raw: dict[str, str] = {}
    problems = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append((f"line {n}", f"expected 'key = value', got {line!r}"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            problems.append((key, "unknown key"))
        elif key in raw:
            problems.append((key, "given twice"))
        else:
            raw[key] = value
    if problems:
        raise ConfigError(problems)
    return raw


def _preset_values(name: str) -> dict[str, object]:
    model, ou = PRESETS[name]()
    out: dict[str, object] = {
        "market.gamma": model.gamma,
        "market.T": model.T,
        "market.r": model.affine["r"],
        "market.mu": model.affine["mu"],
        "market.sigma2": model.affine["sigma2"],
        "subordinator.family": ou.spec.family.value,
        "subordinator.intensity": ou.spec.intensity,
        "subordinator.jump_rate": ou.spec.jump_rate,
        "ou.reversion": ou.reversion,
        "ou.initial_level": ou.initial_level,
    }
    for k in GROWTH_KEYS:
        out[f"market.growth.{k}"] = getattr(model.growth, k)
    return out


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **updates) -> "RunConfig":
        v = dict(self.values)
        for k, val in updates.items():
            v[k.replace("__", ".")] = val
        return RunConfig(v)

    def model(self) -> MarketModel:
        v = self.values
        growth = GrowthConstants(**{k: v[f"market.growth.{k}"] for k in GROWTH_KEYS})
        return MarketModel.from_affine(v["market.r"], v["market.mu"], v["market.sigma2"],
                                       v["market.gamma"], v["market.T"], growth=growth,
                                       name=v["market.preset"])

    def ou(self) -> OuParams:
        v = self.values
        fam = Family(v["subordinator.family"])
        spec = (SubordinatorSpec.null() if fam is Family.NULL else
                SubordinatorSpec.compound_poisson(v["subordinator.intensity"],
                                                  v["subordinator.jump_rate"]))
        return OuParams(v["ou.reversion"], v["ou.initial_level"], spec)

    def grid(self):
        from .pide import SolverGrid

        v = self.values
        return SolverGrid(T=v["market.T"], M=v["grid.M"], J=v["grid.J"], y_max=v["grid.y_max"],
                          kappa=v["grid.kappa"], quad_nodes=v["grid.quad_nodes"])


def resolve(raw: dict[str, str]) -> RunConfig:
    """Typed configuration: schema defaults, then preset values, then ``raw``."""
    problems = []
    preset = raw.get("market.preset", SCHEMA["market.preset"][1])
    values = {k: d for k, (_, d) in SCHEMA.items()}
    values["market.preset"] = preset
    if preset in PRESETS:
        values.update(_preset_values(preset))
    else:
        missing = [k for k in _FROM_PRESET if k not in raw and k != "market.preset"]
        if missing:
            problems.append(("market.preset",
                             f"unknown preset {preset!r} (known: {', '.join(PRESETS)}) and "
                             f"{len(missing)} model keys are not given explicitly"))
    for key, text in raw.items():
        kind = SCHEMA[key][0]
        try:
            values[key] = _convert(kind, text)
        except ValueError as exc:
            problems.append((key, str(exc)))
    if problems:
        raise ConfigError(problems)
    return RunConfig(values)


def parse(text: str) -> RunConfig:
    return resolve(parse_text(text))


def serialize(cfg: RunConfig) -> str:
    """Canonical text; ``serialize(parse(serialize(c))) == serialize(c)``."""
    return "".join(f"{k} = {_format(kind, cfg.values[k])}\n" for k, (kind, _) in SCHEMA.items())


def check(cfg: RunConfig) -> list[tuple[str, str]]:
    """Every violated precondition across modules, tagged by config key."""
    from .levy import check_condition_b
    from .market import GrowthViolation, derive_constants, validate
    from .pide import cfl_number

    v = cfg.values
    out: list[tuple[str, str]] = []

    def need(ok, key, msg):
        if not ok:
            out.append((key, msg))
        return ok

    need(0 < v["market.gamma"] < 1, "market.gamma", "must lie in (0, 1)")
    need(v["market.T"] > 0, "market.T", "must be positive")
    for k in GROWTH_KEYS:
        need(v[f"market.growth.{k}"] >= 0, f"market.growth.{k}", "must be nonnegative")
    fam_ok = need(v["subordinator.family"] in {f.value for f in Family}, "subordinator.family",
                  f"must be one of {[f.value for f in Family]}")
    need(v["subordinator.intensity"] >= 0, "subordinator.intensity", "must be nonnegative")
    need(v["subordinator.jump_rate"] > 0, "subordinator.jump_rate", "must be positive")
    need(v["ou.reversion"] > 0, "ou.reversion", "must be positive")
    need(0 < v["ou.initial_level"] < v["grid.y_max"], "ou.initial_level",
         "must lie in (0, grid.y_max)")
    need(v["grid.M"] >= 1, "grid.M", "must be at least 1")
    need(v["grid.J"] >= 3, "grid.J", "must be at least 3")
    need(v["grid.y_max"] > 0, "grid.y_max", "must be positive")
    need(v["grid.quad_nodes"] >= 2, "grid.quad_nodes", "must be at least 2")
    need(v["grid.reaction"] in ("exact", "euler"), "grid.reaction", "must be exact or euler")
    need(v["mc.n_paths"] >= 100, "mc.n_paths", "must be at least 100")
    need(v["mc.substep"] is None or v["mc.substep"] > 0, "mc.substep", "must be positive")
    need(v["sim.n_steps"] >= 2, "sim.n_steps", "must be at least 2")
    need(v["sim.n_paths"] >= 1, "sim.n_paths", "must be at least 1")
    need(v["sim.utility"] in ("power", "log"), "sim.utility", "must be power or log")
    need(v["verify.surface_scale"] > 0, "verify.surface_scale", "must be positive")
    if out or not fam_ok:
        return out

    try:
        model, ou, grid = cfg.model(), cfg.ou(), cfg.grid()
    except ValueError as exc:
        return out + [("market", str(exc))]
    try:
        validate(model, grid.y_max)
    except GrowthViolation as exc:
        out.append(("market.growth", str(exc)))
    gate = check_condition_b(ou.spec, model, ou.reversion)
    if not gate.passed:
        out.append(("subordinator.jump_rate",
                    f"condition B violated: psi({gate.threshold:.6g}) is infinite "
                    f"(abscissa {ou.spec.abscissa:.6g})"))
        return out
    try:
        const = derive_constants(model, ou)
    except ValueError as exc:
        out.append(("market.growth", str(exc)))
        return out
    if grid.kappa is not None and not grid.kappa > const.b_dprime:
        out.append(("grid.kappa", f"must exceed B''={const.b_dprime:.6g}"))
    if not ou.spec.is_null and not ou.spec.jump_rate > const.b_prime:
        out.append(("subordinator.jump_rate", f"must exceed B'={const.b_prime:.6g}"))
    cfl = cfl_number(model, ou, grid)
    if cfl > 0.9:
        out.append(("grid.M", f"CFL violated: {cfl:.4g} > 0.9; increase grid.M"))
    return out
