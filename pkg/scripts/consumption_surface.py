"""Solve the value surface for the bns-example market and plot c/x over (t, y)."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from levymerton import PRESETS, SolverGrid, derive_constants, solve
from levymerton.cli import plot_consumption_surface
from levymerton.pide import consumption_surface


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--M", type=int, default=2000)
    ap.add_argument("--J", type=int, default=200)
    ap.add_argument("--out", default="out/scripts")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model, ou = PRESETS["bns-example"]()
    const = derive_constants(model, ou)
    surface = solve(model, ou, SolverGrid(M=args.M, J=args.J), const)
    c = consumption_surface(surface, model.gamma)
    print(f"solved {args.M}x{args.J} in {surface.report.seconds:.2f}s")
    print("nondecreasing in t:", bool(np.all(np.diff(c, axis=0) >= 0)))
    print("nonincreasing in y:", bool(np.all(np.diff(c, axis=1) <= 0)))
    print(f"{'t':>6} " + " ".join(f"y={y:<6.2f}" for y in (0.1, 0.2, 0.5, 1.0, 2.0)))
    for t in (0.0, 0.25, 0.5, 0.75, 0.95):
        f = surface(np.full(5, t), np.array([0.1, 0.2, 0.5, 1.0, 2.0]))
        print(f"{t:6.2f} " + " ".join(f"{v:8.4f}" for v in f ** (-1 / (1 - model.gamma))))
    plot_consumption_surface(surface, model.gamma, out / "consumption_surface.svg")
    print("wrote", out / "consumption_surface.svg")


if __name__ == "__main__":
    main()
