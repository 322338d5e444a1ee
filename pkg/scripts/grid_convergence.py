"""Value at (0, Y(0)) under simultaneous halving of both grid spacings."""

from __future__ import annotations

import argparse

import numpy as np

from levymerton import PRESETS, SolverGrid, derive_constants, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--reaction", choices=("exact", "euler"), default="exact")
    args = ap.parse_args()
    model, ou = PRESETS["bns-example"]()
    const = derive_constants(model, ou)
    vals = []
    for k in range(args.levels):
        g = SolverGrid(M=1000 * 2**k, J=100 * 2**k)
        s = solve(model, ou, g, const, reaction=args.reaction)
        vals.append(s(0.0, ou.initial_level))
        print(f"{g.M:6d} x {g.J:4d}  f = {vals[-1]:.10f}  ({s.report.seconds:.1f}s)")
    d = np.abs(np.diff(vals))
    for i in range(1, d.size):
        print(f"Cauchy ratio {i}: {d[i] / d[i - 1]:.3f}")


if __name__ == "__main__":
    main()
