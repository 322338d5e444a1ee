"""Monte Carlo operator applied to the solved surface at the default probe lattice."""

from __future__ import annotations

import argparse
import time

import numpy as np

from levymerton import PRESETS, SolverGrid, derive_constants, solve
from levymerton.oracle import McConfig, apply_operator


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--M", type=int, default=8000)
    ap.add_argument("--J", type=int, default=800)
    args = ap.parse_args()
    model, ou = PRESETS["bns-example"]()
    const = derive_constants(model, ou)
    surface = solve(model, ou, SolverGrid(M=args.M, J=args.J), const)
    start = time.perf_counter()
    rep = apply_operator(surface, model, ou, McConfig(n_paths=args.paths, seed=args.seed), const)
    f = surface(rep.t, rep.y)
    z = (rep.estimate - f) / rep.std_error
    for t, y, e, v, zz in zip(rep.t, rep.y, rep.estimate, f, z):
        print(f"t={t:.2f} y={y:.2f}  L f = {e:.7f}  f = {v:.7f}  z = {zz:+.2f}")
    print(f"max |z| = {np.max(np.abs(z)):.2f}; {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
