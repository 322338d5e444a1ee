"""Paired utility comparison of the optimal rule against eight perturbed rules."""

from __future__ import annotations

import argparse
import time

from levymerton import PRESETS, SolverGrid, derive_constants, solve, stream
from levymerton.strategy import optimality_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=1212)
    args = ap.parse_args()
    model, ou = PRESETS["bns-example"]()
    surface = solve(model, ou, SolverGrid(), derive_constants(model, ou))
    start = time.perf_counter()
    res = optimality_probe(surface, model, ou, args.paths, args.steps, stream(args.seed, 0))
    print(f"{'alternative':28s} {'mean gain':>11s} {'std err':>9s} {'z':>6s}")
    for c in res:
        print(f"{c.name:28s} {c.mean_diff:+11.3e} {c.std_error:9.1e} "
              f"{c.mean_diff / c.std_error:6.1f}  {'ok' if c.passed else 'LOSES'}")
    print(f"{time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
