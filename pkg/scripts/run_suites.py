#!/usr/bin/env python3
"""Run the perturbation suites and print a per-case table.

    python scripts/run_suites.py                 # all three suites
    python scripts/run_suites.py table5 --no-reoptimize
"""

import argparse
import logging
import time
from pathlib import Path

from lowthrust_mpsp.cases import IC_SCALE, prepare_context, run_sweep
from lowthrust_mpsp.units import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("suites", nargs="*", default=["table3", "table4", "table5"])
    ap.add_argument("--out", type=Path, default=Path("artifacts"))
    ap.add_argument("--no-reoptimize", action="store_true")
    ap.add_argument("--ic-scale", type=float, default=IC_SCALE)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    ctx = prepare_context(load_scenario(), cache=args.out / "nominal.json")
    for suite in args.suites:
        t0 = time.perf_counter()
        reports = run_sweep(suite, ctx, args.out, not args.no_reoptimize, args.workers, args.ic_scale)
        print(f"\n{suite} ({time.perf_counter() - t0:.0f} s)")
        print(f"{'case':<10} {'params':<12} {'status':<9} {'iters':>5} {'cont':>4} {'N_seg':>5} {'tol':>3} "
              f"{'dr km':>7} {'fuel kg':>8} {'vs nom':>8} {'vs opt':>8}")
        for r in reports:
            opt = "" if r.fuel_increase_vs_optimal_pct is None else f"{r.fuel_increase_vs_optimal_pct:+.3f}%"
            params = " ".join(f"{p:g}" for p in r.params)
            print(f"{r.case_id:<10} {params:<12} {r.status:<9} {r.newton_iterations:>5} "
                  f"{r.continuation_steps:>4} {r.n_seg:>5} {r.n_seg_tol:>3} {r.pos_err_km:>7.1f} "
                  f"{r.fuel_used_kg:>8.4f} {r.fuel_increase_vs_nominal_pct:>+7.3f}% {opt:>8}")


if __name__ == "__main__":
    main()
