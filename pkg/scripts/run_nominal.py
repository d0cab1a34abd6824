#!/usr/bin/env python3
"""Solve the nominal rendezvous, fit the Fourier control and write artifacts."""

import argparse
import logging
from pathlib import Path

from lowthrust_mpsp.cases import prepare_context, write_artifacts
from lowthrust_mpsp.fourier import evaluation_error_bound, save_weights
from lowthrust_mpsp.mpsp import inner_loop
from lowthrust_mpsp.units import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("artifacts"))
    ap.add_argument("--order", type=int, default=15)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    sc = load_scenario()
    ctx = prepare_context(sc, args.order, cache=args.out / "nominal.json")
    nom = ctx.nominal
    mu = sc.units.mass_unit
    print(f"final mass      {nom.final_mass * mu:.6f} kg (fuel {nom.trajectory.fuel_used * mu:.6f} kg)")
    print(f"structure       {nom.n_thrust_segments} thrust + {nom.n_coast_segments} coast")
    print(f"residual        {nom.residual_norm:.2e}")
    print("switch times    " + ", ".join(f"{t:.5f}" for t in nom.switch_times) + " TU")
    write_artifacts(args.out, "nominal", nom.trajectory, ctx.header())
    save_weights(args.out / "nominal_weights.json", ctx.eps0, ctx.bmap, lambda_m0=nom.lambda_m0)
    print(f"fit order {ctx.order}: max |eps| {abs(ctx.eps0.eps).max():.3g}, "
          f"U evaluation error bound {evaluation_error_bound(ctx.eps0):.2e}")

    res = inner_loop(sc, ctx.eps0, nom.lambda_m0, ctx.bmap, ctx.n_seg_ref, h_max=ctx.h_max)
    for rec in res.history:
        print("  " + rec.line())
    print(f"zero-perturbation self-test: {'converged' if res.sign else 'FAILED'} in {res.iterations} iterations")


if __name__ == "__main__":
    main()
