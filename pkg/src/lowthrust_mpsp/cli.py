"""Command-line entry point.

    lowthrust-mpsp nominal
    lowthrust-mpsp guide --case table3:4
    lowthrust-mpsp sweep --suite table4 --reoptimize
    lowthrust-mpsp export --what angles [--case thruster:3]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .cases import (
    IC_SCALE,
    SUITES,
    CaseError,
    CaseReport,
    CaseSpec,
    build_case,
    guide,
    prepare_context,
    run_case,
    run_sweep,
    write_artifacts,
)
from .fourier import DEFAULT_ORDER
from .propagator import H_MAX_FRACTION
from .units import ScenarioError, load_scenario

log = logging.getLogger("lowthrust_mpsp")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowthrust-mpsp", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", type=Path, default=None, help="scenario JSON (default: bundled mission)")
    ap.add_argument("--out", type=Path, default=Path("artifacts"), help="artifact directory")
    ap.add_argument("--reoptimize", action="store_true", help="re-solve each perturbed case for fuel comparison")
    ap.add_argument("--order", type=int, default=DEFAULT_ORDER, help="Fourier order K")
    ap.add_argument("--hmax-frac", type=float, default=H_MAX_FRACTION, help="h_max as a fraction of tf")
    ap.add_argument("--ic-scale", type=float, default=IC_SCALE,
                    help="multiplier on the printed base initial-state perturbation")
    ap.add_argument("--workers", type=int, default=1, help="parallel cases in a sweep")
    ap.add_argument("--strict", action="store_true", help="non-zero exit if any case fails")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)
    sub.add_parser("nominal", help="solve and cache the fuel-optimal nominal")
    g = sub.add_parser("guide", help="run one perturbation case")
    g.add_argument("--case", required=True, help="e.g. table3:4, initial_state:-1, terminal_position:+,-,+, thruster:3")
    s = sub.add_parser("sweep", help="run a perturbation suite")
    s.add_argument("--suite", required=True, choices=sorted(SUITES))
    e = sub.add_parser("export", help="write trajectory/angle/throttle CSV")
    e.add_argument("--what", required=True, choices=("traj", "angles", "throttle"))
    e.add_argument("--case", default=None, help="export a guided case instead of the nominal")
    return ap


def _print_report(r: CaseReport) -> None:
    opt = "" if r.fuel_increase_vs_optimal_pct is None else f" vs-opt={r.fuel_increase_vs_optimal_pct:+.3f}%"
    print(f"{r.case_id:<12} {r.status:<9} it={r.newton_iterations:<4d} N_seg={r.n_seg:<2d} "
          f"dr={r.pos_err_km:.3g} km dv={r.vel_err_km_s:.3g} km/s lam_mf={r.lam_mf:.2e} "
          f"fuel={r.fuel_used_kg:.4f} kg vs-nom={r.fuel_increase_vs_nominal_pct:+.3f}%{opt}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = load_scenario(args.scenario)
        ctx = prepare_context(scenario, args.order, args.hmax_frac, cache=args.out / "nominal.json")
    except (ScenarioError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    header = ctx.header()

    if args.verb == "nominal":
        nom = ctx.nominal
        write_artifacts(args.out, "nominal", nom.trajectory, header)
        mu = scenario.units.mass_unit
        print(f"final mass {nom.final_mass * mu:.6f} kg, {nom.n_thrust_segments} thrust + "
              f"{nom.n_coast_segments} coast segments, residual {nom.residual_norm:.2e}")
        print("switch times [TU]: " + ", ".join(f"{t:.6f}" for t in nom.switch_times))
        print(f"lambda0 = {nom.lambda0.array().tolist()}")
        return 0

    try:
        if args.verb == "guide":
            report = run_case(CaseSpec.parse(args.case, args.ic_scale), ctx, args.out, args.reoptimize)
            _print_report(report)
            return 1 if args.strict and report.status != "converged" else 0

        if args.verb == "sweep":
            reports = run_sweep(args.suite, ctx, args.out, args.reoptimize, args.workers, args.ic_scale)
            for r in reports:
                _print_report(r)
            n_ok = sum(r.status == "converged" for r in reports)
            print(f"{n_ok}/{len(reports)} converged; summary in {args.out / (args.suite + '_summary.csv')}")
            return 1 if args.strict and n_ok < len(reports) else 0

        if args.verb == "export":
            if args.case is None:
                traj, stem = ctx.nominal.trajectory, "nominal"
            else:
                spec = CaseSpec.parse(args.case, args.ic_scale)
                sol = guide(ctx, build_case(spec, scenario))
                if sol.trajectory is None:
                    print(f"error: case {spec.case_id} produced no trajectory", file=sys.stderr)
                    return 1
                traj, stem = sol.trajectory, spec.case_id
                header = header | {"case_id": spec.case_id, "status": sol.status}
            paths = write_artifacts(args.out, stem, traj, header, what=(args.what,))
            print(paths[args.what])
            return 0
    except CaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
