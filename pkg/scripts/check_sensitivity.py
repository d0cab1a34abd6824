#!/usr/bin/env python3
"""Compare the analytic sensitivities with central finite differences.

Runs on the fitted nominal control (several switches) and reports the
per-column relative error with and without the switching-time correction.
"""

import argparse
from pathlib import Path

import numpy as np

from lowthrust_mpsp.cases import prepare_context
from lowthrust_mpsp.propagator import FourierControl, propagate_segmented
from lowthrust_mpsp.sensitivity import accumulate
from lowthrust_mpsp.units import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("artifacts"))
    ap.add_argument("--eps-step", type=float, default=1e-4)
    ap.add_argument("--x0-step", type=float, default=1e-6)
    args = ap.parse_args()

    sc = load_scenario()
    ctx = prepare_context(sc, cache=args.out / "nominal.json")
    w, bm = ctx.eps0, ctx.bmap
    X0 = np.concatenate([sc.x0, [ctx.nominal.lambda_m0]])
    traj = propagate_segmented(X0, FourierControl(w, bm), sc)
    sb = accumulate(traj, w, bm, sc)
    bare = accumulate(traj, w, bm, sc, jump_compensation=False)

    def Y(ww, XX):
        return propagate_segmented(XX, FourierControl(ww, bm), sc).terminal_output

    def rel(a, b):
        return np.linalg.norm(a - b) / np.linalg.norm(b)

    print(f"{len(traj.switch_times)} switches")
    errs, errs_bare = [], []
    for j in range(w.size):
        d = np.eye(w.size)[j] * args.eps_step
        fd = (Y(w.shifted(d), X0) - Y(w.shifted(-d), X0)) / (2 * args.eps_step)
        errs.append(rel(sb.B_v[:, j], fd))
        errs_bare.append(rel(bare.B_v[:, j], fd))
    print(f"B_v: max rel err {max(errs):.2e} (column {int(np.argmax(errs))}), "
          f"without jump correction {max(errs_bare):.2e}")
    for j in range(8):
        d = np.eye(8)[j] * args.x0_step
        fd = (Y(w, X0 + d) - Y(w, X0 - d)) / (2 * args.x0_step)
        print(f"A[:, {j}]: rel err {rel(sb.A[:, j], fd):.2e}")


if __name__ == "__main__":
    main()
