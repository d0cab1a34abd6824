"""Perturbation cases, guidance runs and their file artifacts."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .continuation import BoundaryConditions, GuidanceSolution, outer_loop
from .dynamics import thrust_angles_array
from .fourier import DEFAULT_ORDER, BasisMap, FourierWeights, evaluation_error_bound, save_weights
from .mpsp import ConvergenceSpec, NewtonWeights, count_segments, terminal_error
from .nominal import ConvergenceError, NominalSolution, load_nominal, save_nominal, solve_fuel_optimal
from .propagator import H_MAX_FRACTION, SWITCH_TOL, SegmentedTrajectory, write_trajectory_csv
from .units import Scenario, scenario_to_config

log = logging.getLogger(__name__)

BASE_DX0 = np.array([1.6712, -1.0659, -4.1460, 1.0876, 2.3763, 4.6091]) * 1e-2
# The printed base vector read as LU/VU makes most cases infeasible for this
# spacecraft; one tenth of it keeps every case within reach.
IC_SCALE = 0.1
CUBE_HALF_SIDE = 0.02  # LU

KINDS = ("initial_state", "terminal_position", "thruster")

SUITES = {
    "table3": [("initial_state", (k,)) for k in (-3.0, -2.5, -2.0, -1.0, 1.0, 2.0, 2.5, 3.0, 3.5)],
    "table4": [("terminal_position", s) for s in itertools.product((1, -1), repeat=3)],
    "table5": [("thruster", (p,)) for p in (-10.0, -6.0, -3.0, 3.0, 6.0, 10.0)],
}
SUITES["table6"] = SUITES["table5"]

_ARITY = {"initial_state": 1, "terminal_position": 3, "thruster": 1}


class CaseError(ValueError):
    """Malformed case specification."""


@dataclass(frozen=True)
class CaseSpec:
    kind: str
    params: tuple
    case_id: str = ""
    ic_scale: float = IC_SCALE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CaseError(f"unknown case kind {self.kind!r}; expected one of {KINDS}")
        params = tuple(float(p) for p in self.params)
        if len(params) != _ARITY[self.kind]:
            raise CaseError(f"{self.kind} takes {_ARITY[self.kind]} parameter(s), got {len(params)}")
        if self.kind == "terminal_position" and any(abs(p) != 1.0 for p in params):
            raise CaseError("cube vertex components must be +1 or -1")
        object.__setattr__(self, "params", params)
        if not self.case_id:
            object.__setattr__(self, "case_id", self.default_id())

    def default_id(self) -> str:
        if self.kind == "terminal_position":
            return "tf_" + "".join("+" if p > 0 else "-" for p in self.params)
        tag = "ic_k" if self.kind == "initial_state" else "tmax_"
        return f"{tag}{self.params[0]:+g}"

    @classmethod
    def parse(cls, text: str, ic_scale: float = IC_SCALE) -> "CaseSpec":
        """``kind:values`` (e.g. ``initial_state:-1``, ``terminal_position:+,+,-``,
        ``thruster:3``) or ``suite:index`` with a 1-based index (``table4:6``)."""
        kind, _, rest = text.partition(":")
        if kind in SUITES:
            try:
                idx = int(rest)
                k, p = SUITES[kind][idx - 1]
            except (ValueError, IndexError):
                raise CaseError(f"bad case index {rest!r} for suite {kind}") from None
            if idx < 1:
                raise CaseError("case index is 1-based")
            return cls(k, p, f"{kind}_{idx}", ic_scale)
        vals = [v.strip() for v in rest.split(",") if v.strip()]
        try:
            params = tuple(float(v + "1") if v in "+-" else float(v) for v in vals)
        except ValueError:
            raise CaseError(f"cannot parse case parameters {rest!r}") from None
        return cls(kind, params, ic_scale=ic_scale)


def suite_cases(suite: str, ic_scale: float = IC_SCALE) -> list:
    if suite not in SUITES:
        raise CaseError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)}")
    return [CaseSpec(k, p, f"{suite}_{i + 1}", ic_scale) for i, (k, p) in enumerate(SUITES[suite])]


def build_case(spec: CaseSpec, scenario: Scenario) -> BoundaryConditions:
    ref = BoundaryConditions.from_scenario(scenario)
    if spec.kind == "initial_state":
        x0 = ref.x0.copy()
        x0[:6] += spec.params[0] * spec.ic_scale * BASE_DX0
        return BoundaryConditions(x0, ref.rf, ref.vf, ref.thrust_max, ref.exhaust_velocity)
    if spec.kind == "terminal_position":
        rf = ref.rf + CUBE_HALF_SIDE * np.asarray(spec.params)
        return BoundaryConditions(ref.x0, rf, ref.vf, ref.thrust_max, ref.exhaust_velocity)
    scale = 1.0 + spec.params[0] / 100.0
    if not scale > 0.0:
        raise CaseError("thrust scaling must leave T_max positive")
    return BoundaryConditions(ref.x0, ref.rf, ref.vf, ref.thrust_max * scale, ref.exhaust_velocity)


# ---------------------------------------------------------------------------
# guidance context
# ---------------------------------------------------------------------------


def scenario_hash(scenario: Scenario) -> str:
    doc = json.dumps(scenario_to_config(scenario), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def build_id() -> str:
    """Short content hash of the package sources."""
    h = hashlib.sha1()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:10]}"


@dataclass
class GuidanceContext:
    """Everything a guidance run needs that is shared across cases."""

    scenario: Scenario
    nominal: NominalSolution
    eps0: FourierWeights
    bmap: BasisMap
    h_max: float
    spec: ConvergenceSpec = field(default_factory=ConvergenceSpec)
    weights: NewtonWeights = field(default_factory=NewtonWeights)

    @property
    def order(self) -> int:
        return self.eps0.order

    @property
    def n_seg_ref(self) -> int:
        return count_segments(self.nominal.trajectory)

    def header(self) -> dict:
        return {
            "scenario_hash": scenario_hash(self.scenario),
            "order_K": self.order,
            "h_max_TU": repr(self.h_max),
            "R_eps": "identity" if self.weights.R_eps is None else "custom",
            "R_0": self.weights.R_0,
            "build_id": build_id(),
        }


def prepare_context(scenario: Scenario, order: int = DEFAULT_ORDER, hmax_frac: float = H_MAX_FRACTION,
                    cache: Optional[Path] = None, nominal: Optional[NominalSolution] = None) -> GuidanceContext:
    """Solve (or load from ``cache``) the nominal trajectory and fit its control."""
    h_max = hmax_frac * scenario.tf
    if nominal is None and cache is not None and Path(cache).exists():
        doc = json.loads(Path(cache).read_text())
        if doc.get("scenario_hash") == scenario_hash(scenario) and np.isclose(doc.get("h_max", -1), h_max):
            nominal = load_nominal(cache, scenario)
            log.info("loaded nominal from %s", cache)
    if nominal is None:
        nominal = solve_fuel_optimal(scenario, h_max=h_max)
        if cache is not None:
            Path(cache).parent.mkdir(parents=True, exist_ok=True)
            save_nominal(cache, nominal, scenario_hash=scenario_hash(scenario))
    eps0, bmap = nominal.fit_control(order)
    return GuidanceContext(scenario, nominal, eps0, bmap, h_max)


# ---------------------------------------------------------------------------
# reports and invariants
# ---------------------------------------------------------------------------


def switch_resolution(w: FourierWeights, traj: SegmentedTrajectory) -> float:
    """Smallest |S| a switch node can be resolved to under control ``w``."""
    m_min = float(min(seg.node_states[:, 6].min() for seg in traj.segments))
    return max(SWITCH_TOL, evaluation_error_bound(w) * traj.exhaust_velocity / m_min)


def _angle_between(a, b) -> float:
    """Angle in degrees between two thrust directions (sign of U irrelevant)."""
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def _one_sided_direction(times, U, t_sw) -> np.ndarray:
    """Unit direction at ``t_sw`` extrapolated linearly from up to two nodes."""
    D = U / np.linalg.norm(U, axis=1)[:, None]
    if len(times) < 2:
        return D[0]
    (t1, t2), (d1, d2) = times, D
    return d1 + (d2 - d1) * (t_sw - t1) / (t2 - t1)


def switch_angle_jump(left, right) -> float:
    """Thrust-direction discontinuity at the switch between two segments.

    Each one-sided limit at ``t_sw`` is extrapolated from the nodes on its
    own side, so smooth rotation of the primer cancels to O(h^2) while a
    genuine jump shows up at full size.  The gap between the two copies of
    the switch node is included as well.
    """
    t_sw = right.t_start
    lt, lU = left.node_times[:-1][-2:], left.node_controls[:-1][-2:]
    rt, rU = right.node_times[1:][:2], right.node_controls[1:][:2]
    jump = _angle_between(left.node_controls[-1], right.node_controls[0])
    if len(lt) and len(rt):
        jump = max(jump, _angle_between(_one_sided_direction(lt, lU, t_sw),
                                        _one_sided_direction(rt, rU, t_sw)))
    return jump


def structural_checks(traj: SegmentedTrajectory, s_tol: float = SWITCH_TOL) -> dict:
    """Angle continuity at switches, bang-off-bang consistency, mass bookkeeping."""
    jump = max((switch_angle_jump(a, b) for a, b in zip(traj.segments[:-1], traj.segments[1:])),
               default=0.0)
    t, X, U, u = traj.stacked()
    _, S, _ = traj.switching_values()
    bang = float(np.max(S * (2 * u - 1)))
    expected = traj.thrust_max / traj.exhaust_velocity * traj.thrust_time
    mass_err = float(abs(traj.fuel_used - expected))
    return {
        "max_switch_angle_jump_deg": jump,
        "max_bang_violation": bang,
        "switch_tolerance": s_tol,
        "mass_bookkeeping_error": mass_err,
        "angles_continuous": jump < 1.0,
        "bang_consistent": bang <= s_tol,
        "mass_consistent": mass_err <= 1e-10,
    }


@dataclass
class CaseReport:
    case_id: str
    kind: str
    params: list
    status: str
    pos_err_km: float = float("nan")
    vel_err_km_s: float = float("nan")
    lam_mf: float = float("nan")
    newton_iterations: int = 0
    continuation_steps: int = 0
    n_seg: int = 0
    n_seg_tol: int = 0
    fuel_used_kg: float = float("nan")
    fuel_increase_vs_nominal_pct: float = float("nan")
    fuel_increase_vs_optimal_pct: Optional[float] = None
    optimal_n_seg: Optional[int] = None
    failure_reason: str = ""
    runtime_s: float = 0.0
    checks: dict = field(default_factory=dict)

    SUMMARY_COLUMNS = ("case_id", "kind", "params", "status", "pos_err_km", "vel_err_km_s", "lam_mf",
                       "newton_iterations", "continuation_steps", "n_seg", "n_seg_tol", "fuel_used_kg",
                       "fuel_increase_vs_nominal_pct", "fuel_increase_vs_optimal_pct", "optimal_n_seg")

    def row(self) -> list:
        d = asdict(self)
        d["params"] = " ".join(f"{p:g}" for p in self.params)
        return ["" if d[c] is None else d[c] for c in self.SUMMARY_COLUMNS]


def _write_csv(path, columns, rows, header):
    with open(path, "w", newline="") as fh:
        for key, val in header.items():
            fh.write(f"# {key}: {val}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)


def throttle_rows(traj: SegmentedTrajectory) -> list:
    rows = []
    for seg in traj.segments:
        rows.append([repr(seg.t_start), seg.u])
        rows.append([repr(seg.t_end), seg.u])
    return rows


def angle_rows(traj: SegmentedTrajectory) -> list:
    t, _, U, u = traj.stacked()
    alpha, beta = thrust_angles_array(U)
    return [[repr(a), repr(b), repr(c), int(d)] for a, b, c, d in zip(t, alpha, beta, u)]


def write_artifacts(outdir: Path, stem: str, traj: SegmentedTrajectory, header: dict, what=("traj", "angles", "throttle")):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "traj" in what:
        paths["traj"] = outdir / f"{stem}_trajectory.csv"
        write_trajectory_csv(traj, paths["traj"], header)
    if "angles" in what:
        paths["angles"] = outdir / f"{stem}_angles.csv"
        _write_csv(paths["angles"], ["t_TU", "alpha_deg", "beta_deg", "u"], angle_rows(traj), header)
    if "throttle" in what:
        paths["throttle"] = outdir / f"{stem}_throttle.csv"
        _write_csv(paths["throttle"], ["t_TU", "u"], throttle_rows(traj), header)
    return paths


def guide(ctx: GuidanceContext, c_per: BoundaryConditions) -> GuidanceSolution:
    return outer_loop(ctx.scenario, c_per, ctx.eps0, ctx.nominal.lambda_m0, ctx.bmap, ctx.n_seg_ref,
                      ctx.spec, ctx.weights, h_max=ctx.h_max)


def reoptimize(ctx: GuidanceContext, c_per: BoundaryConditions) -> NominalSolution:
    """Fuel-optimal solution of the perturbed problem, warm-started from the nominal."""
    sc = c_per.apply(ctx.scenario)
    return solve_fuel_optimal(sc, lambda_guess=ctx.nominal.lambda0, h_max=ctx.h_max)


def run_case(spec: CaseSpec, ctx: GuidanceContext, artifacts_dir: Optional[Path] = None,
             reoptimize_fuel: bool = False) -> CaseReport:
    t_start = time.perf_counter()
    c_per = build_case(spec, ctx.scenario)
    target = c_per.apply(ctx.scenario)
    report = CaseReport(spec.case_id, spec.kind, list(spec.params), "failed")
    sol = guide(ctx, c_per)
    report.newton_iterations = sol.total_newton_iterations
    report.continuation_steps = sol.continuation_steps
    report.n_seg_tol = sol.n_seg_tol
    report.failure_reason = sol.failure_reason
    if sol.trajectory is not None:
        err = terminal_error(sol.trajectory, target)
        report.pos_err_km, report.vel_err_km_s, report.lam_mf = err.as_tuple()
        report.n_seg = count_segments(sol.trajectory)
        mu = ctx.scenario.units.mass_unit
        report.fuel_used_kg = sol.fuel_used * mu
        nominal_fuel = ctx.nominal.trajectory.fuel_used
        report.fuel_increase_vs_nominal_pct = 100.0 * (sol.fuel_used / nominal_fuel - 1.0)
        report.checks = structural_checks(sol.trajectory, switch_resolution(sol.eps, sol.trajectory))
    if sol.converged:
        report.status = "converged"
    if reoptimize_fuel and sol.converged:
        try:
            opt = reoptimize(ctx, c_per)
            report.fuel_increase_vs_optimal_pct = 100.0 * (sol.fuel_used / opt.trajectory.fuel_used - 1.0)
            report.optimal_n_seg = count_segments(opt.trajectory)
        except ConvergenceError as exc:
            log.warning("%s: re-optimisation failed: %s", spec.case_id, exc)
    report.runtime_s = time.perf_counter() - t_start

    if artifacts_dir is not None:
        outdir = Path(artifacts_dir)
        header = ctx.header() | {"case_id": spec.case_id, "kind": spec.kind,
                                 "params": " ".join(f"{p:g}" for p in spec.params)}
        if sol.trajectory is not None:
            write_artifacts(outdir, spec.case_id, sol.trajectory, header)
            save_weights(outdir / f"{spec.case_id}_weights.json", sol.eps, ctx.bmap,
                         lambda_m0=sol.lambda_m0)
        doc = header | asdict(report)
        doc["trace"] = [asdict(e) for e in sol.trace]
        (outdir / f"{spec.case_id}_report.json").write_text(json.dumps(doc, indent=2, default=float))
    return report


def _run_one(args):
    spec, ctx, artifacts_dir, reopt = args
    return run_case(spec, ctx, artifacts_dir, reopt)


def run_sweep(suite: str, ctx: GuidanceContext, artifacts_dir: Optional[Path] = None,
              reoptimize_fuel: bool = False, workers: int = 1, ic_scale: float = IC_SCALE) -> list:
    """Run every case of a suite; failures are recorded, never raised."""
    cases = suite_cases(suite, ic_scale)
    jobs = [(c, ctx, artifacts_dir, reoptimize_fuel) for c in cases]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    reports.sort(key=lambda r: cases.index(next(c for c in cases if c.case_id == r.case_id)))
    if artifacts_dir is not None:
        Path(artifacts_dir).mkdir(parents=True, exist_ok=True)
        rows = [r.row() for r in reports]
        _write_csv(Path(artifacts_dir) / f"{suite}_summary.csv", CaseReport.SUMMARY_COLUMNS, rows,
                   ctx.header() | {"suite": suite})
    return reports
