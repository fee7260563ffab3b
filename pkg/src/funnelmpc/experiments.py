"""Run scenarios and write their CSV outputs.

Layout of an output directory::

    summary.csv                one row per run in the scenario
    trajectory.csv             closed-loop record of the main run
    <run>/trajectory.csv       further runs (sweep entries, reference runs)
    solver_diagnostics.csv     per-step OCP statistics (MPC only)
    ident_report.csv           one row per (t_bar, seed) (identification only)

Nothing time- or machine-dependent is written, so re-runs are byte-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Scenario, with_override
from .costs import FUNNEL, StageCost
from .csvio import write_csv
from .errors import ConfigError, FunnelMPCError, FunnelViolation, GridMismatch, IncomparableScenarios
from .fmpc import open_loop_measure, run_funnel_mpc
from .ident import collect_learning_data, identify, prediction_error
from .simloop import performance_measure, simulate_fc_continuous, simulate_fc_zoh

log = logging.getLogger(__name__)

__all__ = [
    "SUMMARY_COLUMNS",
    "IDENT_COLUMNS",
    "DIAGNOSTIC_COLUMNS",
    "METRICS",
    "trajectory_header",
    "RunResult",
    "run_scenario",
    "compare_scenarios",
    "sweep_scenario",
]

SUMMARY_COLUMNS = [
    "run", "kind", "subject", "tau", "status", "feasible", "min_margin", "first_violation_time",
    "t_final", "u_min", "u_max", "u_range_width", "performance", "performance_weighted",
    "reference_run", "performance_ratio", "range_width_ratio",
    "solver_steps", "solver_iterations_mean", "solver_iterations_max",
    "solver_restorations", "solver_objective_le_warm", "first_open_loop_funnel_cost",
    "pred_error_2norm", "pred_error_supnorm", "error",
]
IDENT_COLUMNS = [
    "t_bar", "seed", "samples", "alpha", "m1", "m2", "k", "d",
    "z0_1", "z0_2", "z0_3", "z0_4", "residual", "best_start",
    "pred_error_2norm", "pred_error_supnorm",
]
DIAGNOSTIC_COLUMNS = [
    "step", "t", "theta", "iterations", "objective", "warm_objective",
    "min_margin", "converged", "restored",
]
METRICS = ("performance", "min_margin", "control_range_width", "coarsest_feasible_tau")


def trajectory_header(r, n_states=4):
    return (["t"] + [f"z{i + 1}" for i in range(n_states)] + ["y", "y_ref"]
            + [f"e_{i}" for i in range(r)] + [f"k_{i}" for i in range(r)]
            + [f"bound_{i}" for i in range(r)] + ["u", "margin"])


def write_trajectory(path, rec):
    r = rec.r
    cols = [rec.t[:, None], rec.z, rec.y[:, :1], rec.y_ref[:, :1], rec.e[:, :, 0], rec.k,
            rec.bound, rec.u[:, :1], rec.margin[:, None]]
    write_csv(path, trajectory_header(r, rec.z.shape[1]), np.hstack(cols).tolist())


@dataclass
class RunResult:
    """Outcome of one scenario: exit status, summary rows and written files."""

    status: int
    rows: list
    out_dir: Path
    files: list = field(default_factory=list)

    @property
    def subject_rows(self):
        return [r for r in self.rows if r.get("subject")]


def _tau_label(tau):
    inv = 1.0 / tau
    if abs(inv - round(inv)) < 1e-9 * inv:
        return f"tau_1_{int(round(inv))}"
    return "tau_" + format(tau, ".6g").replace(".", "p")


def _record_row(run, kind, rec, sc, subject=True):
    try:
        perf = performance_measure(rec, sc.performance_cost, sc.performance_delta, sc.t_end)
    except GridMismatch:
        perf = None
    lo, hi = rec.control_range
    return {
        "run": run,
        "kind": kind,
        "subject": subject,
        "status": "ok" if rec.feasible else "infeasible",
        "feasible": rec.feasible,
        "min_margin": rec.min_margin,
        "first_violation_time": rec.first_violation_time,
        "t_final": float(rec.t[-1]),
        "u_min": lo,
        "u_max": hi,
        "u_range_width": hi - lo,
        "performance": perf,
        "performance_weighted": None if perf is None else perf * sc.performance_delta,
    }


def _error_row(run, kind, exc):
    return {"run": run, "kind": kind, "subject": True, "status": "error", "feasible": False,
            "error": f"{type(exc).__name__}: {exc}"}


def _ratio(a, b):
    if a is None or b is None:
        return None
    if a == b:
        return 1.0
    return a / b if b != 0 else math.inf


def _run_fc_continuous(sc, out, files):
    rec = simulate_fc_continuous(sc.build_plant(), sc.funnel, sc.reference, sc.z0, sc.t_end,
                                 rtol=sc.fc.rtol, atol=sc.fc.atol, dt_out=sc.fc.dt_out)
    write_trajectory(out / "trajectory.csv", rec)
    files.append(out / "trajectory.csv")
    return [_record_row("fc_continuous", "fc_continuous", rec, sc)]


def _run_fc_zoh(sc, out, files):
    rows = []
    plant = sc.build_plant()
    single = len(sc.zoh.tau) == 1
    for tau in sc.zoh.tau:
        rec = simulate_fc_zoh(plant, sc.funnel, sc.reference, sc.z0, sc.t_end, tau,
                              check_points=sc.zoh.check_points)
        label = _tau_label(tau)
        path = out / "trajectory.csv" if single else out / label / "trajectory.csv"
        write_trajectory(path, rec)
        files.append(path)
        row = _record_row(label, "fc_zoh", rec, sc)
        row["tau"] = tau
        rows.append(row)
    return rows


def _run_mpc(sc, out, files):
    plant = sc.build_plant()
    mpc_rec, failure = None, None
    try:
        mpc_rec = run_funnel_mpc(plant, sc.funnel, sc.reference, sc.z0, sc.mpc, sc.cost, sc.t_end)
    except FunnelViolation as exc:
        mpc_rec, failure = exc.record, exc
        if mpc_rec is None:
            raise
    write_trajectory(out / "trajectory.csv", mpc_rec)
    files.append(out / "trajectory.csv")
    diags = mpc_rec.diagnostics
    write_csv(out / "solver_diagnostics.csv", DIAGNOSTIC_COLUMNS, diags)
    files.append(out / "solver_diagnostics.csv")

    row = _record_row("mpc", "mpc", mpc_rec, sc)
    first = mpc_rec.meta.get("first_open_loop")
    its = [d["iterations"] for d in diags]
    row.update({
        "solver_steps": len(diags),
        "solver_iterations_mean": float(np.mean(its)),
        "solver_iterations_max": int(np.max(its)),
        "solver_restorations": int(sum(d["restored"] for d in diags)),
        "solver_objective_le_warm": all(
            not np.isfinite(d["warm_objective"]) or d["objective"] <= d["warm_objective"]
            for d in diags),
        "first_open_loop_funnel_cost": None if first is None else open_loop_measure(
            plant, sc.funnel, sc.reference, first, StageCost(FUNNEL, sc.cost.lam), sc.mpc),
    })
    if failure is not None:
        row["error"] = f"{type(failure).__name__}: {failure}"

    fc = simulate_fc_continuous(plant, sc.funnel, sc.reference, sc.z0, sc.t_end,
                                rtol=sc.fc.rtol, atol=sc.fc.atol, dt_out=sc.fc.dt_out)
    zoh = simulate_fc_zoh(plant, sc.funnel, sc.reference, sc.z0, sc.t_end, sc.mpc.delta,
                          check_points=sc.zoh.check_points)
    ref_rows = []
    for name, rec in (("fc_continuous", fc), ("fc_zoh_" + _tau_label(sc.mpc.delta), zoh)):
        write_trajectory(out / name / "trajectory.csv", rec)
        files.append(out / name / "trajectory.csv")
        ref_rows.append(_record_row(name, name.split("_tau")[0], rec, sc, subject=False))
    row["reference_run"] = "fc_continuous"
    row["performance_ratio"] = _ratio(row["performance"], ref_rows[0]["performance"])
    row["range_width_ratio"] = _ratio(row["u_range_width"], ref_rows[0]["u_range_width"])
    return [row] + ref_rows


def _run_ident(sc, out, files):
    plant = sc.build_plant()
    ident = sc.ident
    learn = simulate_fc_zoh(plant, sc.funnel, sc.reference, sc.z0, max(ident.t_bar), ident.tau,
                            check_points=sc.zoh.check_points)
    write_trajectory(out / "trajectory.csv", learn)
    files.append(out / "trajectory.csv")
    report, rows = [], []
    for tb in ident.t_bar:
        data = collect_learning_data(plant, sc.funnel, sc.reference, sc.z0, ident.tau, tb)
        errs = []
        for s in ident.seeds:
            res = identify(data, ident.box, ident.multistart, seed=[sc.seed, s],
                           max_fev=ident.max_fev)
            e2, einf = prediction_error(res, plant, sc.funnel, sc.reference, ident.t_predict,
                                        ident.tau, z0_true=sc.z0)
            errs.append((e2, einf))
            report.append([tb, s, data.n_samples, *res.theta, *res.z0, res.residual,
                           res.best_start, e2, einf])
        errs = np.array(errs)
        rows.append({
            "run": f"t_bar_{format(tb, '.6g')}", "kind": "ident", "subject": True,
            "status": "ok", "feasible": True,
            "pred_error_2norm": float(np.median(errs[:, 0])),
            "pred_error_supnorm": float(np.median(errs[:, 1])),
        })
    write_csv(out / "ident_report.csv", IDENT_COLUMNS, report)
    files.append(out / "ident_report.csv")
    return rows


_DISPATCH = {
    "fc_continuous": _run_fc_continuous,
    "fc_zoh": _run_fc_zoh,
    "mpc": _run_mpc,
    "ident": _run_ident,
}


def run_scenario(sc: Scenario, out_dir):
    """Run ``sc`` into ``out_dir``; status 0 if every main run stayed feasible, else 2."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    try:
        rows = _DISPATCH[sc.kind](sc, out, files)
    except ConfigError:
        raise
    except (FunnelMPCError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("scenario %s failed: %s", sc.name, exc)
        rows = [_error_row(sc.kind, sc.kind, exc)]
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
    files.append(out / "summary.csv")
    bad = any(r.get("subject") and r["status"] != "ok" for r in rows)
    return RunResult(2 if bad else 0, rows, out, files)


def _metric(result: RunResult, sc: Scenario, metric):
    rows = result.subject_rows
    if metric == "coarsest_feasible_tau":
        taus = []
        for r in rows:
            if r["status"] != "ok":
                continue
            if sc.kind == "fc_zoh":
                taus.append(r["tau"])
            elif sc.kind == "mpc":
                taus.append(sc.mpc.delta)
        return max(taus) if taus else None
    if len(rows) != 1:
        raise IncomparableScenarios(
            f"{sc.name} has {len(rows)} runs; metric {metric!r} needs exactly one")
    key = {"performance": "performance", "min_margin": "min_margin",
           "control_range_width": "u_range_width"}[metric]
    return rows[0].get(key)


COMPARE_COLUMNS = ["metric", "scenario_a", "scenario_b", "value_a", "value_b", "ratio"]


def compare_scenarios(sa, sb, metric, out_root):
    """Run both scenarios and write ``compare.csv`` with their metric ratio ``a / b``."""
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {', '.join(METRICS)}", field="metric")
    if sa.shared_settings() != sb.shared_settings():
        raise IncomparableScenarios(
            f"{sa.name} and {sb.name} differ in plant, funnel, reference, initial state, "
            "horizon or performance settings")
    if sa.kind == "ident" or sb.kind == "ident":
        raise IncomparableScenarios("identification scenarios have no closed-loop metric")
    out_root = Path(out_root)
    ra = run_scenario(sa, out_root / sa.name)
    rb = ra if sb == sa else run_scenario(sb, out_root / sb.name)
    va, vb = _metric(ra, sa, metric), _metric(rb, sb, metric)
    row = [metric, sa.name, sb.name, va, vb, _ratio(va, vb)]
    path = out_root / f"compare_{sa.name}_vs_{sb.name}_{metric}" / "compare.csv"
    write_csv(path, COMPARE_COLUMNS, [row])
    status = max(ra.status, rb.status)
    return status, dict(zip(COMPARE_COLUMNS, row)), path


def sweep_scenario(sc, param, values, out_root):
    """Run ``sc`` once per value of ``section.key``; writes ``sweep_summary.csv``."""
    variants = [(v, with_override(sc, param, v)) for v in values]
    base = Path(out_root) / sc.name / f"sweep_{param}"
    rows, status = [], 0
    for text, variant in variants:
        label = f"{param}={text.strip()}".replace("/", "_")
        res = run_scenario(variant, base / label)
        status = max(status, res.status)
        for r in res.rows:
            rows.append({"param": param, "value": text.strip(), **r})
    path = base / "sweep_summary.csv"
    write_csv(path, ["param", "value"] + SUMMARY_COLUMNS, rows)
    return status, rows, path
