"""Scenario-driven command-line front end.

Commands:
    contraq run <scenario.json> [--out DIR] [--dt X] [--seed N]
    contraq run --all [--out DIR]
    contraq list
    contraq bounds <scenario.json> [--out DIR]

Outputs per scenario: <name>_traj.csv (time series), <name>_bounds.json
(contraction bounds, flow scenarios), <name>_paths.csv (geodesic tables),
<name>_report.json (check verdicts). Exit codes: 0 all checks pass,
2 a check failed, 3 IO or schema error. CONTRAQ_OUT sets the default
output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, collisions, geodesics
from .constraints import InfeasibleState
from .flow import SimConfig, Trajectory, simulate
from .geometry import StateVector
from .scenario import Scenario, SchemaError, load_scenario

_FMT = "%.17g"


@dataclass
class RunReport:
    scenario: str
    kind: str
    outputs: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    duration_s: float = 0.0

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "kind": self.kind,
                "outputs": self.outputs, "checks": self.checks,
                "duration_s": self.duration_s, "all_passed": self.all_passed}


def list_scenarios() -> list:
    """Names of the bundled scenario files."""
    pkg = resources.files("contraq") / "scenarios"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))


def bundled_scenario_path(name: str) -> Path:
    pkg = resources.files("contraq") / "scenarios" / f"{name}.json"
    if not pkg.is_file():
        raise FileNotFoundError(f"no bundled scenario named '{name}'")
    return Path(str(pkg))


def _fmt(v) -> str:
    return _FMT % float(v)


def _write_traj_csv(path: Path, traj: Trajectory):
    n = traj.samples[0].x.size
    if traj.n_q is not None:
        d = traj.n_q
        cols = [f"x{i+1}" for i in range(d)] + [f"p{i+1}" for i in range(d)]
    else:
        cols = [f"x{i+1}" for i in range(n)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t," + ",".join(cols) + ",event\n")
        for s in traj.samples:
            ev = s.event.kind if s.event is not None else ""
            fh.write(_fmt(s.t) + "," + ",".join(_fmt(v) for v in s.x) + f",{ev}\n")


def _write_json(path: Path, doc: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_paths_csv(path: Path, rows: list, paths: list):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("length,travel_time,action,action_difference_vs_shortest,corners\n")
        for row, p in zip(rows, paths):
            corners = ";".join(f"{_fmt(c[0])}|{_fmt(c[1])}" for c in p.corners)
            fh.write(",".join(_fmt(row[k]) for k in
                              ("length", "travel_time", "action",
                               "action_difference_vs_shortest")) + f",{corners}\n")


def _bounds_along(scn: Scenario, traj: Trajectory) -> dict:
    ts, lmins, lmaxs = [], [], []
    for s in traj.grid_samples():
        b = analysis.contraction_bounds(scn.metric, scn.f, scn.constraints,
                                        StateVector(s.x, s.t))
        ts.append(s.t)
        lmins.append(b.lambda_min)
        lmaxs.append(b.lambda_max)
    return {"lambda_min": min(lmins), "lambda_max": max(lmaxs),
            "samples": {"t": ts, "lambda_min": lmins, "lambda_max": lmaxs}}


def _run_flow(scn: Scenario, out: Path, report: RunReport, dt_override, rng):
    config = scn.config if dt_override is None else SimConfig(
        dt_max=dt_override, event_tol=scn.config.event_tol, t_end=scn.config.t_end)
    traj = simulate(scn.metric, scn.f, scn.constraints, scn.x0, config)
    traj_path = out / f"{scn.name}_traj.csv"
    _write_traj_csv(traj_path, traj)
    report.outputs.append(traj_path.name)

    if "feasibility" in scn.checks:
        tol = float(scn.checks["feasibility"].get("tol", 1e-7))
        worst = max(max(scn.constraints.values(s.x, s.t), default=-np.inf)
                    for s in traj.samples) if len(scn.constraints) else -np.inf
        report.checks["feasibility"] = {
            "passed": bool(worst <= tol),
            "detail": f"max g = {worst:.3e} (tol {tol:.1e})"}

    bounds_doc = None
    if "bounds" in scn.checks or "empirical_rate" in scn.checks:
        bounds_doc = _bounds_along(scn, traj)
    if "bounds" in scn.checks:
        bpath = out / f"{scn.name}_bounds.json"
        _write_json(bpath, bounds_doc)
        report.outputs.append(bpath.name)
        report.checks["bounds"] = {
            "passed": True,
            "detail": f"lambda in [{bounds_doc['lambda_min']:.6g}, "
                      f"{bounds_doc['lambda_max']:.6g}]"}

    if "empirical_rate" in scn.checks:
        cfg = scn.checks["empirical_rate"]
        band = float(cfg.get("band", 0.05))
        eps = float(cfg.get("epsilon", 1e-5))
        if "offset" in cfg:
            offset = np.asarray(cfg["offset"], dtype=float)
        else:
            u = rng.normal(size=scn.x0.n)
            offset = eps * u / np.linalg.norm(u)
        rate = analysis.empirical_rate(scn.metric, scn.f, scn.constraints,
                                       scn.x0, eps, config, offset=offset)
        times = np.array(bounds_doc["samples"]["t"])
        lmin = np.array(bounds_doc["samples"]["lambda_min"])
        lmax = np.array(bounds_doc["samples"]["lambda_max"])
        skip = 3.0 * config.dt_max
        ev_times = [e.time for e in traj.events]
        worst = 0.0
        for t_k, r_k in rate:
            if any(abs(t_k - te) <= skip for te in ev_times):
                continue
            i = int(np.argmin(np.abs(times - t_k)))
            low, high = lmin[i] - band, lmax[i] + band
            miss = max(low - r_k, r_k - high, 0.0)
            worst = max(worst, miss)
        report.checks["empirical_rate"] = {
            "passed": bool(worst == 0.0),
            "detail": f"worst envelope miss {worst:.3e} (band {band})"}


def _run_hamiltonian(scn: Scenario, out: Path, report: RunReport, dt_override):
    config = scn.config if dt_override is None else SimConfig(
        dt_max=dt_override, event_tol=scn.config.event_tol, t_end=scn.config.t_end)
    step = collisions.simulate_step_form(scn.hamiltonian, scn.constraints,
                                         scn.phase0, scn.restitution, config)
    traj_path = out / f"{scn.name}_traj.csv"
    _write_traj_csv(traj_path, step)
    report.outputs.append(traj_path.name)

    if "equivalence" in scn.checks:
        tol = float(scn.checks["equivalence"].get("tol", 1e-6))
        dirac = collisions.simulate_dirac_form(scn.hamiltonian, scn.constraints,
                                               scn.phase0, scn.restitution, config)
        rep = collisions.equivalence_check(step, dirac, tol)
        report.checks["equivalence"] = {
            "passed": rep.passed,
            "detail": f"max position deviation {rep.max_deviation:.3e} "
                      f"(tol {tol:.1e}, {rep.events_step} collisions)"}

    coll_events = [e for e in step.events if getattr(e, "kind", "") == "collision"]
    if "restitution" in scn.checks:
        tol = float(scn.checks["restitution"].get("tol", 1e-8))
        worst = max((abs(e.gdot_post + scn.restitution * e.gdot_pre)
                     / max(1.0, abs(e.gdot_pre)) for e in coll_events), default=0.0)
        report.checks["restitution"] = {
            "passed": bool(worst <= tol),
            "detail": f"worst |gdot_post + e*gdot_pre| = {worst:.3e} "
                      f"over {len(coll_events)} events"}

    if "energy" in scn.checks:
        tol = float(scn.checks["energy"].get("tol", 1e-8))
        worst = 0.0
        for e in coll_events:
            t_pre = scn.hamiltonian.kinetic(e.post_state.q, e.pre_state.p)
            t_post = scn.hamiltonian.kinetic(e.post_state.q, e.post_state.p)
            worst = max(worst, abs(t_post - t_pre) / max(1.0, abs(t_pre)))
        report.checks["energy"] = {
            "passed": bool(worst <= tol),
            "detail": f"worst kinetic-energy jump {worst:.3e} "
                      f"over {len(coll_events)} events"}


def _run_geodesic(scn: Scenario, out: Path, report: RunReport):
    paths = geodesics.shortest_paths(scn.world, scn.k)
    rows = geodesics.path_table(paths, scn.speed)
    ppath = out / f"{scn.name}_paths.csv"
    _write_paths_csv(ppath, rows, paths)
    report.outputs.append(ppath.name)

    if "paths" in scn.checks:
        cfg = scn.checks["paths"]
        ok, notes = True, []
        if "min_count" in cfg and len(paths) < int(cfg["min_count"]):
            ok = False
            notes.append(f"only {len(paths)} paths found")
        if "expect_min_paths" in cfg:
            rtol = float(cfg.get("equal_length_rtol", 1e-12))
            lmin = paths[0].length
            n_min = sum(1 for p in paths if (p.length - lmin) <= rtol * lmin)
            if n_min != int(cfg["expect_min_paths"]):
                ok = False
            notes.append(f"{n_min} minimal paths (expected {cfg['expect_min_paths']})")
        if cfg.get("strict_ordering"):
            lens = [p.length for p in paths]
            strict = all(b > a * (1 + 1e-12) for a, b in zip(lens, lens[1:]))
            if not strict:
                ok = False
            notes.append("strictly ordered" if strict else "lengths not strictly ordered")
        report.checks["paths"] = {"passed": ok, "detail": "; ".join(notes) or "ok"}


def run(scn: Scenario, out_dir, dt_override=None, seed=None) -> RunReport:
    """Execute one scenario, write its outputs, and collect check verdicts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(scenario=scn.name, kind=scn.kind)
    rng = np.random.default_rng(0 if seed is None else seed)
    start = time.perf_counter()
    if scn.kind == "flow":
        _run_flow(scn, out, report, dt_override, rng)
    elif scn.kind == "hamiltonian":
        _run_hamiltonian(scn, out, report, dt_override)
    else:
        _run_geodesic(scn, out, report)
    report.duration_s = time.perf_counter() - start
    rpath = out / f"{scn.name}_report.json"
    _write_json(rpath, report.to_dict())
    report.outputs.append(rpath.name)
    return report


def _default_out() -> str:
    return os.environ.get("CONTRAQ_OUT", "contraq_out")


def _resolve_scenario(arg: str) -> Scenario:
    p = Path(arg)
    if not p.exists() and not arg.endswith(".json"):
        p = bundled_scenario_path(arg)
    return load_scenario(p)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="contraq",
                                     description="constrained-dynamics scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file or all bundled ones")
    p_run.add_argument("scenario", nargs="?", help="scenario JSON path or bundled name")
    p_run.add_argument("--all", action="store_true", help="run every bundled scenario")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--dt", type=float, default=None, help="override dt_max")
    p_run.add_argument("--seed", type=int, default=None, help="seed for randomized checks")

    sub.add_parser("list", help="list bundled scenarios")

    p_b = sub.add_parser("bounds", help="contraction bounds along a flow scenario")
    p_b.add_argument("scenario", help="scenario JSON path or bundled name")
    p_b.add_argument("--out", default=None, help="output directory")

    args = parser.parse_args(argv)

    if args.command == "list":
        for name in list_scenarios():
            print(name)
        return 0

    out_dir = args.out or _default_out()
    try:
        if args.command == "bounds":
            scn = _resolve_scenario(args.scenario)
            if scn.kind != "flow":
                print(f"error: 'bounds' needs a flow scenario, got '{scn.kind}'",
                      file=sys.stderr)
                return 3
            traj = simulate(scn.metric, scn.f, scn.constraints, scn.x0, scn.config)
            doc = _bounds_along(scn, traj)
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            bpath = out / f"{scn.name}_bounds.json"
            _write_json(bpath, doc)
            print(f"{scn.name}: lambda_min {doc['lambda_min']:.6g} "
                  f"lambda_max {doc['lambda_max']:.6g} -> {bpath}")
            return 0

        if args.all:
            names = list_scenarios()
            scns = [load_scenario(bundled_scenario_path(n)) for n in names]
        elif args.scenario:
            scns = [_resolve_scenario(args.scenario)]
        else:
            print("error: give a scenario or --all", file=sys.stderr)
            return 3

        worst = 0
        for scn in scns:
            report = run(scn, out_dir, dt_override=args.dt, seed=args.seed)
            status = "PASS" if report.all_passed else "FAIL"
            print(f"[{status}] {scn.name} ({report.duration_s:.2f}s)")
            for cname, c in report.checks.items():
                mark = "ok" if c["passed"] else "FAILED"
                print(f"    {cname}: {mark} - {c['detail']}")
            if not report.all_passed:
                worst = max(worst, 2)
        return worst
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, InfeasibleState) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
