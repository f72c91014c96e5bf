"""Command line: plan, simulate and monitor.

Exit codes: 0 success, 1 error (bad input, missing file, coverage gap),
2 infeasible, 3 solver time limit reached.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .planner import (Plan, PlanningError, PlanningInfeasible, PlanningTimeout, ScenarioError,
                      load_scenario, plan_scenario, validate_plan)
from .sim import (CoverageError, DisturbanceModel, RunLog, SimConfig, SimulationError, monitor_run,
                  run_closed_loop)
from .stl import STLError, parse_formula

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_TIME_LIMIT = 0, 1, 2, 3

log = logging.getLogger("impactplan")


@dataclass
class RunConfig:
    scenario: Path
    out: Path
    mode: str | None = None
    time_limit: float | None = None
    gap: float | None = None
    seed: int = 0
    disturbance: float = 0.0
    lab_emulation: bool = False
    export_lp: bool = False
    extra: dict = field(default_factory=dict)

    def check(self):
        if not self.scenario.is_file():
            raise FileNotFoundError(f"scenario file not found: {self.scenario}")
        self.out.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise PermissionError(f"output directory is not writable: {self.out}")


def _setup_logging():
    level = os.environ.get("IMPACTPLAN_LOG", "WARNING").upper()
    if level.isdigit():
        level = int(level)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _scenario(cfg: RunConfig):
    sc = load_scenario(cfg.scenario)
    if cfg.mode:
        sc = sc.with_mode(cfg.mode)
    if cfg.gap is not None:
        sc.planner = {**sc.planner, "gap": cfg.gap}
    return sc


def cmd_plan(cfg: RunConfig) -> int:
    cfg.check()
    sc = _scenario(cfg)
    lp = cfg.out / "model.lp" if cfg.export_lp else None
    try:
        plan = plan_scenario(sc, time_limit=cfg.time_limit, export_lp=lp)
    except PlanningInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PlanningTimeout as exc:
        print(f"time limit: {exc}", file=sys.stderr)
        return EXIT_TIME_LIMIT
    rep = validate_plan(plan, sc)
    plan.save(cfg.out / "plan.json")
    (cfg.out / "plan_report.json").write_text(json.dumps(rep, indent=1, sort_keys=True, default=float))
    from .plotting import plot_plan
    plot_plan(plan, sc, cfg.out / "plan.png")
    line = f"{sc.name} [{sc.mode}] objective {plan.objective:.6g}, rho {plan.rho:.6g} m"
    if plan.delta is not None:
        line += f", delta {plan.delta:.6g} m/s"
    print(line + f", {len(plan.events)} impacts, status {plan.stats.get('status')}")
    if not rep["ok"]:
        print("warning: plan validation reported violations", file=sys.stderr)
    return EXIT_TIME_LIMIT if plan.stats.get("status") == "time_limit" else EXIT_OK


def cmd_simulate(cfg: RunConfig, plan_path: Path) -> int:
    cfg.check()
    if not plan_path.is_file():
        raise FileNotFoundError(f"plan file not found: {plan_path}")
    sc = _scenario(cfg)
    plan = Plan.load(plan_path)
    sim = SimConfig(lab_emulation=cfg.lab_emulation,
                    disturbance=DisturbanceModel(impact_bound=cfg.disturbance, seed=cfg.seed),
                    **cfg.extra)
    run = run_closed_loop(sc, plan, sim)
    run.save(cfg.out, "run")
    from .plotting import plot_run, plot_velocities
    plot_run(run, sc, cfg.out / "run.png", plan)
    plot_velocities(run, cfg.out / "velocities.png")
    rep = run.report
    if rep.get("failure"):
        print(f"run aborted: {rep['failure']}", file=sys.stderr)
        return EXIT_ERROR
    print(f"executed rho {rep['rho']:.6g} m, {len(rep['impacts'])} impacts, "
          f"{len(rep['missed_impacts'])} missed, {rep['replans']} replans")
    if "tube" in rep:
        print(f"tube contained: {str(rep['tube']['contained']).lower()} "
              f"(max excess {rep['tube']['max_excess']:.4g} m)")
    return EXIT_OK


def cmd_monitor(log_path: Path, scenario: Path, spec_text: str | None = None) -> float:
    """Robustness of a logged run against the scenario spec (or `spec_text`
    over the scenario's regions)."""
    if not scenario.is_file():
        raise FileNotFoundError(f"scenario file not found: {scenario}")
    sc = load_scenario(scenario)
    runlog = RunLog.load(log_path)
    spec = sc.spec if spec_text is None else parse_formula(spec_text, sc.regions, runlog.bodies())
    rep = monitor_run(runlog, spec)
    return rep["rho"]


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impactplan", description="Impact-based object transportation planner")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("scenario", type=Path)
        p.add_argument("--mode", choices=["spatial", "impact-robust"], default=None)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("plan", help="solve the planning problem of a scenario")
    common(p)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--gap", type=float, default=None)
    p.add_argument("--export-lp", action="store_true", help="write the model to OUT/model.lp")

    s = sub.add_parser("simulate", help="execute a plan in closed loop")
    common(s)
    s.add_argument("plan", type=Path)
    s.add_argument("--disturbance", type=float, default=0.0,
                   help="bound on the uniform post-impact object velocity perturbation [m/s]")
    s.add_argument("--lab-emulation", action="store_true", help="velocity-keeping control of the objects")
    s.add_argument("--radius", type=float, default=None, help="override all body radii [m]")
    s.add_argument("--no-replan", action="store_true")

    m = sub.add_parser("monitor", help="robustness of a logged run")
    m.add_argument("log", type=Path, help="run CSV")
    m.add_argument("--scenario", type=Path, required=True)
    m.add_argument("--spec", default=None, help="formula text; default is the scenario spec")
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "monitor":
            rho = cmd_monitor(args.log, args.scenario, args.spec)
            print(f"{rho:.10g}")
            return EXIT_OK
        cfg = RunConfig(args.scenario, args.out, mode=args.mode, seed=args.seed)
        if args.cmd == "plan":
            cfg.time_limit, cfg.gap, cfg.export_lp = args.time_limit, args.gap, args.export_lp
            return cmd_plan(cfg)
        cfg.disturbance, cfg.lab_emulation = args.disturbance, args.lab_emulation
        cfg.extra = {"radius": args.radius, "replan": not args.no_replan}
        return cmd_simulate(cfg, args.plan)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ScenarioError, STLError, CoverageError, SimulationError, PlanningError, PermissionError,
            ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
