"""Command-line front end: offline solve, semionline plan, batch, check.

Exit codes are a stable contract: 0 success/feasible, 1 configuration error,
2 solver failure, 3 infeasible result (artifacts are still written).  All
randomness flows from the configured seed, and batch runs are reproducible
end to end regardless of the worker count.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cmaes, configfile, data_file, planner, postprocess, sqp
from . import dynamics as dyn
from . import geometry as geo
from . import transcription as tr

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INFEASIBLE = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    ship_path: Path
    polygon_path: Path
    footprint_path: Path
    scenarios_path: Path
    offline_path: Path | None
    n_segments: int
    guess: str
    seed: int
    output_dir: Path
    sqp_settings: sqp.SqpSettings
    offline_evaluations: int
    offline_segments: int

    @property
    def ship(self) -> dyn.ShipParams:
        return dyn.load_ship_params(self.ship_path)

    @property
    def polygon(self) -> geo.HarborPolygon:
        return geo.load_polygon(self.polygon_path)

    @property
    def footprint(self) -> geo.ShipFootprint:
        return geo.load_footprint(self.footprint_path)

    def scenario_table(self):
        return planner.load_scenarios(self.scenarios_path)


def load_run_config(path: str | None, out_override: str | None = None,
                    seed_override: int | None = None) -> RunConfig:
    source = Path(path) if path else data_file("default_run.cfg")
    if not source.exists():
        raise CliError(f"config file not found: {source}")
    data = configfile.read_file(source)
    run = configfile.require(data, "run", dict, str(source))

    def resolve(key, required=True):
        if key not in run:
            if required:
                raise CliError(f"{source}: missing run.{key}")
            return None
        name = run[key]
        candidate = Path(name)
        if not candidate.is_absolute() and not candidate.exists():
            candidate = source.parent / name
        if not candidate.exists():
            bundled = data_file(Path(name).name)
            if bundled.exists():
                return bundled
            raise CliError(f"{source}: run.{key} file not found: {name}")
        return candidate

    sqp_over = data.get("sqp", {})
    valid = {f for f in sqp.SqpSettings.__dataclass_fields__}
    unknown = set(sqp_over) - valid
    if unknown:
        raise CliError(f"{source}: unknown sqp settings {sorted(unknown)}")
    offline = data.get("offline", {})
    return RunConfig(
        ship_path=resolve("ship"),
        polygon_path=resolve("polygon"),
        footprint_path=resolve("footprint"),
        scenarios_path=resolve("scenarios"),
        offline_path=resolve("offline_solution", required=False),
        n_segments=int(run.get("n_segments", 20)),
        guess=str(run.get("guess", "warm-offline")),
        seed=int(seed_override if seed_override is not None else run.get("seed", 0)),
        output_dir=Path(out_override or run.get("output_dir", "berthplan-out")),
        sqp_settings=sqp.SqpSettings(**sqp_over),
        offline_evaluations=int(offline.get("max_evaluations", 80_000)),
        offline_segments=int(offline.get("n_segments", 20)),
    )


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (configfile.ConfigError, geo.GeometryError, planner.PlannerError,
            tr.TranscriptionError, dyn.DynamicsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sqp.SqpError, cmaes.CmaesError, dyn.IntegrationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="berthplan",
        description="Collision-free docking trajectory planning for a model-scale ship.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file (default: bundled)")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--seed", type=int, help="random seed override")

    p = sub.add_parser("offline", help="run the offline planner, save its solution")
    common(p)
    p.add_argument("--evaluations", type=int, help="search budget override")
    p.set_defaults(handler=cmd_offline)

    p = sub.add_parser("plan", help="plan one scenario with the semionline planner")
    common(p)
    p.add_argument("--scenario", required=True, help="scenario name from the table")
    p.add_argument("--guess", choices=("warm", "cold"), default="warm")
    p.add_argument("--warm-start", help="offline solution file (default from config)")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("batch", help="plan every scenario warm and cold, compare")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(handler=cmd_batch)

    p = sub.add_parser("check", help="independently verify a written solution file")
    common(p)
    p.add_argument("solution", help="solution file written by the plan command")
    p.set_defaults(handler=cmd_check)
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_offline(args) -> int:
    config = load_run_config(args.config, args.out, args.seed)
    x_init, x_final, _ = config.scenario_table()
    evaluations = args.evaluations or config.offline_evaluations
    settings = planner.offline_search_settings(max_evaluations=evaluations, seed=config.seed)
    solution = planner.solve_offline(
        x_init, tr.DockingTarget(x_final), config.ship, config.polygon,
        config.footprint, settings, n_segments=config.offline_segments)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out = config.output_dir / "offline_solution.cfg"
    planner.save_offline_solution(out, solution)
    status = "collision-free" if solution.collision_free else "WITH COLLISION (flagged infeasible)"
    print(f"offline solution: tf={solution.tf_off:.1f} s, objective={solution.objective:.4g}, "
          f"{status}, {solution.evaluations} evaluations")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_plan(args) -> int:
    config = load_run_config(args.config, args.out, args.seed)
    guess_kind = "warm-offline" if args.guess == "warm" else "cold"
    scenario = _find_scenario(config, args.scenario)
    offline = _load_offline(config, args.warm_start) if guess_kind == "warm-offline" else None
    outcome = _plan_one(config, scenario, guess_kind, offline)
    report = _write_artifacts(config, outcome)
    print(f"{scenario.name} ({guess_kind}): tf={outcome.result.x[0]:.1f} s, "
          f"feasible={outcome.result.feasible}, max violation={outcome.result.max_violation:.2e}, "
          f"{outcome.result.iterations} iterations, {outcome.result.wall_time:.3f} s")
    print(report.summary())
    return EXIT_OK if outcome.result.feasible else EXIT_INFEASIBLE


def cmd_batch(args) -> int:
    config = load_run_config(args.config, args.out, args.seed)
    _, _, scenarios = config.scenario_table()
    offline = _load_offline(config, None)
    jobs = max(1, args.jobs)
    tasks = [(config, scenario, offline) for scenario in scenarios]
    if jobs == 1:
        outcomes = [_batch_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_batch_worker, tasks))
    rows = [postprocess.ComparisonRow.from_results(warm, cold) for warm, cold in outcomes]
    table = postprocess.emit_report(rows)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(config.output_dir / "comparison.txt", table)
    _atomic_write(config.output_dir / "comparison.csv", postprocess.report_csv(rows))
    print(table, end="")
    print(f"wrote {config.output_dir}/comparison.txt and comparison.csv")
    return EXIT_OK


def cmd_check(args) -> int:
    config = load_run_config(args.config, args.out, args.seed)
    path = Path(args.solution)
    try:
        data = configfile.read_file(path)
        body = configfile.require(data, "solution", dict, str(path))
        scenario = planner.Scenario(
            configfile.require(body, "scenario", str, str(path)),
            np.asarray(configfile.require(body, "multipliers", list, str(path)), dtype=float),
            dyn.WindCondition(
                configfile.require(body, "wind_speed_mps", float, str(path)),
                math.radians(configfile.require(body, "wind_from_deg", float, str(path)))))
        n_segments = configfile.require(body, "n_segments", int, str(path))
        decision = np.asarray(configfile.require(body, "decision_vector", list, str(path)), dtype=float)
    except (configfile.ConfigError, planner.PlannerError) as exc:
        raise CliError(f"cannot parse solution file: {exc}") from exc

    x_init, x_final, _ = config.scenario_table()
    nlp = tr.build_nlp(config.ship, scenario.wind, config.polygon, config.footprint,
                       scenario.initial_state(x_init), tr.DockingTarget(x_final),
                       tr.ControlLimits(), n_segments)
    if decision.shape != (nlp.n_variables,):
        raise CliError(f"solution has {decision.size} variables, problem needs {nlp.n_variables}")
    report = postprocess.verify_by_resimulation(nlp, decision)
    print(report.summary())
    if report.feasible:
        return EXIT_OK
    print(f"worst family: {report.worst_family} "
          f"({report.family_violations[report.worst_family]:.2e})", file=sys.stderr)
    return EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _find_scenario(config: RunConfig, name: str) -> planner.Scenario:
    _, _, scenarios = config.scenario_table()
    for scenario in scenarios:
        if scenario.name == name:
            return scenario
    known = ", ".join(s.name for s in scenarios)
    raise CliError(f"unknown scenario {name!r}; known scenarios: {known}")


def _load_offline(config: RunConfig, override: str | None) -> planner.OfflineSolution:
    path = Path(override) if override else config.offline_path
    if path is None:
        raise CliError("no offline solution configured; run 'berthplan offline' first "
                       "or pass --warm-start")
    if not path.exists():
        raise CliError(f"offline solution file not found: {path}")
    return planner.load_offline_solution(path)


def _plan_one(config: RunConfig, scenario: planner.Scenario, guess_kind: str,
              offline) -> planner.PlanResult:
    x_init, x_final, _ = config.scenario_table()
    request = planner.PlanRequest(scenario=scenario, guess=guess_kind,
                                  n_segments=config.n_segments)
    return planner.plan(request, config.ship, config.polygon, config.footprint,
                        x_init, tr.DockingTarget(x_final), offline=offline,
                        settings=config.sqp_settings)


def _batch_worker(task):
    config, scenario, offline = task
    warm = _plan_one(config, scenario, "warm-offline", offline)
    cold = _plan_one(config, scenario, "cold", None)
    _write_artifacts(config, warm)
    _write_artifacts(config, cold)
    return warm, cold


def _write_artifacts(config: RunConfig, outcome: planner.PlanResult) -> postprocess.FeasibilityReport:
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{outcome.scenario.name}_{'warm' if outcome.guess_kind != 'cold' else 'cold'}"
    report = postprocess.verify_by_resimulation(outcome.nlp, outcome.result.x)
    trajectory = postprocess.ContinuousTrajectory.from_solution(outcome.nlp, outcome.result.x)

    configfile.write_file(out / f"{stem}.solution.cfg", {
        "schema": "berthplan/solution/1",
        "solution": {
            "scenario": outcome.scenario.name,
            "multipliers": outcome.scenario.multipliers.tolist(),
            "wind_speed_mps": outcome.scenario.wind.v,
            "wind_from_deg": math.degrees(outcome.scenario.wind.chi),
            "guess": outcome.guess_kind,
            "n_segments": outcome.nlp.grid.n_segments,
            "feasible": outcome.result.feasible,
            "converged": outcome.result.converged,
            "max_violation": outcome.result.max_violation,
            "iterations": outcome.result.iterations,
            "wall_time_s": outcome.result.wall_time,
            "objective": outcome.result.objective,
            "decision_vector": outcome.result.x.tolist(),
        },
    }, header="Semionline docking solution.")
    configfile.write_file(out / f"{stem}.report.cfg", {
        "schema": "berthplan/report/1",
        "feasibility": {
            "feasible": report.feasible,
            "bounds_violation": report.bounds_violation,
            "resim_terminal_gap": report.resim_terminal_gap.tolist(),
            "resim_collision_max": report.resim_collision_max,
            **{f"max_{k}": v for k, v in report.family_violations.items()},
        },
    }, header="Independent feasibility verification.")
    _atomic_write(out / f"{stem}.trajectory.csv", postprocess.trajectory_csv(trajectory))
    _atomic_write(out / f"{stem}.svg", postprocess.plan_view_svg(
        outcome.nlp.polygon, outcome.nlp.footprint, trajectory))
    return report


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


if __name__ == "__main__":
    sys.exit(main())
