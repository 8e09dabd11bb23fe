"""Offline and semionline docking planners.

The offline planner searches a shooting parameterization (final time plus one
piecewise-constant rudder/propeller command per segment) with CMA-ES, scoring
candidates by explicit integration of the dynamics: terminal deviation times
integrated deviation, plus a penalty for any footprint point leaving the
harbor polygon.  Its solution seeds the semionline planner, which transcribes
the docking problem on a collocation grid with the wind frozen at plan time
and polishes the guess with SQP.  A cold start (straight-line states,
half-capacity controls) is the comparison baseline.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cmaes, configfile, sqp
from . import dynamics as dyn
from . import geometry as geo
from . import transcription as tr

#: Final-time search box for the offline planner (s).
OFFLINE_TF_BOUNDS = (60.0, 400.0)

#: Weight of one exterior footprint point in the offline fitness; any
#: collision dwarfs the deviation product at a good solution.
COLLISION_PENALTY_WEIGHT = 40.0


class PlannerError(ValueError):
    """Bad scenario data or an unusable planning request."""


@dataclass(frozen=True)
class Scenario:
    """Initial-state multipliers and the frozen wind of one evaluation case."""

    name: str
    multipliers: np.ndarray
    wind: dyn.WindCondition

    def __post_init__(self):
        d = np.asarray(self.multipliers, dtype=float)
        if d.shape != (6,) or not np.all(np.isfinite(d)):
            raise PlannerError(f"scenario {self.name}: multipliers must be a finite 6-vector")
        d.flags.writeable = False
        object.__setattr__(self, "multipliers", d)

    def initial_state(self, x_reference: np.ndarray) -> np.ndarray:
        return self.multipliers * np.asarray(x_reference, dtype=float)

    @property
    def norm_l(self) -> float:
        return norm_l(self.multipliers)


@dataclass
class OfflineSolution:
    """Best shooting solution found by the offline planner."""

    tf_off: float
    segment_controls: np.ndarray      # (n_segments, 2): rudder deg, prop 1/s
    times: np.ndarray                 # dense simulation times
    states: np.ndarray                # dense simulated states, (len(times), 6)
    x_init: np.ndarray
    objective: float
    collision_free: bool
    evaluations: int = 0

    @property
    def achieved_final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class PlanRequest:
    scenario: Scenario
    guess: str = "warm-offline"       # warm-offline | cold | warm-solution
    n_segments: int = 20
    limits: tr.ControlLimits = field(default_factory=tr.ControlLimits)
    tf_cold: float = 160.0

    def __post_init__(self):
        if self.guess not in ("warm-offline", "cold", "warm-solution"):
            raise PlannerError(f"unknown guess kind {self.guess!r}")


@dataclass
class PlanResult:
    scenario: Scenario
    guess_kind: str
    nlp: tr.NlpProblem
    guess_vector: np.ndarray
    result: sqp.SqpResult


def norm_l(multipliers) -> float:
    """Euclidean distance of the multiplier vector from all-ones."""
    d = np.asarray(multipliers, dtype=float)
    if d.shape != (6,):
        raise PlannerError(f"multipliers must have 6 entries, got shape {d.shape}")
    return float(np.linalg.norm(d - 1.0))


def speedup(t_cold: float, t_warm: float) -> float:
    """Relative wall-time saving of the warm start, in percent."""
    if t_cold <= 0.0:
        raise PlannerError(f"cold-start time must be > 0, got {t_cold}")
    return (t_cold - t_warm) / t_cold * 100.0


# ---------------------------------------------------------------------------
# offline planner
# ---------------------------------------------------------------------------

def solve_offline(x_init, target: tr.DockingTarget, params: dyn.ShipParams,
                  polygon: geo.HarborPolygon, footprint: geo.ShipFootprint,
                  settings: cmaes.CmaesSettings | None = None,
                  wind: dyn.WindCondition | None = None,
                  limits: tr.ControlLimits = tr.ControlLimits(),
                  n_segments: int = 20,
                  steps_per_segment: int = 8,
                  collision_samples_per_segment: int = 2) -> OfflineSolution:
    """Global search over piecewise-constant controls and the final time."""
    x_init = np.asarray(x_init, dtype=float)
    wind = wind or dyn.WindCondition.calm()
    settings = settings or offline_search_settings()
    lo = np.array([OFFLINE_TF_BOUNDS[0]] + [-limits.delta_max] * n_segments
                  + [-limits.n_max] * n_segments)
    hi = np.array([OFFLINE_TF_BOUNDS[1]] + [limits.delta_max] * n_segments
                  + [limits.n_max] * n_segments)

    fitness = _ShootingFitness(x_init, target.x_fin, params, wind, polygon, footprint,
                               n_segments, steps_per_segment, collision_samples_per_segment)
    # search in the unit box so one step size fits the heterogeneous scales,
    # then polish the best basin with a small step size
    unit_fitness = lambda unit: fitness(lo + unit * (hi - lo))
    unit_bounds = [(0.0, 1.0)] * lo.size
    explore_budget = int(0.7 * settings.max_evaluations)
    explore = cmaes.minimize(unit_fitness, unit_bounds,
                             _with_budget(settings, explore_budget), vectorized=True)
    polish_budget = settings.max_evaluations - explore.evaluations
    polish_settings = cmaes.CmaesSettings(
        population=settings.population, sigma0=0.03, max_evaluations=max(polish_budget, 100),
        target_objective=settings.target_objective, restarts=0,
        seed=settings.seed + 1, stall_generations=settings.stall_generations)
    polish = cmaes.minimize(unit_fitness, unit_bounds, polish_settings,
                            vectorized=True, initial_mean=explore.best)
    winner = polish if polish.best_objective < explore.best_objective else explore
    best = lo + winner.best * (hi - lo)
    total_evals = explore.evaluations + polish.evaluations

    tf_off = float(best[0])
    controls = np.column_stack([best[1:1 + n_segments], best[1 + n_segments:]])
    times, states = fitness.simulate_single(best)
    dense_residuals = geo.collision_residuals_batch(footprint, states[:, (0, 2, 4)], polygon)
    collision_ok = bool(np.max(np.abs(dense_residuals)) <= 1e-9)
    return OfflineSolution(
        tf_off=tf_off,
        segment_controls=controls,
        times=times,
        states=states,
        x_init=x_init.copy(),
        objective=float(winner.best_objective),
        collision_free=collision_ok,
        evaluations=total_evals,
    )


def _with_budget(settings: cmaes.CmaesSettings, budget: int) -> cmaes.CmaesSettings:
    return cmaes.CmaesSettings(
        population=settings.population, sigma0=settings.sigma0,
        max_evaluations=budget, target_objective=settings.target_objective,
        restarts=settings.restarts, seed=settings.seed,
        resample_tries=settings.resample_tries, bound_penalty=settings.bound_penalty,
        stall_generations=settings.stall_generations)


def offline_search_settings(max_evaluations: int = 200_000, seed: int = 0) -> cmaes.CmaesSettings:
    """Defaults sized for the 41-variable shooting search (unit box)."""
    return cmaes.CmaesSettings(max_evaluations=max_evaluations, sigma0=0.3,
                               restarts=3, seed=seed, stall_generations=120)


class _ShootingFitness:
    """Vectorized rollout and scoring of shooting candidates."""

    def __init__(self, x_init, x_fin, params, wind, polygon, footprint,
                 n_segments, steps_per_segment, collision_samples_per_segment):
        self.x_init = x_init
        self.x_fin = x_fin
        self.params = params
        self.wind = wind
        self.polygon = polygon
        self.footprint = footprint
        self.n_segments = n_segments
        self.steps_per_segment = steps_per_segment
        self.n_steps = n_segments * steps_per_segment
        stride = max(1, steps_per_segment // collision_samples_per_segment)
        self.collision_steps = np.arange(0, self.n_steps + 1, stride)

    def __call__(self, candidates: np.ndarray) -> np.ndarray:
        trajectories, dt = self._rollout(candidates)
        deviation = trajectories - self.x_fin
        sq = np.sum(deviation**2, axis=2)                       # (pop, steps+1)
        terminal = sq[:, -1]
        integral = np.trapezoid(sq, dx=1.0, axis=1) * dt[:, 0]  # per-candidate dt
        return terminal * integral + self.collision_penalty(trajectories)

    def collision_penalty(self, trajectories: np.ndarray) -> np.ndarray:
        """Winding-residual penalty, distance-shaped for exterior points.

        The raw squared residual is a plateau (0 inside, (2*pi)^2 outside)
        that gives the stochastic search no pull toward the free region, so
        each offending point's term grows with its exterior distance.
        """
        poses = trajectories[:, self.collision_steps][:, :, (0, 2, 4)]
        residuals = geo.collision_residuals_batch(self.footprint, poses, self.polygon)
        base = np.minimum(residuals, 0.0)**2
        base[base < 1e-12] = 0.0  # float dust from interior winding sums
        if not np.any(base):
            return np.zeros(trajectories.shape[0])
        world = geo.footprint_world_batch(self.footprint, poses)
        shaped = np.zeros_like(base)
        offenders = np.argwhere(base > 0.0)
        for cand, step, point in offenders:
            _, dist = geo.nearest_boundary_point(world[cand, step, point], self.polygon)
            shaped[cand, step, point] = base[cand, step, point] * (1.0 + dist)
        return COLLISION_PENALTY_WEIGHT * np.sum(shaped, axis=(1, 2))

    def simulate_single(self, candidate: np.ndarray):
        trajectory, dt = self._rollout(candidate[None, :])
        times = np.arange(self.n_steps + 1) * float(dt[0, 0])
        return times, trajectory[0]

    def _rollout(self, candidates: np.ndarray):
        pop = candidates.shape[0]
        tf = candidates[:, 0:1]
        deltas = candidates[:, 1:1 + self.n_segments]
        rates = candidates[:, 1 + self.n_segments:]
        dt = tf / self.n_steps                                   # (pop, 1)
        states = np.empty((pop, self.n_steps + 1, 6))
        states[:, 0] = self.x_init
        x = np.repeat(self.x_init[None, :], pop, axis=0)
        for step in range(self.n_steps):
            seg = step // self.steps_per_segment
            d, n = deltas[:, seg], rates[:, seg]
            x = _rk4_batch(x, d, n, dt, self.wind, self.params)
            states[:, step + 1] = x
        return states, dt

def _rk4_batch(x, delta, n, dt, wind, params):
    k1 = dyn.state_rates(x, delta, n, wind, params)
    k2 = dyn.state_rates(x + 0.5 * dt * k1, delta, n, wind, params)
    k3 = dyn.state_rates(x + 0.5 * dt * k2, delta, n, wind, params)
    k4 = dyn.state_rates(x + dt * k3, delta, n, wind, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# initial guesses for the semionline planner
# ---------------------------------------------------------------------------

def warm_start_from_offline(solution: OfflineSolution, grid: tr.CollocationGrid) -> np.ndarray:
    """Resample the offline solution onto the collocation grid.

    The final time carries over exactly; states come from the dense rollout,
    controls zero-order-hold from the piecewise-constant schedule
    (right-continuous, so a grid time on a breakpoint takes the starting
    segment's value).
    """
    tf = solution.tf_off
    grid_times = grid.times(tf)
    states = np.column_stack([
        np.interp(grid_times, solution.times, solution.states[:, i]) for i in range(6)])
    n_segments_off = solution.segment_controls.shape[0]
    hs_off = tf / n_segments_off
    seg = np.clip((grid_times / hs_off).astype(int), 0, n_segments_off - 1)
    return tr.pack(tf, states, solution.segment_controls[seg])


def cold_start_linear(x_init, target: tr.DockingTarget, grid: tr.CollocationGrid,
                      limits: tr.ControlLimits, tf_guess: float = 160.0) -> np.ndarray:
    """States linear from start to target, half-capacity constant controls."""
    x_init = np.asarray(x_init, dtype=float)
    nc = grid.n_points
    states = np.linspace(x_init, target.x_fin, nc)
    controls = np.column_stack([np.full(nc, 0.5 * limits.delta_max),
                                np.full(nc, 0.5 * limits.n_max)])
    return tr.pack(tf_guess, states, controls)


def select_warm_start(solutions: list[OfflineSolution], x_init) -> OfflineSolution:
    """Pick the stored offline solution whose start is nearest in norm L.

    Componentwise multipliers are formed against each solution's own initial
    state; components whose reference value is zero contribute only when the
    requested value differs (scaled by an absolute fallback).
    """
    if not solutions:
        raise PlannerError("no offline solutions to choose from")
    x_init = np.asarray(x_init, dtype=float)

    def distance(sol: OfflineSolution) -> float:
        ref = sol.x_init
        d = np.where(np.abs(ref) > 1e-9, x_init / np.where(np.abs(ref) > 1e-9, ref, 1.0), 1.0)
        extra = np.where(np.abs(ref) > 1e-9, 0.0, np.abs(x_init - ref))
        return norm_l(d) + float(np.sum(extra))

    return min(solutions, key=distance)


# ---------------------------------------------------------------------------
# semionline planning
# ---------------------------------------------------------------------------

def plan(request: PlanRequest, params: dyn.ShipParams, polygon: geo.HarborPolygon,
         footprint: geo.ShipFootprint, x_reference, target: tr.DockingTarget,
         offline: OfflineSolution | list[OfflineSolution] | None = None,
         warm_solution: np.ndarray | None = None,
         settings: sqp.SqpSettings = sqp.SqpSettings(),
         weights=None) -> PlanResult:
    """Build the docking NLP for one scenario, pick the guess, and solve it.

    The wind is frozen at the scenario's condition for the whole horizon.
    Infeasible outcomes are reported, never hidden; a start pose outside the
    harbor is rejected immediately since the initial-state and collision
    constraints can never hold together.
    """
    scenario = request.scenario
    x_init = scenario.initial_state(x_reference)
    nlp = tr.build_nlp(params, scenario.wind, polygon, footprint, x_init,
                       target, request.limits, request.n_segments, weights=weights)

    guess = _select_guess(request, nlp, x_init, target, offline, warm_solution)

    start_pose_residuals = geo.collision_residuals(
        footprint, geo.Pose(x_init[0], x_init[2], x_init[4]), polygon)
    if np.any(np.abs(start_pose_residuals) > 1e-9):
        result = sqp.SqpResult(
            x=guess, converged=False, feasible=False,
            max_violation=float(np.max(np.abs(nlp.residuals(guess)))),
            iterations=0, objective=float(nlp.objective(guess)), wall_time=0.0,
            multipliers=np.zeros(nlp.n_equalities),
            message="initial pose lies outside the harbor polygon")
        return PlanResult(scenario, request.guess, nlp, guess, result)

    result = sqp.solve(nlp, guess, settings)
    return PlanResult(scenario, request.guess, nlp, guess, result)


def _select_guess(request, nlp, x_init, target, offline, warm_solution):
    if request.guess == "cold":
        return cold_start_linear(x_init, target, nlp.grid, request.limits, request.tf_cold)
    if request.guess == "warm-offline":
        if offline is None:
            raise PlannerError("warm-offline guess requested but no offline solution given")
        solution = (select_warm_start(offline, x_init)
                    if isinstance(offline, list) else offline)
        return warm_start_from_offline(solution, nlp.grid)
    if warm_solution is None:
        raise PlannerError("warm-solution guess requested but no solution vector given")
    vec = np.asarray(warm_solution, dtype=float)
    if vec.shape != (nlp.n_variables,):
        raise PlannerError(
            f"warm solution has shape {vec.shape}, problem needs ({nlp.n_variables},)")
    return vec.copy()


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def load_scenarios(path: str | Path):
    """Read the scenario table: reference states plus named cases."""
    data = configfile.read_file(path)
    src = str(path)
    ref = configfile.require(data, "reference", dict, src)
    x_init = np.asarray(configfile.require(ref, "x_init", list, src), dtype=float)
    x_final = np.asarray(configfile.require(ref, "x_final", list, src), dtype=float)
    if x_init.shape != (6,) or x_final.shape != (6,):
        raise PlannerError(f"{src}: reference states must be 6-vectors")
    table = configfile.require(data, "scenario", dict, src)
    scenarios = []
    for name, body in table.items():
        d = configfile.require(body, "d", list, f"{src}:{name}")
        v = configfile.require(body, "wind_speed_mps", float, f"{src}:{name}")
        chi = configfile.require(body, "wind_from_deg", float, f"{src}:{name}")
        scenarios.append(Scenario(name, np.asarray(d, dtype=float),
                                  dyn.WindCondition(v, math.radians(chi))))
    if not scenarios:
        raise PlannerError(f"{src}: scenario table is empty")
    return x_init, x_final, scenarios


def save_offline_solution(path: str | Path, solution: OfflineSolution) -> None:
    configfile.write_file(path, {
        "schema": "berthplan/offline-solution/1",
        "offline": {
            "tf_off_s": solution.tf_off,
            "x_init": solution.x_init.tolist(),
            "objective": solution.objective,
            "collision_free": solution.collision_free,
            "evaluations": solution.evaluations,
            "rudder_deg": solution.segment_controls[:, 0].tolist(),
            "prop_rps": solution.segment_controls[:, 1].tolist(),
            "times_s": solution.times.tolist(),
            "states": solution.states.tolist(),
        },
    }, header="Offline docking solution (shooting + evolution strategy).")


def load_offline_solution(path: str | Path) -> OfflineSolution:
    data = configfile.read_file(path)
    src = str(path)
    body = configfile.require(data, "offline", dict, src)
    rudder = np.asarray(configfile.require(body, "rudder_deg", list, src), dtype=float)
    prop = np.asarray(configfile.require(body, "prop_rps", list, src), dtype=float)
    return OfflineSolution(
        tf_off=configfile.require(body, "tf_off_s", float, src),
        segment_controls=np.column_stack([rudder, prop]),
        times=np.asarray(configfile.require(body, "times_s", list, src), dtype=float),
        states=np.asarray(configfile.require(body, "states", list, src), dtype=float),
        x_init=np.asarray(configfile.require(body, "x_init", list, src), dtype=float),
        objective=configfile.require(body, "objective", float, src),
        collision_free=configfile.require(body, "collision_free", bool, src),
        evaluations=configfile.require(body, "evaluations", int, src),
    )
