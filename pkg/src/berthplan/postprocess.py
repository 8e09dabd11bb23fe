"""Continuous trajectories from a discrete optimum, verification, reports.

Controls interpolate linearly between consecutive discretization points
(half-segment spacing).  States follow a per-segment cubic built from the
solved states and the true dynamics at the segment's three points; the cubic
matches the knot state and slope exactly at the segment start and, for a
converged solution, joins the next segment to within the constraint
tolerance.  Verification re-simulates the continuous control signal with a
fine RK4 grid and re-samples the collision residuals ten times denser than
the collocation grid, reporting everything from raw recomputation rather
than solver logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import geometry as geo
from . import transcription as tr
from .planner import PlanResult, speedup

#: Verification tolerances: equality families against the solver tolerance,
#: box bounds essentially exactly.
FAMILY_TOLERANCE = 1e-6
BOUNDS_TOLERANCE = 1e-9


class PostprocessError(ValueError):
    """Evaluation outside the trajectory domain or inconsistent inputs."""


@dataclass
class ContinuousTrajectory:
    """Piecewise evaluators over ``[0, tf]`` plus the underlying grid data."""

    tf: float
    grid: tr.CollocationGrid
    states: np.ndarray        # (Nc, 6)
    controls: np.ndarray      # (Nc, 2)
    rates: np.ndarray         # (Nc, 6), true dynamics at the solved points
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        self.times = self.grid.times(self.tf)

    @classmethod
    def from_solution(cls, nlp: tr.NlpProblem, decision: np.ndarray) -> "ContinuousTrajectory":
        tf, states, delta, n = tr.unpack(decision, nlp.grid)
        rates = nlp.dynamics_at(states, delta, n)
        return cls(tf, nlp.grid, states, np.column_stack([delta, n]), rates)

    def control_at(self, t: float) -> np.ndarray:
        """Linear interpolation between discretization points."""
        k, local = self._locate(t, self.grid.segment_length(self.tf) / 2.0,
                                self.grid.n_points - 1)
        u0, u1 = self.controls[k], self.controls[min(k + 1, self.grid.n_points - 1)]
        return u0 + (u1 - u0) * local

    def state_at(self, t: float) -> np.ndarray:
        """Per-segment cubic from the segment-start state and three slopes."""
        hs = self.grid.segment_length(self.tf)
        seg, local = self._locate(t, hs, self.grid.n_segments)
        k = 2 * seg
        dt = local * hs
        f0, f1, f2 = self.rates[k], self.rates[k + 1], self.rates[k + 2]
        return (self.states[k] + f0 * dt
                - (3.0 * f0 - 4.0 * f1 + f2) * dt**2 / (2.0 * hs)
                + (2.0 * f0 - 4.0 * f1 + 2.0 * f2) * dt**3 / (3.0 * hs**2))

    def _locate(self, t: float, width: float, count: int):
        if not 0.0 <= t <= self.tf + 1e-9:
            raise PostprocessError(f"time {t} outside trajectory domain [0, {self.tf}]")
        t = min(t, self.tf)
        idx = min(int(t / width), count - 1)
        return idx, (t - idx * width) / width


def interp_control(trajectory: ContinuousTrajectory, t: float) -> dyn.ControlInput:
    delta, n = trajectory.control_at(t)
    return dyn.ControlInput(float(delta), float(n))


def interp_state(trajectory: ContinuousTrajectory, t: float) -> dyn.ShipState:
    return dyn.ShipState.from_array(trajectory.state_at(t))


@dataclass
class FeasibilityReport:
    family_violations: dict[str, float]
    bounds_violation: float
    feasible: bool
    resim_terminal_gap: np.ndarray
    resim_collision_max: float
    worst_family: str

    def summary(self) -> str:
        fams = ", ".join(f"{k}={v:.2e}" for k, v in self.family_violations.items())
        return (f"feasible={self.feasible} ({fams}, bounds={self.bounds_violation:.2e}); "
                f"re-simulation terminal gap {np.max(np.abs(self.resim_terminal_gap)):.3g}, "
                f"dense collision max {self.resim_collision_max:.2e}")


def verify_by_resimulation(nlp: tr.NlpProblem, decision: np.ndarray,
                           substeps: int = 50) -> FeasibilityReport:
    """Independent feasibility check: raw residuals plus an RK4 re-simulation.

    The re-simulation integrates the interpolated control signal from the
    problem's initial state with step ``hs/substeps`` and reports the terminal
    gap against the docking target; collision residuals are re-sampled ten
    times denser than the collocation grid along the re-simulated path, which
    catches corner cutting between discretization points.
    """
    trajectory = ContinuousTrajectory.from_solution(nlp, decision)
    families = {name: float(np.max(np.abs(vals)))
                for name, vals in nlp.residual_families(decision).items()}
    below = nlp.lower_bounds - decision
    above = decision - nlp.upper_bounds
    bounds_violation = float(max(np.max(below), np.max(above), 0.0))

    hs = nlp.grid.segment_length(trajectory.tf)
    start = dyn.ShipState.from_array(nlp.x_init)
    _, path = dyn.integrate_rk4(
        start, lambda t: tuple(trajectory.control_at(t)), nlp.wind, nlp.params,
        (0.0, trajectory.tf), hs / substeps)
    terminal_gap = path[-1] - nlp.target.x_fin

    dense_times = np.linspace(0.0, trajectory.tf, 10 * nlp.grid.n_points)
    sim_times = np.linspace(0.0, trajectory.tf, path.shape[0])
    dense_poses = np.column_stack([
        np.interp(dense_times, sim_times, path[:, i]) for i in (0, 2, 4)])
    collision = geo.collision_residuals_batch(nlp.footprint, dense_poses, nlp.polygon)
    collision_max = float(np.max(np.abs(collision)))

    feasible = (all(v <= FAMILY_TOLERANCE for v in families.values())
                and bounds_violation <= BOUNDS_TOLERANCE)
    worst = max(families, key=families.get)
    return FeasibilityReport(families, bounds_violation, feasible,
                             terminal_gap, collision_max, worst)


# ---------------------------------------------------------------------------
# batch comparison reporting
# ---------------------------------------------------------------------------

@dataclass
class ComparisonRow:
    """One scenario's warm/cold outcomes, recomputed from raw results."""

    name: str
    norm_l: float
    wind_speed: float
    wind_from_deg: float
    tf_warm: float
    time_warm: float
    feasible_warm: bool
    violation_warm: float
    iterations_warm: int
    tf_cold: float
    time_cold: float
    feasible_cold: bool
    violation_cold: float
    iterations_cold: int

    @classmethod
    def from_results(cls, warm: PlanResult, cold: PlanResult) -> "ComparisonRow":
        scenario = warm.scenario
        return cls(
            name=scenario.name,
            norm_l=scenario.norm_l,
            wind_speed=scenario.wind.v,
            wind_from_deg=math.degrees(scenario.wind.chi),
            tf_warm=float(warm.result.x[0]),
            time_warm=warm.result.wall_time,
            feasible_warm=warm.result.feasible,
            violation_warm=warm.result.max_violation,
            iterations_warm=warm.result.iterations,
            tf_cold=float(cold.result.x[0]),
            time_cold=cold.result.wall_time,
            feasible_cold=cold.result.feasible,
            violation_cold=cold.result.max_violation,
            iterations_cold=cold.result.iterations,
        )

    @property
    def speedup_percent(self) -> float:
        return speedup(self.time_cold, self.time_warm)


_COLUMNS = (
    ("case", "{:<6}"), ("L", "{:>5.2f}"), ("V", "{:>5.2f}"), ("chi", "{:>6.1f}"),
    ("tf_warm", "{:>8.1f}"), ("T_warm", "{:>8.3f}"), ("it_w", "{:>5d}"), ("feas_w", "{:>6}"),
    ("viol_w", "{:>9.1e}"), ("tf_cold", "{:>8.1f}"), ("T_cold", "{:>8.3f}"), ("it_c", "{:>5d}"),
    ("feas_c", "{:>6}"), ("viol_c", "{:>9.1e}"), ("speedup", "{:>8.0f}"),
)


def emit_report(rows: list[ComparisonRow]) -> str:
    """Aligned warm-vs-cold comparison table with an arithmetic-mean row."""
    if not rows:
        raise PostprocessError("no comparison rows to report")
    header = "  ".join(f"{name:>{max(len(name), _width(fmt))}}" for name, fmt in _COLUMNS)
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(_format_row(_row_values(row)))
    mean = _mean_row(rows)
    lines.append("-" * len(header))
    lines.append(_format_row(mean))
    return "\n".join(lines) + "\n"


def report_csv(rows: list[ComparisonRow]) -> str:
    names = [name for name, _ in _COLUMNS]
    out = [",".join(names)]
    for row in rows:
        out.append(",".join(str(v) for v in _row_values(row)))
    out.append(",".join(str(v) for v in _mean_row(rows)))
    return "\n".join(out) + "\n"


def _row_values(row: ComparisonRow):
    return (row.name, row.norm_l, row.wind_speed, row.wind_from_deg,
            row.tf_warm, row.time_warm, row.iterations_warm,
            "yes" if row.feasible_warm else "NO", row.violation_warm,
            row.tf_cold, row.time_cold, row.iterations_cold,
            "yes" if row.feasible_cold else "NO", row.violation_cold,
            row.speedup_percent)


def _mean_row(rows):
    def mean(getter):
        return sum(getter(r) for r in rows) / len(rows)

    return ("AVG", mean(lambda r: r.norm_l), mean(lambda r: r.wind_speed),
            mean(lambda r: r.wind_from_deg), mean(lambda r: r.tf_warm),
            mean(lambda r: r.time_warm), int(round(mean(lambda r: r.iterations_warm))),
            "", mean(lambda r: r.violation_warm), mean(lambda r: r.tf_cold),
            mean(lambda r: r.time_cold), int(round(mean(lambda r: r.iterations_cold))),
            "", mean(lambda r: r.violation_cold), mean(lambda r: r.speedup_percent))


def _format_row(values):
    cells = []
    for (name, fmt), value in zip(_COLUMNS, values):
        width = max(len(name), _width(fmt))
        if value == "":
            cells.append(" " * width)
        else:
            try:
                cells.append(fmt.format(value).rjust(width))
            except (ValueError, TypeError):
                cells.append(f"{value:>{width}}")
    return "  ".join(cells)


def _width(fmt: str) -> int:
    for token in fmt.split(":"):
        digits = ""
        for ch in token:
            if ch.isdigit():
                digits += ch
            elif digits:
                break
        if digits:
            return int(digits)
    return 6


# ---------------------------------------------------------------------------
# artifacts: trajectory CSV and plan-view SVG
# ---------------------------------------------------------------------------

def trajectory_csv(trajectory: ContinuousTrajectory, n_samples: int = 400) -> str:
    """Uniformly sampled trajectory: t, states (5a order), controls."""
    lines = ["t,x0,u,y0,vm,psi,r,delta,n"]
    for t in np.linspace(0.0, trajectory.tf, n_samples + 1):
        x = trajectory.state_at(float(t))
        u = trajectory.control_at(float(t))
        lines.append(",".join(f"{v:.9g}" for v in (t, *x, *u)))
    return "\n".join(lines) + "\n"


def plan_view_svg(polygon: geo.HarborPolygon, footprint: geo.ShipFootprint,
                  trajectory: ContinuousTrajectory, snapshot_interval: float = 10.0,
                  width: int = 720) -> str:
    """Plan view (north up, east right): free region, path, hull snapshots."""
    verts = polygon.vertices
    east, north = verts[:, 1], verts[:, 0]
    margin = 1.0
    e_lo, e_hi = east.min() - margin, east.max() + margin
    n_lo, n_hi = north.min() - margin, north.max() + margin
    scale = width / (e_hi - e_lo)
    height = int(math.ceil((n_hi - n_lo) * scale))

    def to_screen(x0, y0):
        return (y0 - e_lo) * scale, (n_hi - x0) * scale

    def path_of(points):
        return " ".join(f"{sx:.1f},{sy:.1f}" for sx, sy in (to_screen(p[0], p[1]) for p in points))

    samples = np.array([trajectory.state_at(float(t))
                        for t in np.linspace(0.0, trajectory.tf, 300)])
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#dfe8ef"/>',
        f'<polygon points="{path_of(verts)}" fill="#ffffff" stroke="#34495e" stroke-width="2"/>',
        f'<polyline points="{path_of(samples[:, (0, 2)])}" fill="none" stroke="#c0392b" stroke-width="1.5"/>',
    ]
    t = 0.0
    while t <= trajectory.tf + 1e-9:
        x = trajectory.state_at(min(t, trajectory.tf))
        hull = geo.footprint_world_batch(footprint, np.array([x[0], x[2], x[4]]))
        parts.append(f'<polygon points="{path_of(hull)}" fill="none" '
                     f'stroke="#2471a3" stroke-width="0.8"/>')
        t += snapshot_interval
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
