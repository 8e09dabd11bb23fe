"""Separated Hermite-Simpson transcription of the docking problem.

The horizon ``[0, tf]`` is split into ``Ns`` equal segments bounded by knot
points, with one collocation point at each mid-segment, giving
``Nc = 2*Ns + 1`` discretization points (odd 1-based index = knot, even =
collocation).  States and controls are free at every discretization point and
``tf`` itself is a decision variable, so the decision vector has
``(2 + 6)*Nc + 1`` entries in the fixed layout::

    [tf | states point-major (Nc * 6) | all rudder angles | all prop rates]

Equality residuals are stacked in a fixed order: initial state (6), terminal
state (6), terminal Simpson closure (6), Hermite interpolation defects
(6*Ns), Simpson quadrature defects (6*Ns), then the winding-number collision
residuals (n_s per discretization point).  The objective is the product of
the terminal squared deviation from the docking target and the
Simpson-quadrature approximation of the integrated squared deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from . import geometry as geo

STATE_DIM = 6
CONTROL_DIM = 2

#: Default box on the free final time (s); the open-ended upper limit of the
#: continuous problem is not implementable, and this bracket covers every
#: docking horizon of interest at model scale.
TF_BOUNDS = (5.0, 600.0)


class TranscriptionError(ValueError):
    """Inconsistent grid, limits, or decision-vector layout."""


@dataclass(frozen=True)
class CollocationGrid:
    """Segment count and derived discretization quantities."""

    n_segments: int

    def __post_init__(self):
        if self.n_segments < 1:
            raise TranscriptionError(f"need at least one segment, got {self.n_segments}")

    @property
    def n_points(self) -> int:
        return 2 * self.n_segments + 1

    def segment_length(self, tf: float) -> float:
        return tf / self.n_segments

    def times(self, tf: float) -> np.ndarray:
        """Discretization times, spacing half a segment."""
        return np.linspace(0.0, tf, self.n_points)

    @property
    def n_variables(self) -> int:
        return (STATE_DIM + CONTROL_DIM) * self.n_points + 1


@dataclass(frozen=True)
class ControlLimits:
    """Planner-level saturation, tighter than the machinery capacity."""

    delta_max: float = 25.0
    n_max: float = 15.0

    def __post_init__(self):
        if not (0.0 < self.delta_max <= dyn.DELTA_CAPACITY_DEG):
            raise TranscriptionError(
                f"delta_max must be in (0, {dyn.DELTA_CAPACITY_DEG}], got {self.delta_max}")
        if not (0.0 < self.n_max <= dyn.N_CAPACITY_RPS):
            raise TranscriptionError(
                f"n_max must be in (0, {dyn.N_CAPACITY_RPS}], got {self.n_max}")


@dataclass(frozen=True)
class DockingTarget:
    """Desired final docking state (6-vector)."""

    x_fin: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.x_fin, dtype=float)
        if arr.shape != (STATE_DIM,) or not np.all(np.isfinite(arr)):
            raise TranscriptionError(f"docking target must be a finite 6-vector, got {self.x_fin}")
        arr.flags.writeable = False
        object.__setattr__(self, "x_fin", arr)


def hermite_state(x_a, f_a, x_b, f_b, hs):
    """Cubic Hermite interpolant evaluated at mid-segment."""
    return 0.5 * (np.asarray(x_a) + np.asarray(x_b)) + (hs / 8.0) * (np.asarray(f_a) - np.asarray(f_b))


def hermite_slope(x_a, f_a, x_b, f_b, hs):
    """Derivative of the cubic Hermite interpolant at mid-segment."""
    return (-1.5 / hs) * (np.asarray(x_a) - np.asarray(x_b)) - 0.25 * (np.asarray(f_a) + np.asarray(f_b))


def segment_defects(states: np.ndarray, rates: np.ndarray, hs: float):
    """Interpolation and quadrature defects for all segments.

    ``states``/``rates`` are the values at all ``Nc`` discretization points,
    shape ``(Nc, dim)``.  Returns ``(interp, quad)`` each ``(Ns, dim)``:
    the mid-segment state minus its Hermite interpolant, and the mid-segment
    dynamics minus the interpolant slope.  Both zero iff the trajectory
    implicitly integrates the dynamics by Simpson quadrature per segment.
    """
    x_a, x_mid, x_b = states[:-2:2], states[1::2], states[2::2]
    f_a, f_mid, f_b = rates[:-2:2], rates[1::2], rates[2::2]
    interp = x_mid - hermite_state(x_a, f_a, x_b, f_b, hs)
    quad = f_mid - hermite_slope(x_a, f_a, x_b, f_b, hs)
    return interp, quad


def pack(tf: float, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Assemble the decision vector from ``tf``, ``(Nc, 6)`` states and ``(Nc, 2)`` controls."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if states.ndim != 2 or states.shape[1] != STATE_DIM:
        raise TranscriptionError(f"states must be (Nc, {STATE_DIM}), got {states.shape}")
    if controls.shape != (states.shape[0], CONTROL_DIM):
        raise TranscriptionError(
            f"controls must be ({states.shape[0]}, {CONTROL_DIM}), got {controls.shape}")
    return np.concatenate([[tf], states.ravel(), controls[:, 0], controls[:, 1]])


def unpack(z: np.ndarray, grid: CollocationGrid):
    """Split a decision vector into ``(tf, states, delta, n)``."""
    z = np.asarray(z, dtype=float)
    nc = grid.n_points
    if z.shape != (grid.n_variables,):
        raise TranscriptionError(
            f"decision vector must have {grid.n_variables} entries for "
            f"Ns={grid.n_segments}, got shape {z.shape}")
    tf = float(z[0])
    states = z[1:1 + STATE_DIM * nc].reshape(nc, STATE_DIM)
    delta = z[1 + STATE_DIM * nc:1 + (STATE_DIM + 1) * nc]
    n = z[1 + (STATE_DIM + 1) * nc:]
    return tf, states, delta, n


class NlpProblem:
    """Immutable transcribed docking NLP: objective, residuals, bounds.

    Problem data (ship parameters, frozen wind, harbor polygon, footprint,
    boundary states, limits) is captured at build time; evaluation methods
    are pure and reentrant.
    """

    def __init__(self, grid: CollocationGrid, params: dyn.ShipParams,
                 wind: dyn.WindCondition, polygon: geo.HarborPolygon,
                 footprint: geo.ShipFootprint, x_init: np.ndarray,
                 target: DockingTarget, limits: ControlLimits,
                 weights: np.ndarray | None = None,
                 tf_bounds: tuple[float, float] = TF_BOUNDS):
        x_init = np.asarray(x_init, dtype=float)
        if x_init.shape != (STATE_DIM,) or not np.all(np.isfinite(x_init)):
            raise TranscriptionError(f"x_init must be a finite 6-vector, got {x_init}")
        if tf_bounds[0] <= 0.0 or tf_bounds[1] <= tf_bounds[0]:
            raise TranscriptionError(f"bad tf bounds {tf_bounds}")
        self.grid = grid
        self.params = params
        self.wind = wind
        self.polygon = polygon
        self.footprint = footprint
        self.x_init = x_init.copy()
        self.target = target
        self.limits = limits
        self.tf_bounds = (float(tf_bounds[0]), float(tf_bounds[1]))
        w = np.ones(STATE_DIM) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (STATE_DIM,) or np.any(w < 0.0):
            raise TranscriptionError(f"weights must be 6 nonnegative values, got {weights}")
        self.weights = w

        nc = grid.n_points
        ns = grid.n_segments
        self.n_variables = grid.n_variables
        self.n_collision = footprint.n_points * nc
        self.n_equalities = 18 + 12 * ns + self.n_collision
        self.sl_initial = slice(0, 6)
        self.sl_terminal = slice(6, 12)
        self.sl_terminal_simpson = slice(12, 18)
        self.sl_interpolation = slice(18, 18 + 6 * ns)
        self.sl_quadrature = slice(18 + 6 * ns, 18 + 12 * ns)
        self.sl_collision = slice(18 + 12 * ns, self.n_equalities)
        # Simpson weights per discretization point for the running-cost sum
        simpson = np.ones(nc)
        simpson[1::2] = 4.0
        simpson[2:-1:2] = 2.0
        self._simpson = simpson

        lo = np.full(self.n_variables, -np.inf)
        hi = np.full(self.n_variables, np.inf)
        lo[0], hi[0] = self.tf_bounds
        lo[1 + STATE_DIM * nc:1 + (STATE_DIM + 1) * nc] = -limits.delta_max
        hi[1 + STATE_DIM * nc:1 + (STATE_DIM + 1) * nc] = limits.delta_max
        lo[1 + (STATE_DIM + 1) * nc:] = -limits.n_max
        hi[1 + (STATE_DIM + 1) * nc:] = limits.n_max
        lo.flags.writeable = False
        hi.flags.writeable = False
        self.lower_bounds = lo
        self.upper_bounds = hi

        scale = np.ones(self.n_variables)
        scale[0] = 100.0  # tf is O(100) s while every other variable is O(1)
        scale.flags.writeable = False
        self.var_scale = scale

    # -- evaluation --------------------------------------------------------

    def dynamics_at(self, states, delta, n) -> np.ndarray:
        return dyn.state_rates(states, delta, n, self.wind, self.params)

    def residuals(self, z: np.ndarray) -> np.ndarray:
        tf, states, delta, n = unpack(z, self.grid)
        hs = self.grid.segment_length(tf)
        rates = self.dynamics_at(states, delta, n)
        interp, quad = segment_defects(states, rates, hs)
        x_fin = self.target.x_fin
        terminal_simpson = states[-3] - (x_fin - (hs / 6.0) * (rates[-3] + 4.0 * rates[-2] + rates[-1]))
        collision = geo.collision_residuals_batch(
            self.footprint, states[:, (0, 2, 4)], self.polygon)
        return np.concatenate([
            states[0] - self.x_init,
            states[-1] - x_fin,
            terminal_simpson,
            interp.ravel(),
            quad.ravel(),
            collision.ravel(),
        ])

    def residual_families(self, z: np.ndarray) -> dict[str, np.ndarray]:
        res = self.residuals(z)
        return {
            "initial": res[self.sl_initial],
            "terminal": res[self.sl_terminal],
            "terminal_simpson": res[self.sl_terminal_simpson],
            "interpolation": res[self.sl_interpolation],
            "quadrature": res[self.sl_quadrature],
            "collision": res[self.sl_collision],
        }

    def objective(self, z: np.ndarray) -> float:
        tf, states, _, _ = unpack(z, self.grid)
        dev = states - self.target.x_fin
        per_point = np.sum(self.weights * dev * dev, axis=1)
        terminal = per_point[-1]
        integral = (self.grid.segment_length(tf) / 6.0) * float(self._simpson @ per_point)
        return float(terminal * integral)

    def objective_gradient(self, z: np.ndarray) -> np.ndarray:
        tf, states, _, _ = unpack(z, self.grid)
        nc = self.grid.n_points
        dev = states - self.target.x_fin
        per_point = np.sum(self.weights * dev * dev, axis=1)
        terminal = per_point[-1]
        hs = self.grid.segment_length(tf)
        integral = (hs / 6.0) * float(self._simpson @ per_point)
        grad = np.zeros(self.n_variables)
        grad[0] = terminal * integral / tf
        d_states = terminal * (hs / 6.0) * self._simpson[:, None] * (2.0 * self.weights * dev)
        d_states[-1] += integral * 2.0 * self.weights * dev[-1]
        grad[1:1 + STATE_DIM * nc] = d_states.ravel()
        return grad

    # -- solver hooks ------------------------------------------------------

    def restoration(self, z: np.ndarray, margin: float = 0.01) -> np.ndarray:
        """Pull every discretization pose back strictly inside the polygon.

        The winding-sum residual is locally constant (0 inside, -2*pi
        outside), so an exterior iterate gives the solver no gradient to
        recover from.  Restoration zeroes the collision residuals directly by
        translating offending midship positions inward past the nearest
        boundary point.
        """
        tf, states, delta, n = unpack(z, self.grid)
        states = states.copy()
        for k in range(self.grid.n_points):
            pose = states[k, (0, 2, 4)]
            for _ in range(25):
                world = geo.footprint_world_batch(self.footprint, pose)
                residual = geo.angle_sums(world, self.polygon) - geo.TWO_PI
                outside = np.abs(residual) > 1e-9
                if not np.any(outside):
                    break
                shifts = []
                for pt in world[outside]:
                    boundary, dist = geo.nearest_boundary_point(pt, self.polygon)
                    direction = (boundary - pt) / max(dist, 1e-12)
                    shifts.append(direction * (dist + margin))
                pose = pose + np.concatenate([_largest(shifts), [0.0]])
            states[k, 0], states[k, 2] = pose[0], pose[1]
        return pack(tf, states, np.column_stack([delta, n]))


def _largest(shifts: list[np.ndarray]) -> np.ndarray:
    norms = [float(np.hypot(*s)) for s in shifts]
    return shifts[int(np.argmax(norms))]


def build_nlp(params: dyn.ShipParams, wind: dyn.WindCondition,
              polygon: geo.HarborPolygon, footprint: geo.ShipFootprint,
              x_init, target: DockingTarget, limits: ControlLimits,
              n_segments: int, weights=None,
              tf_bounds: tuple[float, float] = TF_BOUNDS) -> NlpProblem:
    """Assemble the docking NLP on an ``n_segments`` collocation grid."""
    if isinstance(x_init, dyn.ShipState):
        x_init = x_init.as_array()
    return NlpProblem(CollocationGrid(n_segments), params, wind, polygon,
                      footprint, x_init, target, limits, weights, tf_bounds)
