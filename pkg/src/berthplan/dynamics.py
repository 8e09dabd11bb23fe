"""3-DOF maneuvering dynamics of a single-screw, single-rudder model ship.

State is the 6-vector ``[x0, u, y0, vm, psi, r]``: north/east midship
position, surge and sway velocity at midship, yaw angle (unwrapped) and yaw
rate.  Control is ``[delta, n]``: rudder angle in degrees and propeller
revolutions in 1/s.  Forces are the sum of four contributions:

* hull: quadratic surge resistance plus linear + cross-flow sway/yaw damping,
* propeller: quadratic thrust curve in the advance ratio, with a constant
  backing coefficient for reversed revolutions (sign-pair handling),
* rudder: normal force from the effective inflow (propeller slipstream
  included) with a standard low-aspect-ratio lift slope,
* wind: apparent-wind force with cosine/sine-shaped coefficient curves on the
  frontal/lateral projected areas.

Every coefficient lives in one versioned parameter file (see
``data/esso_osaka_3m.cfg``); the added masses and inertias there are
conventional estimates, not identified values.  All functions are pure and
accept either single states (shape ``(6,)``) or batches (``(..., 6)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import configfile

TWO_PI = 2.0 * math.pi

#: Hard actuator capacity (exceeding it is a modelling error, not a planning
#: choice; planners impose their own tighter limits through NLP bounds).
DELTA_CAPACITY_DEG = 35.0
N_CAPACITY_RPS = 20.0


class DynamicsError(ValueError):
    """Non-finite or otherwise unusable dynamics input."""


class SingularMassMatrixError(DynamicsError):
    """Sway/yaw mass matrix is numerically singular for these parameters."""


class IntegrationError(RuntimeError):
    """State became non-finite during explicit integration."""


@dataclass(frozen=True)
class ShipState:
    """Ship state ``[x0, u, y0, vm, psi, r]``; psi is never wrapped."""

    x0: float
    u: float
    y0: float
    vm: float
    psi: float
    r: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise DynamicsError(f"non-finite ship state: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.u, self.y0, self.vm, self.psi, self.r])

    @classmethod
    def from_array(cls, arr) -> "ShipState":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (6,):
            raise DynamicsError(f"ship state must have 6 entries, got shape {arr.shape}")
        return cls(*arr.tolist())


@dataclass(frozen=True)
class ControlInput:
    """Rudder angle (deg) and propeller revolutions (1/s), within capacity."""

    delta: float
    n: float

    def __post_init__(self):
        if not (math.isfinite(self.delta) and math.isfinite(self.n)):
            raise DynamicsError(f"non-finite control: {self}")
        if abs(self.delta) > DELTA_CAPACITY_DEG:
            raise DynamicsError(f"rudder angle {self.delta} deg exceeds capacity {DELTA_CAPACITY_DEG}")
        if abs(self.n) > N_CAPACITY_RPS:
            raise DynamicsError(f"propeller rate {self.n} 1/s exceeds capacity {N_CAPACITY_RPS}")


@dataclass(frozen=True)
class WindCondition:
    """True wind: speed (m/s) and blows-from direction from North (rad).

    The direction is normalized into [0, 2*pi).  A condition is frozen over a
    planning horizon; time variation enters only through replanning.
    """

    v: float
    chi: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.chi)):
            raise DynamicsError(f"non-finite wind condition: {self}")
        if self.v < 0.0:
            raise DynamicsError(f"wind speed must be >= 0, got {self.v}")
        object.__setattr__(self, "chi", self.chi % TWO_PI)

    @classmethod
    def calm(cls) -> "WindCondition":
        return cls(0.0, 0.0)


@dataclass(frozen=True)
class ForceBreakdown:
    """Total surge force, sway force (N) and yaw moment about midship (N m)."""

    x: float
    y: float
    nm: float


@dataclass(frozen=True)
class ShipParams:
    """Principal particulars plus every reference-force-model coefficient."""

    name: str
    # hull geometry / inertia
    lpp: float            # length between perpendiculars (m)
    breadth: float        # (m)
    draught: float        # (m)
    xg: float             # longitudinal center of gravity (m, + forward)
    mass: float           # (kg)
    block_coef: float
    mx: float             # added mass, surge (kg)
    my: float             # added mass, sway (kg)
    izg: float            # yaw inertia about CG (kg m^2)
    jz: float             # added yaw inertia (kg m^2)
    # hull damping
    rho_water: float      # (kg/m^3)
    x_uu: float           # surge resistance, -x_uu*u|u|
    y_v: float
    y_r: float
    y_vv: float
    y_rr: float
    n_v: float
    n_r: float
    n_vv: float
    n_rr: float
    # propeller
    prop_diameter: float  # (m)
    wake_fraction: float
    thrust_deduction: float
    kt0: float            # thrust coefficient polynomial in advance ratio
    kt1: float
    kt2: float
    kt_astern: float      # constant backing coefficient for n < 0
    advance_ratio_min: float
    advance_ratio_max: float
    advance_smoothing: float    # regularizes the advance-ratio division (m/s)
    reversal_smoothing: float   # width of the ahead/astern blend (1/s)
    inflow_smoothing: float     # regularizes inflow magnitudes (m/s)
    # rudder
    rudder_area: float    # (m^2)
    rudder_aspect: float
    rudder_wake_fraction: float
    slipstream_gain: float      # axial inflow added per n*D
    flow_straightening: float   # lateral inflow factor
    x_rudder: float             # rudder position from midship (m, - aft)
    rudder_drag_fraction: float
    hull_rudder_gain: float     # hull-induced amplification of rudder sway force
    x_hull_interaction: float   # application point of induced sway force (m)
    # wind
    rho_air: float
    area_front: float     # frontal projected area (m^2)
    area_lateral: float   # lateral projected area (m^2)
    wind_cx: float
    wind_cy: float
    wind_cn: float
    x_wind_center: float  # center of lateral area from midship (m)

    def __post_init__(self):
        for field_name in ("lpp", "breadth", "draught", "mass"):
            if getattr(self, field_name) <= 0.0:
                raise DynamicsError(f"{field_name} must be > 0")
        for field_name in ("surge_mass", "sway_mass", "yaw_inertia"):
            if getattr(self, field_name) <= 0.0:
                raise DynamicsError(f"derived {field_name} must be > 0")

    @property
    def surge_mass(self) -> float:
        """m + mx."""
        return self.mass + self.mx

    @property
    def sway_mass(self) -> float:
        """m + my."""
        return self.mass + self.my

    @property
    def yaw_inertia(self) -> float:
        """Yaw inertia about midship: izg + xg^2*m + jz."""
        return self.izg + self.xg**2 * self.mass + self.jz

    @property
    def rudder_lift_slope(self) -> float:
        """Fujii-type lift gradient 6.13*aspect/(aspect + 2.25)."""
        return 6.13 * self.rudder_aspect / (self.rudder_aspect + 2.25)


def load_ship_params(path: str | Path) -> ShipParams:
    data = configfile.read_file(path)
    src = str(path)
    hull = configfile.require(data, "hull", dict, src)
    added = configfile.require(data, "added_mass", dict, src)
    damping = configfile.require(data, "hull_forces", dict, src)
    prop = configfile.require(data, "propeller", dict, src)
    rudder = configfile.require(data, "rudder", dict, src)
    wind = configfile.require(data, "wind_forces", dict, src)
    f = configfile.require
    return ShipParams(
        name=f(data, "name", str, src),
        lpp=f(hull, "lpp_m", float, src),
        breadth=f(hull, "breadth_m", float, src),
        draught=f(hull, "draught_m", float, src),
        xg=f(hull, "xg_m", float, src),
        mass=f(hull, "mass_kg", float, src),
        block_coef=f(hull, "block_coefficient", float, src),
        mx=f(added, "mx_kg", float, src),
        my=f(added, "my_kg", float, src),
        izg=f(added, "izg_kgm2", float, src),
        jz=f(added, "jz_kgm2", float, src),
        rho_water=f(damping, "rho_water_kgpm3", float, src),
        x_uu=f(damping, "x_uu", float, src),
        y_v=f(damping, "y_v", float, src),
        y_r=f(damping, "y_r", float, src),
        y_vv=f(damping, "y_vv", float, src),
        y_rr=f(damping, "y_rr", float, src),
        n_v=f(damping, "n_v", float, src),
        n_r=f(damping, "n_r", float, src),
        n_vv=f(damping, "n_vv", float, src),
        n_rr=f(damping, "n_rr", float, src),
        prop_diameter=f(prop, "diameter_m", float, src),
        wake_fraction=f(prop, "wake_fraction", float, src),
        thrust_deduction=f(prop, "thrust_deduction", float, src),
        kt0=f(prop, "kt0", float, src),
        kt1=f(prop, "kt1", float, src),
        kt2=f(prop, "kt2", float, src),
        kt_astern=f(prop, "kt_astern", float, src),
        advance_ratio_min=f(prop, "advance_ratio_min", float, src),
        advance_ratio_max=f(prop, "advance_ratio_max", float, src),
        advance_smoothing=f(prop, "advance_smoothing_mps", float, src),
        reversal_smoothing=f(prop, "reversal_smoothing_rps", float, src),
        inflow_smoothing=f(rudder, "inflow_smoothing_mps", float, src),
        rudder_area=f(rudder, "area_m2", float, src),
        rudder_aspect=f(rudder, "aspect_ratio", float, src),
        rudder_wake_fraction=f(rudder, "wake_fraction", float, src),
        slipstream_gain=f(rudder, "slipstream_gain", float, src),
        flow_straightening=f(rudder, "flow_straightening", float, src),
        x_rudder=f(rudder, "x_rudder_m", float, src),
        rudder_drag_fraction=f(rudder, "drag_fraction", float, src),
        hull_rudder_gain=f(rudder, "hull_gain", float, src),
        x_hull_interaction=f(rudder, "x_hull_m", float, src),
        rho_air=f(wind, "rho_air_kgpm3", float, src),
        area_front=f(wind, "area_front_m2", float, src),
        area_lateral=f(wind, "area_lateral_m2", float, src),
        wind_cx=f(wind, "cx", float, src),
        wind_cy=f(wind, "cy", float, src),
        wind_cn=f(wind, "cn", float, src),
        x_wind_center=f(wind, "x_center_m", float, src),
    )


# ---------------------------------------------------------------------------
# array-level force and rate evaluation (hot path; shapes broadcast)
# ---------------------------------------------------------------------------

def force_components(states, delta_deg, n_rps, wind: WindCondition, params: ShipParams):
    """Hull, propeller, rudder and wind force arrays, each ``(..., 3)``.

    ``states`` has shape ``(..., 6)``; ``delta_deg`` and ``n_rps`` broadcast
    against the leading dimensions.
    """
    states = np.asarray(states, dtype=float)
    delta_rad = np.deg2rad(np.asarray(delta_deg, dtype=float))
    n = np.asarray(n_rps, dtype=float)
    u = states[..., 1]
    vm = states[..., 3]
    psi = states[..., 4]
    r = states[..., 5]

    # hull
    xh = -params.x_uu * u * np.abs(u)
    yh = -(params.y_v * vm + params.y_r * r + params.y_vv * vm * np.abs(vm)
           + params.y_rr * r * np.abs(r))
    nh = -(params.n_v * vm + params.n_r * r + params.n_vv * vm * np.abs(vm)
           + params.n_rr * r * np.abs(r))

    # propeller: quadratic KT(J) ahead, constant backing coefficient astern.
    # The quadrant transition is blended smoothly across n = 0 and the
    # advance ratio is formed by a regularized division with a soft clamp:
    # collocation solvers differentiate this model, and hard branch switches
    # at the (u, n) sign boundaries defeat their linearizations.
    dia = params.prop_diameter
    u_prop = (1.0 - params.wake_fraction) * u
    shaft_speed = n * dia
    advance = u_prop * shaft_speed / (shaft_speed**2 + params.advance_smoothing**2)
    mid = 0.5 * (params.advance_ratio_min + params.advance_ratio_max)
    half = 0.5 * (params.advance_ratio_max - params.advance_ratio_min)
    advance = mid + half * np.tanh((advance - mid) / half)
    kt_ahead = params.kt0 + params.kt1 * advance + params.kt2 * advance**2
    ahead_weight = 0.5 * (1.0 + np.tanh(n / params.reversal_smoothing))
    mag = params.rho_water * n**2 * dia**4
    thrust = mag * (ahead_weight * kt_ahead - (1.0 - ahead_weight) * params.kt_astern)
    xp = (1.0 - params.thrust_deduction) * thrust
    yp = np.zeros_like(xp)
    np_ = np.zeros_like(xp)

    # rudder: normal force from effective inflow, U^2*sin(attack) expanded as
    # U*(u_in*sin(delta) - v_in*cos(delta)) to stay smooth through u_in = 0;
    # the inflow magnitude is regularized near dead water for the same reason
    u_in = (1.0 - params.rudder_wake_fraction) * u + params.slipstream_gain * n * dia
    v_in = params.flow_straightening * (vm + params.x_rudder * r)
    speed_in = np.sqrt(u_in**2 + v_in**2 + params.inflow_smoothing**2)
    sin_d, cos_d = np.sin(delta_rad), np.cos(delta_rad)
    normal = (0.5 * params.rho_water * params.rudder_area * params.rudder_lift_slope
              * speed_in * (u_in * sin_d - v_in * cos_d))
    xr = -(1.0 - params.rudder_drag_fraction) * normal * sin_d
    yr = -(1.0 + params.hull_rudder_gain) * normal * cos_d
    nr = -(params.x_rudder + params.hull_rudder_gain * params.x_hull_interaction) * normal * cos_d

    # wind: apparent-wind components in the ship frame
    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    ship_vx = u * cos_psi - vm * sin_psi
    ship_vy = u * sin_psi + vm * cos_psi
    wind_vx = -wind.v * math.cos(wind.chi)
    wind_vy = -wind.v * math.sin(wind.chi)
    rel_x = wind_vx - ship_vx
    rel_y = wind_vy - ship_vy
    air_u = cos_psi * rel_x + sin_psi * rel_y
    air_v = -sin_psi * rel_x + cos_psi * rel_y
    air_speed = np.sqrt(air_u**2 + air_v**2 + params.inflow_smoothing**2)
    qa = 0.5 * params.rho_air
    xa = qa * params.area_front * params.wind_cx * air_u * air_speed
    ya = qa * params.area_lateral * params.wind_cy * air_v * air_speed
    na = params.x_wind_center * ya + qa * params.area_lateral * params.lpp * params.wind_cn * air_u * air_v

    stack = np.stack
    return (stack([xh, yh, nh], axis=-1), stack([xp, yp, np_], axis=-1),
            stack([xr, yr, nr], axis=-1), stack([xa, ya, na], axis=-1))


def state_rates(states, delta_deg, n_rps, wind: WindCondition, params: ShipParams) -> np.ndarray:
    """Time derivative of the state array, shape ``(..., 6)``."""
    states = np.asarray(states, dtype=float)
    hull, prop, rud, air = force_components(states, delta_deg, n_rps, wind, params)
    total = hull + prop + rud + air
    return _assemble_rates(states, total[..., 0], total[..., 1], total[..., 2], params)


def _assemble_rates(states, fx, fy, nm, params: ShipParams) -> np.ndarray:
    u = states[..., 1]
    vm = states[..., 3]
    psi = states[..., 4]
    r = states[..., 5]
    mx, my, izm = params.surge_mass, params.sway_mass, params.yaw_inertia
    xgm = params.xg * params.mass
    den = my * izm - xgm**2
    if abs(den) < 1e-12 * abs(my * izm):
        raise SingularMassMatrixError(
            f"sway/yaw mass matrix singular: my*izm={my * izm:.6g}, (xg*m)^2={xgm ** 2:.6g}")
    sway_rhs = fy - mx * u * r
    yaw_rhs = nm - xgm * u * r
    rates = np.empty(np.broadcast(states[..., 0], fx).shape + (6,))
    rates[..., 0] = u * np.cos(psi) - vm * np.sin(psi)
    rates[..., 1] = (fx + my * vm * r + xgm * r**2) / mx
    rates[..., 2] = u * np.sin(psi) + vm * np.cos(psi)
    rates[..., 3] = (sway_rhs * izm - yaw_rhs * xgm) / den
    rates[..., 4] = r
    rates[..., 5] = (sway_rhs * xgm - yaw_rhs * my) / (-den)
    return rates


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------

def kinematics(state: ShipState) -> np.ndarray:
    """Earth-frame rates ``[x0_dot, y0_dot, psi_dot]`` of the midship pose."""
    cos_psi, sin_psi = math.cos(state.psi), math.sin(state.psi)
    return np.array([
        state.u * cos_psi - state.vm * sin_psi,
        state.u * sin_psi + state.vm * cos_psi,
        state.r,
    ])


def total_forces(state: ShipState, control: ControlInput, wind: WindCondition,
                 params: ShipParams) -> ForceBreakdown:
    """Sum of hull, propeller, rudder and wind contributions."""
    hull, prop, rud, air = force_components(
        state.as_array(), control.delta, control.n, wind, params)
    total = hull + prop + rud + air
    if not np.all(np.isfinite(total)):
        raise DynamicsError("non-finite force evaluation")
    return ForceBreakdown(float(total[0]), float(total[1]), float(total[2]))


def kinetics(state: ShipState, forces: ForceBreakdown, params: ShipParams) -> np.ndarray:
    """Accelerations ``[u_dot, vm_dot, r_dot]`` from the rigid-body equations."""
    rates = _assemble_rates(state.as_array(), forces.x, forces.y, forces.nm, params)
    return rates[[1, 3, 5]]


def dynamics(state: ShipState, control: ControlInput, wind: WindCondition,
             params: ShipParams) -> np.ndarray:
    """Full 6-vector state rate in ``[x0, u, y0, vm, psi, r]`` order."""
    return state_rates(state.as_array(), control.delta, control.n, wind, params)


def integrate_rk4(state: ShipState, control_signal, wind: WindCondition,
                  params: ShipParams, t_span: tuple[float, float], step: float):
    """Classical fixed-step 4th-order integration of the ship dynamics.

    ``control_signal(t)`` returns ``(delta_deg, n_rps)`` and is sampled at the
    stage times.  Returns ``(times, trajectory)`` with trajectory shape
    ``(len(times), 6)``.  The step is shrunk uniformly so the span divides
    evenly.
    """
    if step <= 0.0:
        raise ValueError(f"step must be > 0, got {step}")
    t0, tf = t_span
    if tf < t0:
        raise ValueError(f"t_span must be increasing, got {t_span}")
    n_steps = max(1, math.ceil((tf - t0) / step - 1e-12))
    h = (tf - t0) / n_steps
    times = t0 + h * np.arange(n_steps + 1)
    traj = np.empty((n_steps + 1, 6))
    traj[0] = state.as_array()
    x = traj[0]
    for i in range(n_steps):
        t = times[i]
        x = _rk4_step(x, t, h, control_signal, wind, params)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(
                f"state became non-finite at t={t + h:.3f} s (step {i + 1}/{n_steps}): {x}")
        traj[i + 1] = x
    return times, traj


def _rk4_step(x, t, h, control_signal, wind, params):
    d0, n0 = control_signal(t)
    d1, n1 = control_signal(t + 0.5 * h)
    d2, n2 = control_signal(t + h)
    k1 = state_rates(x, d0, n0, wind, params)
    k2 = state_rates(x + 0.5 * h * k1, d1, n1, wind, params)
    k3 = state_rates(x + 0.5 * h * k2, d1, n1, wind, params)
    k4 = state_rates(x + h * k3, d2, n2, wind, params)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
