"""Quasi-static closed-loop simulation of the tethered pickup.

The droid is a rigid body driven by collective thrust along its body z-axis
and commanded body rates; attitude is integrated on the rotation group with
the exponential map, translation with a semi-implicit Euler step.  The
cable applies forces at both ends from one of three regimes:

* slack: a catenary solve gives the exact end tensions,
* taut: a stiff one-sided spring along the chord, with the cable's own
  weight split between the ends,
* near-vertical slack: the doubled-strand (bight) limit, where each end
  simply carries the strand hanging from it.

In every regime the two end forces sum to the cable weight, so momentum
bookkeeping stays consistent across regime switches.

Controllers are differential-flatness feedforward plus PD position
feedback; the feedforward inverts desired acceleration, jerk, and the
measured tether force into thrust, attitude, and body rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .cable import (
    CableProperties,
    PlanarConfiguration,
    corridor_bounds_batch,
    solve_catenary,
    tension_at,
)
from .errors import DegenerateThrust, ValidationError
from .optimizer import VIOLATION_TOL, WinchSchedule
from .trajectory import Trajectory

# Surrogate spring for the taut regime.  Stiff enough that the sag under a
# few kilograms is millimetric, soft enough for stable 1 kHz integration.
TETHER_STIFFNESS = 5e3

# Below this horizontal separation the catenary scale is unidentifiable and
# the doubled-strand limit applies.
VERTICAL_EPS = 1e-4

DEFAULT_TIMESTEP = 1e-3


@dataclass(frozen=True)
class DroneParams:
    """Droid mass, gravity, and tracking gains."""

    mass: float = 0.6
    gravity: float = 9.81
    kp: float = 16.0
    kd: float = 8.0

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise ValidationError("drone mass must be positive")
        if not self.gravity > 0:
            raise ValidationError("gravity must be positive")
        if self.kp < 0 or self.kd < 0:
            raise ValidationError("gains must be nonnegative")

    @property
    def gravity_vector(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.gravity])


@dataclass
class RigidBodyState:
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    body_rates: np.ndarray

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.body_rates = np.asarray(self.body_rates, dtype=float).reshape(3)

    @classmethod
    def at_rest(cls, position) -> "RigidBodyState":
        return cls(position=position, velocity=np.zeros(3),
                   rotation=np.eye(3), body_rates=np.zeros(3))


@dataclass
class WinchState:
    """Integrated winch: released length plus its signed rate."""

    released_length: float
    payout_speed: float = 0.0
    capacity: float = math.inf

    def __post_init__(self) -> None:
        if self.released_length < 0:
            raise ValidationError("released_length must be nonnegative")
        if not self.capacity > 0:
            raise ValidationError("winch capacity must be positive")

    def advance(self, dt: float) -> None:
        raw = self.released_length + self.payout_speed * dt
        self.released_length = min(max(raw, 0.0), self.capacity)


@dataclass(frozen=True)
class TetherForce:
    on_droid: np.ndarray
    on_anchor: np.ndarray
    taut: bool
    tension: float


def tether_force(attach, anchor, length: float, props: CableProperties,
                 attach_velocity=None, anchor_velocity=None,
                 payout_rate: float = 0.0,
                 stiffness: float = TETHER_STIFFNESS,
                 damping: float = 0.0) -> TetherForce:
    """Cable end forces for the current endpoint placement and length.

    ``attach`` is the droid-side cable end (attachment offset already
    applied), ``anchor`` the other end.  Velocities, the payout rate, and
    ``damping`` only matter in the taut regime, where the tension follows a
    one-sided spring on the chord excess plus a damper on its rate.
    """
    attach = np.asarray(attach, dtype=float).reshape(3)
    anchor = np.asarray(anchor, dtype=float).reshape(3)
    mu = props.weight_per_length
    dx = anchor[0] - attach[0]
    dz = anchor[2] - attach[2]
    p = abs(dx)
    chord = math.hypot(dx, dz)

    if length > chord and p < VERTICAL_EPS:
        # doubled strand: each end carries the piece hanging from it
        droid_strand = min(max(0.5 * (length - dz), 0.0), length)
        on_droid = np.array([0.0, 0.0, -mu * droid_strand])
        on_anchor = np.array([0.0, 0.0, -mu * (length - droid_strand)])
        return TetherForce(on_droid=on_droid, on_anchor=on_anchor,
                           taut=False, tension=mu * droid_strand)

    if length > chord:
        cfg = PlanarConfiguration.from_points(attach, anchor)
        sol = solve_catenary(cfg, length, props)
        vertical = sol.vertex_tension * math.sinh(sol.x_a / sol.scale)
        on_droid = np.array([math.copysign(sol.vertex_tension, dx), 0.0,
                             vertical])
        on_anchor = -on_droid + np.array([0.0, 0.0, -mu * length])
        return TetherForce(on_droid=on_droid, on_anchor=on_anchor,
                           taut=False, tension=tension_at(sol, sol.x_a))

    direction = np.array([dx, 0.0, dz]) / chord
    stretch = chord - length
    stretch_rate = -payout_rate
    if attach_velocity is not None or anchor_velocity is not None:
        va = np.zeros(3) if attach_velocity is None \
            else np.asarray(attach_velocity, dtype=float)
        vb = np.zeros(3) if anchor_velocity is None \
            else np.asarray(anchor_velocity, dtype=float)
        stretch_rate += float(direction @ (vb - va))
    pull = max(stiffness * stretch + damping * stretch_rate, 0.0)
    half_weight = np.array([0.0, 0.0, -0.5 * mu * length])
    on_droid = pull * direction + half_weight
    on_anchor = -pull * direction + half_weight
    return TetherForce(on_droid=on_droid, on_anchor=on_anchor, taut=True,
                       tension=float(np.linalg.norm(on_droid)))


def flat_to_inputs(acceleration, jerk, yaw: float, yaw_rate: float,
                   tether_on_droid, params: DroneParams):
    """Invert flat outputs into (thrust, attitude, body rates).

    The rotor force must supply the desired acceleration against gravity
    and the measured cable pull.  Its direction fixes the body z-axis; the
    yaw angle picks the heading; body rates follow from the force-vector
    rate, approximated by the mass-scaled jerk (the cable force variation
    is dropped, consistent with the quasi-static cable model).
    """
    acceleration = np.asarray(acceleration, dtype=float).reshape(3)
    jerk = np.asarray(jerk, dtype=float).reshape(3)
    pull = np.asarray(tether_on_droid, dtype=float).reshape(3)
    h = params.mass * (acceleration - params.gravity_vector) - pull
    thrust = float(np.linalg.norm(h))
    if thrust < 1e-6:
        raise DegenerateThrust(
            "net rotor force vanishes; attitude is undefined")
    zb = h / thrust
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    yb_raw = np.cross(zb, heading)
    norm = float(np.linalg.norm(yb_raw))
    if norm < 1e-9:
        raise DegenerateThrust("thrust axis is parallel to the heading")
    yb = yb_raw / norm
    xb = np.cross(yb, zb)
    rotation = np.column_stack([xb, yb, zb])

    h_dot = params.mass * jerk
    roll_rate = -float(yb @ h_dot) / thrust
    pitch_rate = float(xb @ h_dot) / thrust
    climb_rate = yaw_rate * float(zb[2])
    return thrust, rotation, np.array([roll_rate, pitch_rate, climb_rate])


def step(state: RigidBodyState, thrust: float, body_rates,
         external_force, params: DroneParams,
         dt: float = DEFAULT_TIMESTEP) -> tuple[RigidBodyState, np.ndarray]:
    """One semi-implicit Euler step; returns (new state, acceleration).

    The rotor force acts along the current body z-axis; attitude then
    advances on the rotation group with the commanded body rates, which
    keeps the rotation orthonormal for arbitrarily many steps.
    """
    body_rates = np.asarray(body_rates, dtype=float).reshape(3)
    force = thrust * state.rotation[:, 2] \
        + np.asarray(external_force, dtype=float).reshape(3) \
        + params.mass * params.gravity_vector
    acceleration = force / params.mass
    velocity = state.velocity + acceleration * dt
    position = state.position + velocity * dt
    rotation = state.rotation @ Rotation.from_rotvec(body_rates * dt).as_matrix()
    return RigidBodyState(position=position, velocity=velocity,
                          rotation=rotation, body_rates=body_rates), acceleration


TELEMETRY_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz",
                     "ax", "ay", "az", "l_min", "l_now", "l_max",
                     "tension", "thrust")


@dataclass
class TelemetryLog:
    """Per-step simulation record plus the corridor post-check."""

    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    l_min: np.ndarray
    l_now: np.ndarray
    l_max: np.ndarray
    tension: np.ndarray
    thrust: np.ndarray
    corridor_ok: bool = True
    corridor_violation: float = 0.0

    @property
    def columns(self) -> tuple:
        return TELEMETRY_COLUMNS

    def as_matrix(self) -> np.ndarray:
        return np.column_stack([
            self.time, self.position, self.velocity, self.acceleration,
            self.l_min, self.l_now, self.l_max, self.tension, self.thrust])

    @property
    def duration(self) -> float:
        return float(self.time[-1]) if self.time.size else 0.0


def _finish_log(rows, anchor_trace, props: CableProperties,
                attachment_offset: float,
                check_lower: bool = True) -> TelemetryLog:
    arrays = {k: np.asarray(v) for k, v in rows.items()}
    attach = arrays["position"] + np.array([0.0, 0.0, attachment_offset])
    l_min, l_max = corridor_bounds_batch(attach, anchor_trace, props)
    l_now = arrays["l_now"]
    worst = l_now ** 2 - l_max ** 2
    if check_lower:
        worst = np.maximum(worst, l_min ** 2 - l_now ** 2)
    violation = max(float(np.max(worst)), 0.0) if worst.size else 0.0
    return TelemetryLog(
        time=arrays["time"], position=arrays["position"],
        velocity=arrays["velocity"], acceleration=arrays["acceleration"],
        l_min=l_min, l_now=l_now, l_max=l_max,
        tension=arrays["tension"], thrust=arrays["thrust"],
        corridor_ok=violation < VIOLATION_TOL,
        corridor_violation=violation)


def simulate_pickup(traj: Trajectory, scenario,
                    params: DroneParams = DroneParams(),
                    dt: float = DEFAULT_TIMESTEP) -> TelemetryLog:
    """Fly the planned trajectory against the cable model.

    ``scenario`` provides the anchor, winch schedule, cable properties, and
    yaw (a PlanningScenario or anything shaped like one).  Feedback gains
    live in ``params``; zeroing them gives the open-loop flatness replay.
    """
    props = scenario.cable
    anchor = np.asarray(scenario.anchor_position, dtype=float)
    offset = np.array([0.0, 0.0, props.attachment_offset])
    damping = 2.0 * math.sqrt(TETHER_STIFFNESS * params.mass)
    yaw = scenario.yaw

    n_steps = max(int(round(traj.duration / dt)), 1)
    ts = np.minimum(np.arange(n_steps + 1) * dt, traj.duration)
    refs = [traj.evaluate_batch(ts, order) for order in range(4)]
    lengths = scenario.winch.length_at(ts)
    rates = scenario.winch.rate_at(ts)

    rows = {k: [] for k in ("time", "position", "velocity", "acceleration",
                            "l_now", "tension", "thrust")}
    state = RigidBodyState.at_rest(refs[0][0])
    state.velocity = refs[1][0].copy()
    initialized = False
    for i in range(n_steps + 1):
        l_now = float(lengths[i])
        tether = tether_force(state.position + offset, anchor, l_now, props,
                              attach_velocity=state.velocity,
                              payout_rate=float(rates[i]), damping=damping)
        command = refs[2][i] \
            + params.kp * (refs[0][i] - state.position) \
            + params.kd * (refs[1][i] - state.velocity)
        thrust, attitude, body_rates = flat_to_inputs(
            command, refs[3][i], yaw, 0.0, tether.on_droid, params)
        if not initialized:
            state.rotation = attitude
            initialized = True
        new_state, acceleration = step(state, thrust, body_rates,
                                       tether.on_droid, params, dt)
        rows["time"].append(float(ts[i]))
        rows["position"].append(state.position)
        rows["velocity"].append(state.velocity)
        rows["acceleration"].append(acceleration)
        rows["l_now"].append(l_now)
        rows["tension"].append(tether.tension)
        rows["thrust"].append(thrust)
        state = new_state
    return _finish_log(rows, anchor, props, props.attachment_offset)


def simulate_retrieval(droid_position, winch: WinchSchedule,
                       attach_mass: float,
                       props: CableProperties = CableProperties(),
                       params: DroneParams = DroneParams(),
                       dt: float = DEFAULT_TIMESTEP,
                       stow_length: float = 0.2,
                       max_time: float = 120.0) -> TelemetryLog:
    """Hold position while reeling a hanging carrier up to the stow length.

    The carrier is a point mass on the cable end below the droid; the winch
    follows its schedule (payout negative when reeling in) and the run ends
    at the first step whose released length is at or below ``stow_length``.
    """
    if attach_mass <= 0:
        raise ValidationError("attach mass must be positive")
    if winch.initial_length <= stow_length:
        raise ValidationError("winch starts at or below the stow length")
    hold = np.asarray(droid_position, dtype=float).reshape(3)
    offset = np.array([0.0, 0.0, props.attachment_offset])
    damping = 2.0 * math.sqrt(TETHER_STIFFNESS * attach_mass)
    g_vec = params.gravity_vector

    state = RigidBodyState.at_rest(hold)
    carrier = hold + offset - np.array([0.0, 0.0, winch.initial_length])
    carrier_velocity = np.zeros(3)

    rows = {k: [] for k in ("time", "position", "velocity", "acceleration",
                            "l_now", "tension", "thrust")}
    anchor_trace = []
    initialized = False
    n_steps = int(round(max_time / dt))
    for i in range(n_steps + 1):
        t = i * dt
        l_now = float(winch.length_at(t))
        rate = float(winch.rate_at(t))
        tether = tether_force(state.position + offset, carrier, l_now, props,
                              attach_velocity=state.velocity,
                              anchor_velocity=carrier_velocity,
                              payout_rate=rate, damping=damping)
        command = params.kp * (hold - state.position) \
            - params.kd * state.velocity
        thrust, attitude, body_rates = flat_to_inputs(
            command, np.zeros(3), 0.0, 0.0, tether.on_droid, params)
        if not initialized:
            state.rotation = attitude
            initialized = True
        new_state, acceleration = step(state, thrust, body_rates,
                                       tether.on_droid, params, dt)
        carrier_accel = tether.on_anchor / attach_mass + g_vec
        carrier_velocity = carrier_velocity + carrier_accel * dt
        carrier = carrier + carrier_velocity * dt

        rows["time"].append(t)
        rows["position"].append(state.position)
        rows["velocity"].append(state.velocity)
        rows["acceleration"].append(acceleration)
        rows["l_now"].append(l_now)
        rows["tension"].append(tether.tension)
        rows["thrust"].append(thrust)
        anchor_trace.append(carrier)
        state = new_state
        if l_now <= stow_length:
            break
    # taut carrying sits below the slack corridor on purpose, so only the
    # sag-limited upper bound is meaningful here
    return _finish_log(rows, np.asarray(anchor_trace), props,
                       props.attachment_offset, check_lower=False)
