"""Soft-penalty planning objective and its quasi-Newton minimization.

The planner's decision variables are the interior waypoints of a uniform
piecewise-quintic trajectory plus (optionally) the total duration.  The
objective is

    J = smoothness + rho * T + sum_i  w_i * penalty_i

where every constraint (velocity, acceleration, jerk, thrust window,
obstacle clearance, cable-length corridor) enters as a cubic hinge
max(violation, 0)^3 sampled at kappa+1 equally spaced times.  Cubic hinges
are C2, so a limited-memory quasi-Newton method with Wolfe line search
handles them well.

Gradients are exact: each sampled penalty contributes to the coefficient
array through the basis row at its sample, and to the duration both through
the moving sample times and through the matrix of the trajectory
construction (see trajectory.propagate_gradients).  The corridor's upper
bound is a root find, so its positional derivative is taken by central
differences around the solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .cable import CableProperties, corridor_bounds_batch, sag_length_gradient_batch
from .errors import ValidationError
from .trajectory import (
    BoundaryState,
    Trajectory,
    basis_rows,
    construct,
    jerk_energy,
    jerk_energy_gradient,
    propagate_gradients,
)

# Shortest admissible plan duration; the optimizer's duration variable is
# T = MIN_DURATION + softplus(theta), which keeps T positive without bounds.
MIN_DURATION = 0.1

# A plan counts as feasible when no sampled hinge argument exceeds this.
VIOLATION_TOL = 1e-3


@dataclass(frozen=True)
class Limits:
    """Kinodynamic limits, sampling resolution, and time weighting."""

    v_max: float = 2.0
    a_max: float = 6.0
    j_max: float = 30.0
    tau_min: float = 2.0
    tau_max: float = 20.0
    samples: int = 32
    obstacle_margin: float = 0.3
    time_weight: float = 20.0
    corridor_margin: float = 0.0

    def __post_init__(self) -> None:
        for name in ("v_max", "a_max", "j_max", "tau_min", "tau_max",
                     "obstacle_margin", "time_weight"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"limits.{name} must be positive")
        if not self.tau_min < self.tau_max:
            raise ValidationError("limits require tau_min < tau_max")
        if self.samples < 2:
            raise ValidationError("limits.samples must be at least 2")
        if self.corridor_margin < 0:
            raise ValidationError("limits.corridor_margin must be nonnegative")


@dataclass(frozen=True)
class PenaltyWeights:
    velocity: float = 1e4
    accel_jerk: float = 1e4
    thrust: float = 1e4
    cable: float = 1e5
    obstacle: float = 1e5

    def __post_init__(self) -> None:
        for name in ("velocity", "accel_jerk", "thrust", "cable", "obstacle"):
            if getattr(self, name) < 0:
                raise ValidationError(f"weights.{name} must be nonnegative")


@dataclass(frozen=True)
class ObstaclePlane:
    """Half-space obstacle: free space lies on the +normal side of point."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self) -> None:
        point = np.asarray(self.point, dtype=float).reshape(3)
        normal = np.asarray(self.normal, dtype=float).reshape(3)
        norm = float(np.linalg.norm(normal))
        if not math.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ValidationError("obstacle normal must be unit length")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "normal", normal / norm)

    def signed_distance(self, position) -> float:
        return float((np.asarray(position, dtype=float) - self.point)
                     @ self.normal)


@dataclass(frozen=True)
class WinchSchedule:
    """Kinematic released-length schedule L(t) = L0 + payout_speed * t."""

    initial_length: float
    payout_speed: float = 0.0
    capacity: float = math.inf

    def __post_init__(self) -> None:
        if not (self.initial_length >= 0 and math.isfinite(self.initial_length)):
            raise ValidationError("winch initial_length must be nonnegative")
        if not math.isfinite(self.payout_speed):
            raise ValidationError("winch payout_speed must be finite")
        if not self.capacity > 0:
            raise ValidationError("winch capacity must be positive")

    def length_at(self, t):
        raw = self.initial_length + self.payout_speed * np.asarray(t, dtype=float)
        return np.clip(raw, 0.0, self.capacity)

    def rate_at(self, t):
        """d length / dt, zero wherever the schedule is clipped."""
        raw = self.initial_length + self.payout_speed * np.asarray(t, dtype=float)
        inside = (raw > 0.0) & (raw < self.capacity)
        return np.where(inside, self.payout_speed, 0.0)


@dataclass(frozen=True)
class PlanningScenario:
    """Everything the planner needs to know about one pickup problem."""

    start_state: BoundaryState
    goal_position: np.ndarray
    goal_velocity: np.ndarray
    anchor_position: np.ndarray
    winch: WinchSchedule
    cable: CableProperties = CableProperties()
    obstacles: tuple = ()
    limits: Limits = Limits()
    weights: PenaltyWeights = PenaltyWeights()
    segment_count: int = 6
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("goal_position", "goal_velocity", "anchor_position"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"scenario {name} must be finite")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.segment_count < 1:
            raise ValidationError("segment_count must be at least 1")
        if not (-math.pi < self.yaw <= math.pi):
            raise ValidationError("yaw must lie in (-pi, pi]")

    @property
    def gravity_vector(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.cable.gravity])


@dataclass(frozen=True)
class CostBreakdown:
    """Weighted cost contributions; fields sum to total."""

    smoothness: float = 0.0
    time: float = 0.0
    velocity: float = 0.0
    acceleration: float = 0.0
    jerk: float = 0.0
    thrust: float = 0.0
    obstacle: float = 0.0
    cable: float = 0.0

    @property
    def total(self) -> float:
        return (self.smoothness + self.time + self.velocity + self.acceleration
                + self.jerk + self.thrust + self.obstacle + self.cable)

    def as_dict(self) -> dict:
        return {"smoothness": self.smoothness, "time": self.time,
                "velocity": self.velocity, "acceleration": self.acceleration,
                "jerk": self.jerk, "thrust": self.thrust,
                "obstacle": self.obstacle, "cable": self.cable,
                "total": self.total}


@dataclass
class OptimizeResult:
    trajectory: Trajectory
    breakdown: CostBreakdown
    iterations: int
    status: str
    penalties_ok: bool
    max_violation: float
    history: list = field(default_factory=list)
    message: str = ""


def sample_times(t0: float, t_end: float, kappa: int) -> np.ndarray:
    """kappa+1 equally spaced sample times from t0 to t_end inclusive."""
    return np.linspace(t0, t_end, kappa + 1)


def _hinge(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) ** 3


def _hinge_slope(x: np.ndarray) -> np.ndarray:
    return 3.0 * np.maximum(x, 0.0) ** 2


class _Samples:
    """Shared per-sample data for all sampled penalty terms."""

    def __init__(self, traj: Trajectory, kappa: int):
        self.traj = traj
        n = traj.segment_count
        dt = traj.segment_duration
        total = n * dt
        ts = sample_times(0.0, total, kappa)
        seg = np.minimum((ts / dt).astype(int), n - 1)
        tau = ts - seg * dt
        self.ts = ts
        self.seg = seg
        self.basis = [basis_rows(tau, o) for o in range(5)]
        coeffs = traj.coefficients[seg]
        self.deriv = [np.einsum("sk,skx->sx", self.basis[o], coeffs)
                      for o in range(5)]
        # d tau_i / d dT and d t_i / d dT for the moving sample grid
        self.tau_motion = ts * n / total - seg
        self.time_motion = ts * n / total

    def accumulate(self, grad_c, order, gvec):
        """Add each sample's (basis x gvec) outer product to its segment."""
        np.add.at(grad_c, self.seg,
                  self.basis[order][:, :, None] * gvec[:, None, :])

    def ddt_from_motion(self, order, gvec):
        """Direct dT contribution of an order-``order`` sampled penalty."""
        return float(np.sum(np.sum(gvec * self.deriv[order + 1], axis=1)
                            * self.tau_motion))


def _norm_window_term(samples: _Samples, order: int, low_sq, high_sq,
                      offset=None):
    """Cubic hinges on |derivative - offset|^2 against a squared window."""
    d = samples.deriv[order]
    if offset is not None:
        d = d - offset
    nsq = np.sum(d * d, axis=1)
    slope = np.zeros_like(nsq)
    value = 0.0
    if high_sq is not None:
        over = nsq - high_sq
        value += float(np.sum(_hinge(over)))
        slope += _hinge_slope(over)
    if low_sq is not None:
        under = low_sq - nsq
        value += float(np.sum(_hinge(under)))
        slope -= _hinge_slope(under)
    gvec = 2.0 * d * slope[:, None]
    grad_c = np.zeros_like(samples.traj.coefficients)
    samples.accumulate(grad_c, order, gvec)
    grad_ddt = samples.ddt_from_motion(order, gvec)
    return value, grad_c, grad_ddt


def smoothness_cost(traj: Trajectory):
    """Exact squared-jerk integral and its (coefficients, dT) gradient."""
    value = jerk_energy(traj)
    grad_c, grad_ddt = jerk_energy_gradient(traj)
    return value, (grad_c, grad_ddt)


def feasibility_penalty(traj: Trajectory, limits: Limits, kappa: int | None = None):
    """Velocity + acceleration + jerk hinge penalties (unweighted sum)."""
    samples = _Samples(traj, kappa if kappa is not None else limits.samples)
    value = 0.0
    grad_c = np.zeros_like(traj.coefficients)
    grad_ddt = 0.0
    for order, bound in ((1, limits.v_max), (2, limits.a_max), (3, limits.j_max)):
        v, gc, gd = _norm_window_term(samples, order, None, bound * bound)
        value += v
        grad_c += gc
        grad_ddt += gd
    return value, (grad_c, grad_ddt)


def thrust_penalty(traj: Trajectory, limits: Limits, kappa: int | None = None,
                   gravity: float = 9.81):
    """Two-sided hinge on the net thrust-acceleration magnitude."""
    samples = _Samples(traj, kappa if kappa is not None else limits.samples)
    g_vec = np.array([0.0, 0.0, -gravity])
    value, grad_c, grad_ddt = _norm_window_term(
        samples, 2, limits.tau_min ** 2, limits.tau_max ** 2, offset=g_vec)
    return value, (grad_c, grad_ddt)


def obstacle_penalty(traj: Trajectory, obstacles, margin: float,
                     kappa: int):
    """Hinge on clearance from every half-space obstacle at every sample."""
    samples = _Samples(traj, kappa)
    pos = samples.deriv[0]
    value = 0.0
    gvec = np.zeros_like(pos)
    for plane in obstacles:
        dist = (pos - plane.point) @ plane.normal
        short = margin - dist
        value += float(np.sum(_hinge(short)))
        gvec -= np.outer(_hinge_slope(short), plane.normal)
    grad_c = np.zeros_like(traj.coefficients)
    samples.accumulate(grad_c, 0, gvec)
    grad_ddt = samples.ddt_from_motion(0, gvec)
    return value, (grad_c, grad_ddt)


def _corridor_arrays(positions, ts, scenario, margin: float):
    """(l_min_eff, l_max_eff, l_now, rate, attach) at the given samples."""
    cable = scenario.cable
    attach = positions + np.array([0.0, 0.0, cable.attachment_offset])
    l_min, l_max = corridor_bounds_batch(attach, scenario.anchor_position, cable)
    l_now = scenario.winch.length_at(ts)
    rate = scenario.winch.rate_at(ts)
    return l_min + margin, l_max - margin, l_now, rate, attach


def cable_penalty(traj: Trajectory, scenario: PlanningScenario,
                  kappa: int | None = None):
    """Hinges keeping the released length inside the feasible corridor.

    Gradient with respect to the droid position flows through both corridor
    edges; the upper edge's derivative is a central difference around the
    sag-limited catenary solve.  The released length follows the winch
    schedule, so the sampled times' dependence on T contributes as well.
    """
    limits = scenario.limits
    samples = _Samples(traj, kappa if kappa is not None else limits.samples)
    pos = samples.deriv[0]
    l_min_eff, l_max_eff, l_now, rate, attach = _corridor_arrays(
        pos, samples.ts, scenario, limits.corridor_margin)

    under = l_min_eff ** 2 - l_now ** 2
    over = l_now ** 2 - l_max_eff ** 2
    value = float(np.sum(_hinge(under)) + np.sum(_hinge(over)))
    slope_under = _hinge_slope(under)
    slope_over = _hinge_slope(over)

    # d l_min / d position: unit chord direction in the x-z plane
    dx = attach[:, 0] - scenario.anchor_position[0]
    dz = attach[:, 2] - scenario.anchor_position[2]
    l_min_raw = np.hypot(dx, dz)
    safe = np.where(l_min_raw > 1e-12, l_min_raw, 1.0)
    dlmin_dp = np.zeros_like(pos)
    dlmin_dp[:, 0] = np.where(l_min_raw > 1e-12, dx / safe, 0.0)
    dlmin_dp[:, 2] = np.where(l_min_raw > 1e-12, dz / safe, 0.0)

    # d l_max / d position via differences around the root find
    h_gap = scenario.anchor_position[2] - attach[:, 2]
    dl_dph, dl_dh = sag_length_gradient_batch(np.abs(dx), h_gap, scenario.cable)
    dlmax_dp = np.zeros_like(pos)
    dlmax_dp[:, 0] = dl_dph * np.sign(dx)
    dlmax_dp[:, 2] = -dl_dh

    gvec = (2.0 * l_min_eff * slope_under)[:, None] * dlmin_dp \
        - (2.0 * l_max_eff * slope_over)[:, None] * dlmax_dp
    grad_c = np.zeros_like(traj.coefficients)
    samples.accumulate(grad_c, 0, gvec)
    grad_ddt = samples.ddt_from_motion(0, gvec)
    # the winch schedule is a function of absolute time, which scales with T
    lnow_sens = 2.0 * l_now * rate * (slope_over - slope_under)
    grad_ddt += float(np.sum(lnow_sens * samples.time_motion))
    return value, (grad_c, grad_ddt)


def total_cost(traj: Trajectory, scenario: PlanningScenario,
               weights: PenaltyWeights | None = None,
               limits: Limits | None = None):
    """Full objective: (CostBreakdown, dJ/dq, dJ/dT)."""
    weights = weights if weights is not None else scenario.weights
    limits = limits if limits is not None else scenario.limits
    kappa = limits.samples

    smooth, (grad_c, grad_ddt) = smoothness_cost(traj)
    n_seg = traj.segment_count
    time_cost = limits.time_weight * traj.duration
    grad_ddt += limits.time_weight * n_seg

    samples = _Samples(traj, kappa)
    parts = {}

    def add(name, weight, term):
        value, gc, gd = term
        parts[name] = weight * value
        nonlocal grad_c, grad_ddt
        if weight != 0.0:
            grad_c = grad_c + weight * gc
            grad_ddt += weight * gd

    add("velocity", weights.velocity,
        _norm_window_term(samples, 1, None, limits.v_max ** 2))
    add("acceleration", weights.accel_jerk,
        _norm_window_term(samples, 2, None, limits.a_max ** 2))
    add("jerk", weights.accel_jerk,
        _norm_window_term(samples, 3, None, limits.j_max ** 2))
    add("thrust", weights.thrust,
        _norm_window_term(samples, 2, limits.tau_min ** 2, limits.tau_max ** 2,
                          offset=scenario.gravity_vector))

    if scenario.obstacles and weights.obstacle != 0.0:
        value, (gc, gd) = obstacle_penalty(traj, scenario.obstacles,
                                           limits.obstacle_margin, kappa)
        parts["obstacle"] = weights.obstacle * value
        grad_c = grad_c + weights.obstacle * gc
        grad_ddt += weights.obstacle * gd
    else:
        parts["obstacle"] = 0.0

    if weights.cable != 0.0:
        value, (gc, gd) = cable_penalty(traj, scenario, kappa)
        parts["cable"] = weights.cable * value
        grad_c = grad_c + weights.cable * gc
        grad_ddt += weights.cable * gd
    else:
        parts["cable"] = 0.0

    breakdown = CostBreakdown(smoothness=smooth, time=time_cost, **parts)
    dj_dq, dj_dt = propagate_gradients(traj, grad_c, grad_ddt)
    return breakdown, dj_dq, dj_dt


def hinge_violations(traj: Trajectory, scenario: PlanningScenario,
                     kappa: int | None = None) -> dict:
    """Worst raw hinge argument per penalty term (0 when satisfied).

    Units match each hinge: squared speed/acceleration/jerk/thrust for the
    windowed terms, meters for obstacles, squared meters for the corridor.
    """
    limits = scenario.limits
    samples = _Samples(traj, kappa if kappa is not None else limits.samples)

    def norm_sq(order, offset=None):
        d = samples.deriv[order]
        if offset is not None:
            d = d - offset
        return np.sum(d * d, axis=1)

    out = {
        "velocity": float(np.max(norm_sq(1) - limits.v_max ** 2)),
        "acceleration": float(np.max(norm_sq(2) - limits.a_max ** 2)),
        "jerk": float(np.max(norm_sq(3) - limits.j_max ** 2)),
    }
    tau_sq = norm_sq(2, offset=scenario.gravity_vector)
    out["thrust"] = float(np.max(np.maximum(limits.tau_min ** 2 - tau_sq,
                                            tau_sq - limits.tau_max ** 2)))
    if scenario.obstacles:
        worst = -math.inf
        pos = samples.deriv[0]
        for plane in scenario.obstacles:
            dist = (pos - plane.point) @ plane.normal
            worst = max(worst, float(np.max(limits.obstacle_margin - dist)))
        out["obstacle"] = worst
    else:
        out["obstacle"] = 0.0
    l_min_eff, l_max_eff, l_now, _, _ = _corridor_arrays(
        samples.deriv[0], samples.ts, scenario, limits.corridor_margin)
    out["cable"] = float(np.max(np.maximum(l_min_eff ** 2 - l_now ** 2,
                                           l_now ** 2 - l_max_eff ** 2)))
    return {k: max(v, 0.0) for k, v in out.items()}


def corridor_profile(traj: Trajectory, scenario: PlanningScenario,
                     kappa: int):
    """(t, l_min, l_now, l_max) sampled along the plan, margin-free."""
    ts = sample_times(0.0, traj.duration, kappa)
    pos = traj.evaluate_batch(ts, 0)
    l_min, l_max, l_now, _, _ = _corridor_arrays(pos, ts, scenario, 0.0)
    return ts, l_min, l_now, l_max


def corridor_violation(traj: Trajectory, scenario: PlanningScenario,
                       kappa: int) -> float:
    """Worst squared-length corridor violation on a margin-free check."""
    _, l_min, l_now, l_max = corridor_profile(traj, scenario, kappa)
    worst = np.maximum(l_min ** 2 - l_now ** 2, l_now ** 2 - l_max ** 2)
    return max(float(np.max(worst)), 0.0)


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _softplus_inverse(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus inverse needs a positive argument")
    if y > 30.0:
        return y
    return math.log(math.expm1(y))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def initial_guess(scenario: PlanningScenario):
    """Straight-line waypoints plus a duration consistent with the winch.

    The duration seed makes the released length land mid-corridor at
    arrival, which leaves the most slack on both cable edges; seeding at
    the taut chord instead starts the search pinned against the lower edge
    and can strand a narrow-corridor problem in an infeasible stationary
    point.  When the payout direction cannot reach the corridor at all,
    fall back to a cruise-speed estimate.
    """
    start = scenario.start_state.position
    goal = scenario.goal_position
    n = scenario.segment_count
    fractions = np.arange(1, n)[:, None] / n
    waypoints = start + fractions * (goal - start)

    attach = goal + np.array([0.0, 0.0, scenario.cable.attachment_offset])
    l_min, l_max = corridor_bounds_batch(attach[None, :],
                                         scenario.anchor_position,
                                         scenario.cable)
    target = 0.5 * float(l_min[0] + l_max[0])
    duration = 0.0
    if scenario.winch.payout_speed != 0.0:
        duration = (target - scenario.winch.initial_length) \
            / scenario.winch.payout_speed
    if not (duration > 0.0 and math.isfinite(duration)):
        distance = float(np.linalg.norm(goal - start))
        duration = max(1.5 * distance / scenario.limits.v_max, 1.0)
    return waypoints, max(duration, MIN_DURATION + 0.5)


def optimize(scenario: PlanningScenario, fixed_duration: float | None = None,
             max_iterations: int = 500) -> OptimizeResult:
    """Minimize the penalty objective over waypoints (and duration).

    Always returns the best iterate seen; ``status`` distinguishes clean
    convergence from hitting the iteration cap or a stalled line search, and
    ``penalties_ok`` reports whether every sampled hinge is essentially
    inactive at the returned plan.
    """
    waypoints0, duration0 = initial_guess(scenario)
    if fixed_duration is not None:
        if not fixed_duration > 0:
            raise ValidationError("fixed duration must be positive")
        duration0 = fixed_duration
    n_wp = scenario.segment_count - 1
    optimize_time = fixed_duration is None

    def unpack(x):
        q = x[:3 * n_wp].reshape(n_wp, 3)
        if optimize_time:
            duration = MIN_DURATION + _softplus(float(x[-1]))
        else:
            duration = duration0
        return q, duration

    def build(x):
        q, duration = unpack(x)
        return construct(q, duration, scenario.start_state,
                         scenario.goal_position, scenario.goal_velocity)

    cache = {}

    def objective(x):
        traj = build(x)
        breakdown, dj_dq, dj_dt = total_cost(traj, scenario)
        grad = np.empty(x.shape)
        grad[:3 * n_wp] = dj_dq.ravel()
        if optimize_time:
            grad[-1] = dj_dt * _sigmoid(float(x[-1]))
        key = x.tobytes()
        cache[key] = breakdown
        if len(cache) > 8:
            cache.pop(next(iter(cache)))
        return breakdown.total, grad

    history = []

    def record(xk):
        breakdown = cache.get(xk.tobytes())
        if breakdown is None:
            traj = build(xk)
            breakdown = total_cost(traj, scenario)[0]
        history.append(breakdown)

    x0 = np.empty(3 * n_wp + (1 if optimize_time else 0))
    x0[:3 * n_wp] = waypoints0.ravel()
    if optimize_time:
        x0[-1] = _softplus_inverse(duration0 - MIN_DURATION)

    result = minimize(objective, x0, jac=True, method="L-BFGS-B",
                      callback=record,
                      options={"maxiter": max_iterations, "maxcor": 8,
                               "ftol": 1e-12, "gtol": 1e-6})

    traj = build(result.x)
    breakdown = total_cost(traj, scenario)[0]
    if result.status == 0:
        status = "converged"
    elif result.status == 1:
        status = "max_iterations"
    else:
        status = "line_search_failure"
    violations = hinge_violations(traj, scenario)
    weight_of = {"velocity": scenario.weights.velocity,
                 "acceleration": scenario.weights.accel_jerk,
                 "jerk": scenario.weights.accel_jerk,
                 "thrust": scenario.weights.thrust,
                 "obstacle": scenario.weights.obstacle,
                 "cable": scenario.weights.cable}
    worst = max((v for k, v in violations.items() if weight_of[k] > 0.0),
                default=0.0)
    return OptimizeResult(trajectory=traj, breakdown=breakdown,
                          iterations=int(result.nit), status=status,
                          penalties_ok=worst < VIOLATION_TOL,
                          max_violation=worst, history=history,
                          message=str(result.message))
