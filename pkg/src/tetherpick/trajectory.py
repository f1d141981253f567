"""Uniform piecewise-quintic trajectories and their parameter gradients.

A trajectory with N segments of equal duration dT is described per axis by
6N polynomial coefficients.  Construction solves the square linear system

    rows 0..3                position, velocity, acceleration, jerk at t = 0
    per interior joint i     left-limit position  = waypoint i
                             right-limit position = waypoint i
                             continuity of derivative orders 1..4
    last two rows            position and velocity at t = T

The system matrix depends only on (N, dT) and is banded, so the solve cost
is linear in N.  Gradients of a scalar cost with respect to the waypoints
and the total duration come out of a transposed solve against the same
matrix, which is how the planner backpropagates its sampled penalties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import OutOfDomain, SingularSystem

DEGREE = 5
NCOEF = DEGREE + 1
CONTINUITY_ORDER = 4

# FALLING[o, k] = k!/(k-o)!, the coefficient of tau^(k-o) in d^o/dtau^o tau^k.
FALLING = np.zeros((NCOEF + 2, NCOEF))
for _o in range(NCOEF + 2):
    for _k in range(NCOEF):
        if _k >= _o:
            FALLING[_o, _k] = math.factorial(_k) // math.factorial(_k - _o)


def basis_row(tau: float, order: int) -> np.ndarray:
    """Row vector b with b[k] = d^order/dtau^order tau^k."""
    row = np.zeros(NCOEF)
    if order < NCOEF:
        for k in range(order, NCOEF):
            row[k] = FALLING[order, k] * tau ** (k - order)
    return row


def basis_rows(taus: np.ndarray, order: int) -> np.ndarray:
    """Stacked basis rows for a vector of in-segment times."""
    taus = np.asarray(taus, dtype=float)
    rows = np.zeros(taus.shape + (NCOEF,))
    if order < NCOEF:
        for k in range(order, NCOEF):
            rows[..., k] = FALLING[order, k] * taus ** (k - order)
    return rows


def _as_vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class BoundaryState:
    """Full kinematic state at the start of a trajectory."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _as_vec3(self.position, "position"))
        object.__setattr__(self, "velocity", _as_vec3(self.velocity, "velocity"))
        object.__setattr__(self, "acceleration",
                           _as_vec3(self.acceleration, "acceleration"))
        object.__setattr__(self, "jerk", _as_vec3(self.jerk, "jerk"))

    @classmethod
    def at_rest(cls, position) -> "BoundaryState":
        zero = np.zeros(3)
        return cls(position=position, velocity=zero, acceleration=zero, jerk=zero)


@dataclass(frozen=True)
class FlatOutput:
    """Flat output of the end droid: position plus yaw."""

    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _as_vec3(self.position, "position"))
        if not (-math.pi < self.yaw <= math.pi):
            raise ValueError("yaw must lie in (-pi, pi]")


@dataclass(frozen=True)
class Trajectory:
    """Piecewise quintic with shape (segments, 6 coefficients, 3 axes)."""

    coefficients: np.ndarray
    segment_duration: float

    @property
    def segment_count(self) -> int:
        return self.coefficients.shape[0]

    @property
    def duration(self) -> float:
        return self.segment_count * self.segment_duration

    def _locate(self, t: float) -> tuple[int, float]:
        total = self.duration
        tol = 1e-9 * max(1.0, total)
        if t < -tol or t > total + tol:
            raise OutOfDomain(f"time {t!r} outside [0, {total!r}]")
        t = min(max(t, 0.0), total)
        seg = min(int(t / self.segment_duration), self.segment_count - 1)
        return seg, t - seg * self.segment_duration

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        """Order-th time derivative at t; right limit at joints."""
        seg, tau = self._locate(float(t))
        return basis_row(tau, order) @ self.coefficients[seg]

    def evaluate_segment(self, seg: int, tau: float, order: int = 0) -> np.ndarray:
        """Evaluate one segment's polynomial directly (for one-sided limits)."""
        if not 0 <= seg < self.segment_count:
            raise OutOfDomain(f"segment {seg} out of range")
        return basis_row(tau, order) @ self.coefficients[seg]

    def evaluate_batch(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        """Vectorized evaluate; ts shape (n,) -> result shape (n, 3)."""
        ts = np.asarray(ts, dtype=float)
        total = self.duration
        tol = 1e-9 * max(1.0, total)
        if np.any(ts < -tol) or np.any(ts > total + tol):
            raise OutOfDomain("batch times outside trajectory domain")
        clipped = np.clip(ts, 0.0, total)
        seg = np.minimum((clipped / self.segment_duration).astype(int),
                         self.segment_count - 1)
        taus = clipped - seg * self.segment_duration
        rows = basis_rows(taus, order)
        return np.einsum("nk,nkx->nx", rows, self.coefficients[seg])


def _system_triplets(n_seg: int, dt: float):
    """Nonzero entries of the coefficient system plus its dT-dependent rows.

    Returns (triplets, eval_rows) where triplets is a list of (row, col,
    value) and eval_rows lists (row, segment, order) for every row that
    evaluates a basis at tau = dT; those are the only entries that move when
    dT changes, and d(entry)/d(dT) is the order+1 basis row.
    """
    triplets = []
    eval_rows = []
    for o in range(4):
        triplets.append((o, o, float(FALLING[o, o])))
    row = 4
    for i in range(1, n_seg):
        left = NCOEF * (i - 1)
        right = NCOEF * i
        b0 = basis_row(dt, 0)
        triplets += [(row, left + k, b0[k]) for k in range(NCOEF)]
        eval_rows.append((row, i - 1, 0))
        row += 1
        triplets.append((row, right, 1.0))
        row += 1
        for o in range(1, CONTINUITY_ORDER + 1):
            bo = basis_row(dt, o)
            triplets += [(row, left + k, bo[k]) for k in range(o, NCOEF)]
            triplets.append((row, right + o, -float(FALLING[o, o])))
            eval_rows.append((row, i - 1, o))
            row += 1
    last = NCOEF * (n_seg - 1)
    for o in range(2):
        bo = basis_row(dt, o)
        triplets += [(row, last + k, bo[k]) for k in range(o, NCOEF)]
        eval_rows.append((row, n_seg - 1, o))
        row += 1
    return triplets, eval_rows


def _banded_from_triplets(triplets, size: int, transpose: bool = False):
    lower = max(r - c for r, c, _ in triplets)
    upper = max(c - r for r, c, _ in triplets)
    if transpose:
        ab = np.zeros((lower + upper + 1, size))
        for r, c, v in triplets:
            ab[lower + c - r, r] = v
        return (upper, lower), ab
    ab = np.zeros((lower + upper + 1, size))
    for r, c, v in triplets:
        ab[upper + r - c, c] = v
    return (lower, upper), ab


def construct(waypoints, total_duration: float, start: BoundaryState,
              goal_position, goal_velocity) -> Trajectory:
    """Build the trajectory through the waypoints in the given total time.

    ``waypoints`` are the N-1 interior positions visited at the segment
    joints; an empty sequence gives a single segment.
    """
    q = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    n_seg = q.shape[0] + 1
    if not (total_duration > 0.0 and math.isfinite(total_duration)):
        raise SingularSystem(f"total duration must be positive, got {total_duration!r}")
    dt = total_duration / n_seg
    goal_position = _as_vec3(goal_position, "goal_position")
    goal_velocity = _as_vec3(goal_velocity, "goal_velocity")
    if not np.all(np.isfinite(q)):
        raise ValueError("waypoints must be finite")

    size = NCOEF * n_seg
    rhs = np.zeros((size, 3))
    rhs[0] = start.position
    rhs[1] = start.velocity
    rhs[2] = start.acceleration
    rhs[3] = start.jerk
    row = 4
    for i in range(1, n_seg):
        rhs[row] = q[i - 1]
        rhs[row + 1] = q[i - 1]
        row += NCOEF
    rhs[-2] = goal_position
    rhs[-1] = goal_velocity

    triplets, _ = _system_triplets(n_seg, dt)
    bands, ab = _banded_from_triplets(triplets, size)
    try:
        sol = solve_banded(bands, ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    except ValueError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("coefficient solve produced non-finite values")
    return Trajectory(coefficients=sol.reshape(n_seg, NCOEF, 3),
                      segment_duration=dt)


def total_duration(traj: Trajectory) -> float:
    return traj.duration


def propagate_gradients(traj: Trajectory, dj_dcoef: np.ndarray,
                        dj_ddt: float = 0.0):
    """Pull a coefficient-space gradient back onto waypoints and duration.

    ``dj_dcoef`` is the partial of the cost with respect to the coefficient
    array (same shape), holding dT fixed; ``dj_ddt`` is the direct partial
    with respect to dT holding the coefficients fixed.  Returns (dJ/dq with
    shape (N-1, 3), dJ/dT) where T is the total duration.
    """
    n_seg = traj.segment_count
    dt = traj.segment_duration
    size = NCOEF * n_seg
    grad_flat = np.asarray(dj_dcoef, dtype=float).reshape(size, 3)

    triplets, eval_rows = _system_triplets(n_seg, dt)
    bands_t, ab_t = _banded_from_triplets(triplets, size, transpose=True)
    lam = solve_banded(bands_t, ab_t, grad_flat)

    dj_dq = np.zeros((n_seg - 1, 3))
    for i in range(1, n_seg):
        r = 4 + NCOEF * (i - 1)
        dj_dq[i - 1] = lam[r] + lam[r + 1]

    # The matrix moves with dT only in rows that evaluate a basis at tau=dT,
    # and row-wise d(M)/d(dT) c = basis(dT, order+1) @ c_segment.
    mprime_c = np.zeros((size, 3))
    for r, seg, order in eval_rows:
        mprime_c[r] = basis_row(dt, order + 1) @ traj.coefficients[seg]
    chain = float(np.sum(lam * mprime_c))
    return dj_dq, (dj_ddt - chain) / n_seg


def _jerk_gram(dt: float) -> np.ndarray:
    """Gram matrix of third-derivative basis products over one segment."""
    g = np.zeros((NCOEF, NCOEF))
    for m in range(3, NCOEF):
        for n in range(3, NCOEF):
            g[m, n] = (FALLING[3, m] * FALLING[3, n]
                       * dt ** (m + n - 5) / (m + n - 5))
    return g


def jerk_energy(traj: Trajectory) -> float:
    """Integral of the squared jerk magnitude over the whole trajectory."""
    g = _jerk_gram(traj.segment_duration)
    return float(np.einsum("skx,km,smx->", traj.coefficients, g,
                           traj.coefficients))


def jerk_energy_gradient(traj: Trajectory):
    """(dJ/dcoefficients, direct dJ/ddT) for the squared-jerk integral."""
    g = _jerk_gram(traj.segment_duration)
    grad_c = 2.0 * np.einsum("km,smx->skx", g, traj.coefficients)
    end_jerk = np.einsum("k,skx->sx", basis_row(traj.segment_duration, 3),
                         traj.coefficients)
    return grad_c, float(np.sum(end_jerk * end_jerk))
