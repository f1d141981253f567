"""Scenario files.

A scenario is a YAML document with nested sections::

    name: pickup_level
    scenario:
      start_position_m: [0, 0, 0]
      goal_position_m: [2, 0, 0]
      anchor_position_m: [-2, 0, 3]
      segment_count: 6
    cable:
      sag_limit_m: 0.1
      unit_weight_g_per_m: 0.14
    winch:
      initial_length_m: 3.7
      payout_speed_m_s: 0.2
    limits: { ... }
    weights: { ... }
    obstacles:
      - point_m: [0, 0, 0]
        normal: [0, 0, 1]
    sim: { ... }

Every physical quantity carries its SI unit in the key name; the single
exception is the cable's ``unit_weight_g_per_m`` convenience key (grams per
meter, the way cable stock is labelled), which is converted to kg/m on load
and is mutually exclusive with ``mass_per_length_kg_per_m``.  Unknown keys
are rejected rather than ignored so a typo cannot silently fall back to a
default.  Malformed values raise :class:`~tetherpick.errors.ParseError`
naming the offending field; structurally sound values that violate a domain
invariant raise :class:`~tetherpick.errors.ValidationError`.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import yaml

from .cable import CableProperties, cable_bounds
from .errors import ParseError, ValidationError
from .optimizer import (
    Limits,
    ObstaclePlane,
    PenaltyWeights,
    PlanningScenario,
    WinchSchedule,
)
from .simulation import DroneParams
from .trajectory import BoundaryState

_REQUIRED = object()


@dataclass(frozen=True)
class RetrievalSpec:
    """Parameters for the winch-up phase after the payload is hooked."""

    attach_mass: float
    stow_length: float = 0.2

    def __post_init__(self):
        if not self.attach_mass > 0.0:
            raise ValidationError("retrieval attach_mass must be positive")
        if not self.stow_length >= 0.0:
            raise ValidationError("retrieval stow_length must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    """A named planning problem plus the simulation knobs that go with it."""

    name: str
    planning: PlanningScenario
    drone: DroneParams = DroneParams()
    timestep: float = 1e-3
    retrieval: Optional[RetrievalSpec] = None

    def __post_init__(self):
        if not self.timestep > 0.0:
            raise ValidationError("sim timestep must be positive")


class _Section:
    """One mapping in the document, addressed by a dotted path."""

    def __init__(self, mapping, path: str):
        if mapping is None:
            mapping = {}
        if not isinstance(mapping, dict):
            raise ParseError(f"{path or 'document'} must be a mapping")
        self.mapping = mapping
        self.path = path
        self.seen = set()

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.mapping

    def child(self, key: str) -> "_Section":
        self.seen.add(key)
        return _Section(self.mapping.get(key), self._at(key))

    def raw(self, key: str, default=None):
        self.seen.add(key)
        return self.mapping.get(key, default)

    def number(self, key: str, default=_REQUIRED) -> float:
        self.seen.add(key)
        if key not in self.mapping:
            if default is _REQUIRED:
                raise ParseError(f"missing required field {self._at(key)}")
            return default
        return _as_number(self.mapping[key], self._at(key))

    def integer(self, key: str, default=_REQUIRED) -> int:
        value = self.number(key, default)
        if value != int(value):
            raise ParseError(f"{self._at(key)} must be an integer")
        return int(value)

    def vector(self, key: str, default=_REQUIRED) -> np.ndarray:
        self.seen.add(key)
        if key not in self.mapping:
            if default is _REQUIRED:
                raise ParseError(f"missing required field {self._at(key)}")
            return np.asarray(default, dtype=float)
        value = self.mapping[key]
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ParseError(f"{self._at(key)} must be a list of 3 numbers")
        return np.array([_as_number(v, f"{self._at(key)}[{i}]")
                         for i, v in enumerate(value)])

    def text(self, key: str, default=_REQUIRED) -> str:
        self.seen.add(key)
        if key not in self.mapping:
            if default is _REQUIRED:
                raise ParseError(f"missing required field {self._at(key)}")
            return default
        value = self.mapping[key]
        if not isinstance(value, str):
            raise ParseError(f"{self._at(key)} must be a string")
        return value

    def finish(self) -> None:
        unknown = sorted(set(self.mapping) - self.seen)
        if unknown:
            raise ValidationError(
                f"unknown key {self._at(unknown[0])} "
                f"(known keys: {', '.join(sorted(self.seen))})")


def _as_number(value, where: str) -> float:
    # YAML 1.1 reads bare "1e4" as a string, so accept numeric strings too;
    # bools are ints in Python and must not sneak through
    if isinstance(value, bool):
        raise ParseError(f"{where} must be a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ParseError(f"{where} must be a number, got {value!r}") \
                from None
    raise ParseError(f"{where} must be a number")


def _parse_cable(section: _Section) -> CableProperties:
    grams = section.has("unit_weight_g_per_m")
    kilos = section.has("mass_per_length_kg_per_m")
    if grams and kilos:
        raise ValidationError(
            "cable: give unit_weight_g_per_m or mass_per_length_kg_per_m, "
            "not both")
    if grams:
        mass_per_length = section.number("unit_weight_g_per_m") * 1e-3
    elif kilos:
        mass_per_length = section.number("mass_per_length_kg_per_m")
    else:
        mass_per_length = 1.4e-4
    kwargs = dict(
        mass_per_length=mass_per_length,
        gravity=section.number("gravity_m_s2", 9.81),
        sag_limit=section.number("sag_limit_m", 0.1),
        attachment_offset=section.number("attachment_offset_m", 0.0),
    )
    section.finish()
    try:
        return CableProperties(**kwargs)
    except ValueError as exc:
        raise ValidationError(f"cable: {exc}") from None


def _parse_limits(section: _Section) -> Limits:
    kwargs = dict(
        v_max=section.number("v_max_m_s", 2.0),
        a_max=section.number("a_max_m_s2", 6.0),
        j_max=section.number("j_max_m_s3", 30.0),
        tau_min=section.number("tau_min_m_s2", 2.0),
        tau_max=section.number("tau_max_m_s2", 20.0),
        samples=section.integer("samples", 32),
        obstacle_margin=section.number("obstacle_margin_m", 0.3),
        time_weight=section.number("time_weight", 20.0),
        corridor_margin=section.number("corridor_margin_m", 0.0),
    )
    section.finish()
    return Limits(**kwargs)


def _parse_weights(section: _Section) -> PenaltyWeights:
    kwargs = dict(
        velocity=section.number("velocity", 1e4),
        accel_jerk=section.number("accel_jerk", 1e4),
        thrust=section.number("thrust", 1e4),
        cable=section.number("cable", 1e5),
        obstacle=section.number("obstacle", 1e5),
    )
    section.finish()
    return PenaltyWeights(**kwargs)


def _parse_winch(section: _Section) -> WinchSchedule:
    schedule = WinchSchedule(
        initial_length=section.number("initial_length_m"),
        payout_speed=section.number("payout_speed_m_s", 0.0),
        capacity=section.number("capacity_m", float("inf")),
    )
    section.finish()
    return schedule


def _parse_obstacles(raw, path: str) -> Sequence[ObstaclePlane]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ParseError(f"{path} must be a list of planes")
    planes = []
    for i, entry in enumerate(raw):
        section = _Section(entry, f"{path}[{i}]")
        point = section.vector("point_m")
        normal = section.vector("normal")
        section.finish()
        # the math type insists on unit normals; scale hand-written ones
        norm = float(np.linalg.norm(normal))
        if norm <= 0.0:
            raise ValidationError(f"{path}[{i}].normal must be nonzero")
        planes.append(ObstaclePlane(point, normal / norm))
    return tuple(planes)


def _parse_sim(section: _Section):
    drone = DroneParams(
        mass=section.number("drone_mass_kg", 0.6),
        gravity=section.number("gravity_m_s2", 9.81),
        kp=section.number("position_gain", 16.0),
        kd=section.number("velocity_gain", 8.0),
    )
    timestep = section.number("timestep_s", 1e-3)
    retrieval = None
    if section.has("retrieval"):
        sub = section.child("retrieval")
        retrieval = RetrievalSpec(
            attach_mass=sub.number("attach_mass_kg"),
            stow_length=sub.number("stow_length_m", 0.2),
        )
        sub.finish()
    section.finish()
    return drone, timestep, retrieval


def _warn_if_unreachable(planning: PlanningScenario) -> None:
    """Emit a warning when the winch can never match the goal's corridor."""
    attach = planning.goal_position \
        + np.array([0.0, 0.0, planning.cable.attachment_offset])
    bounds = cable_bounds(attach, planning.anchor_position,
                          planning.winch.initial_length, planning.cable)
    start = planning.winch.initial_length
    if planning.winch.payout_speed > 0.0:
        reachable = (start, planning.winch.capacity)
    elif planning.winch.payout_speed < 0.0:
        reachable = (0.0, start)
    else:
        reachable = (start, start)
    if reachable[1] < bounds.l_min or reachable[0] > bounds.l_max:
        warnings.warn(
            f"goal corridor [{bounds.l_min:.3f}, {bounds.l_max:.3f}] m is "
            f"outside the achievable released lengths "
            f"[{reachable[0]:.3f}, {reachable[1]:.3f}] m",
            stacklevel=3)


def parse_scenario(document, name_fallback: str = "scenario") -> Scenario:
    """Build a validated Scenario from an already-loaded YAML mapping."""
    root = _Section(document, "")
    name = root.text("name", name_fallback)

    core = root.child("scenario")
    start_state = BoundaryState(
        position=core.vector("start_position_m"),
        velocity=core.vector("start_velocity_m_s", (0.0, 0.0, 0.0)),
        acceleration=core.vector("start_acceleration_m_s2", (0.0, 0.0, 0.0)),
        jerk=core.vector("start_jerk_m_s3", (0.0, 0.0, 0.0)),
    )
    goal_position = core.vector("goal_position_m")
    goal_velocity = core.vector("goal_velocity_m_s", (0.0, 0.0, 0.0))
    anchor_position = core.vector("anchor_position_m")
    segment_count = core.integer("segment_count", 6)
    yaw = core.number("yaw_rad", 0.0)
    core.finish()

    cable = _parse_cable(root.child("cable"))
    winch = _parse_winch(root.child("winch"))
    limits = _parse_limits(root.child("limits"))
    weights = _parse_weights(root.child("weights"))
    obstacles = _parse_obstacles(root.raw("obstacles"), "obstacles")
    drone, timestep, retrieval = _parse_sim(root.child("sim"))
    root.finish()

    planning = PlanningScenario(
        start_state=start_state,
        goal_position=goal_position,
        goal_velocity=goal_velocity,
        anchor_position=anchor_position,
        winch=winch,
        cable=cable,
        obstacles=obstacles,
        limits=limits,
        weights=weights,
        segment_count=segment_count,
        yaw=yaw,
    )
    _warn_if_unreachable(planning)
    return Scenario(name=name, planning=planning, drone=drone,
                    timestep=timestep, retrieval=retrieval)


def load_document(path):
    """Read a scenario file into its raw mapping, without validation.

    Used directly by parameter sweeps, which patch the mapping before
    handing it to :func:`parse_scenario`.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ParseError(f"invalid YAML in {path}{where}: {exc}") from None


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    document = load_document(path)
    fallback = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_scenario(document, name_fallback=fallback)
