"""TAP library and the robot-controller state machine that arbitrates TAPs.

A TAP (teleoperation augmentation primitive) is one of:

* an axis lock/unlock — instantaneous, installs or clears a standing mask;
* a perching waypoint — occupies the controller while it drives the arm to a
  fixed pose at bounded speed;
* an open-loop routine — occupies the controller while it plays out a fully
  pre-expanded action list (the unscrew routine being the shipped instance).

While a waypoint or routine is active, incoming policy/operator actions and
new trigger commands are discarded; the tick after it finishes, the policy
action for that tick executes (zero-tick handback). A standing axis-lock mask
is suspended for the duration of an occupying TAP and re-applied afterwards
with its original reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .action import Action
from .geometry import (
    AxisMask,
    Pose,
    PoseDelta,
    compose,
    pose_difference,
    project_locked,
    quat_angle_between,
    quat_rotate,
)

# A TAP command is either Empty (None) or a library id.
TapCommand = Optional[int]
EMPTY: TapCommand = None


class TapKind(Enum):
    AXIS_LOCK = "axis_lock"
    AXIS_UNLOCK = "axis_unlock"
    WAYPOINT = "waypoint"
    ROUTINE = "routine"


@dataclass(frozen=True)
class RoutineParams:
    """Parameters of the unscrew routine.

    cycles repetitions of {close, rotate CCW, open, rotate CW} followed by the
    final {close, rotate CCW, straight lift}. Angles are tool-frame yaw; the
    gripper force parameter is accepted but maps to binary open/close in sim.
    """

    cycles: int = 4
    angle_per_grab: float = 2.0 * math.pi
    lift_height: float = 0.08
    yaw_speed: float = 5.0  # rad/s
    lift_speed: float = 0.2  # m/s
    grip_ticks: int = 4
    gripper_force: float = 1.0


@dataclass(frozen=True)
class TapSpec:
    id: int
    name: str
    kind: TapKind
    priority: int
    mask: AxisMask | None = None  # AXIS_LOCK
    waypoint: Pose | None = None  # WAYPOINT
    linear_speed: float = 0.2  # m/s, WAYPOINT
    angular_speed: float = 1.0  # rad/s, WAYPOINT
    routine: RoutineParams | None = None  # ROUTINE

    def occupies_controller(self) -> bool:
        return self.kind in (TapKind.WAYPOINT, TapKind.ROUTINE)


class TapLibrary:
    """Per-task set of TAP specs; ids contiguous from 0, priorities unique."""

    def __init__(self, specs: list[TapSpec]):
        ids = [s.id for s in specs]
        if ids != list(range(len(specs))):
            raise ValueError(f"TAP ids must be contiguous from 0, got {ids}")
        priorities = [s.priority for s in specs]
        if len(set(priorities)) != len(priorities):
            raise ValueError("TAP priorities must be unique")
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ValueError("TAP names must be unique")
        self.specs = list(specs)
        self._by_name = {s.name: s for s in specs}

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def get(self, tap_id: int) -> TapSpec:
        return self.specs[tap_id]

    def has(self, tap_id) -> bool:
        return isinstance(tap_id, (int, np.integer)) and 0 <= tap_id < len(self.specs)

    def by_name(self, name: str) -> TapSpec:
        return self._by_name[name]


def resolve_simultaneous(commands: set[TapCommand] | list[TapCommand], library: TapLibrary) -> TapCommand:
    """Pick the highest-priority non-Empty command; all-Empty gives Empty."""
    if not commands:
        raise ValueError("resolve_simultaneous requires a non-empty command set")
    live = [c for c in commands if c is not EMPTY]
    if not live:
        return EMPTY
    return max(live, key=lambda c: library.get(c).priority)


# ---------------------------------------------------------------------------
# routine expansion
# ---------------------------------------------------------------------------

def routine_step_sequence(params: RoutineParams) -> list[str]:
    """Ordered step labels: cycles x [close, ccw, open, cw] then close, ccw, lift."""
    steps: list[str] = []
    for _ in range(params.cycles):
        steps += ["close", "ccw", "open", "cw"]
    steps += ["close", "ccw", "lift"]
    return steps


def _rotation_ticks(angle: float, per_tick: float) -> list[float]:
    """Split a rotation segment into per-tick increments summing exactly to angle."""
    if angle <= 0.0:
        return []
    n = math.ceil(angle / per_tick - 1e-12)
    increments = [per_tick] * (n - 1)
    increments.append(angle - per_tick * (n - 1))
    return increments


def routine_trajectory(spec: TapSpec, start: Pose, control_period: float) -> list[Action]:
    """Expand a routine into its full per-tick action list, world-independent.

    Rotations are pure yaw about the tool z axis. Rotating about the tool axis
    keeps that axis fixed in the base frame, so each rotation segment emits a
    constant base-frame axis-angle increment computed from the pose the
    open-loop path reaches at the start of the segment.
    """
    if spec.kind is not TapKind.ROUTINE:
        raise ValueError(f"routine_trajectory needs a Routine spec, got {spec.kind}")
    params = spec.routine or RoutineParams()
    yaw_per_tick = params.yaw_speed * control_period
    lift_per_tick = params.lift_speed * control_period

    actions: list[Action] = []
    pose = start.copy()
    grip = 0.0

    def emit(action: Action) -> None:
        nonlocal pose
        actions.append(action)
        pose = compose(pose, action.delta)

    def rotate(sign: float) -> None:
        axis = quat_rotate(pose.orientation, np.array([0.0, 0.0, 1.0]))
        for inc in _rotation_ticks(params.angle_per_grab, yaw_per_tick):
            emit(Action(PoseDelta(np.zeros(3), sign * inc * axis), grip))

    for step in routine_step_sequence(params):
        if step == "close":
            grip = 1.0
            for _ in range(params.grip_ticks):
                emit(Action(PoseDelta.zero(), grip))
        elif step == "open":
            grip = 0.0
            for _ in range(params.grip_ticks):
                emit(Action(PoseDelta.zero(), grip))
        elif step == "ccw":
            rotate(+1.0)
        elif step == "cw":
            rotate(-1.0)
        elif step == "lift":
            remaining = params.lift_height
            while remaining > 1e-12:
                dz = min(lift_per_tick, remaining)
                emit(Action(PoseDelta(np.array([0.0, 0.0, dz]), np.zeros(3)), grip))
                remaining -= dz
    return actions


# ---------------------------------------------------------------------------
# waypoint stepping
# ---------------------------------------------------------------------------

WAYPOINT_POS_TOL = 1e-3  # m
WAYPOINT_ANG_TOL = 1e-2  # rad


def waypoint_step(spec: TapSpec, current: Pose, control_period: float) -> tuple[Action, bool]:
    """One bounded-speed step toward the waypoint; finished means the pose
    after applying the returned action is within tolerance of the target."""
    if spec.kind is not TapKind.WAYPOINT:
        raise ValueError(f"waypoint_step needs a Waypoint spec, got {spec.kind}")
    target = spec.waypoint
    offset = target.position - current.position
    dist = float(np.linalg.norm(offset))
    step_len = min(spec.linear_speed * control_period, dist)
    translation = offset * (step_len / dist) if dist > 1e-12 else np.zeros(3)

    rel = pose_difference(current, target).rotation
    angle = float(np.linalg.norm(rel))
    step_ang = min(spec.angular_speed * control_period, angle)
    rotation = rel * (step_ang / angle) if angle > 1e-12 else np.zeros(3)

    action = Action(PoseDelta(translation, rotation), 0.0)
    after = compose(current, action.delta)
    finished = (
        float(np.linalg.norm(after.position - target.position)) <= WAYPOINT_POS_TOL
        and quat_angle_between(after.orientation, target.orientation) <= WAYPOINT_ANG_TOL
    )
    return action, finished


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControllerState:
    """Algorithm-2 controller state; at most one TAP active at a time."""

    active: TapCommand = EMPTY
    routine_actions: tuple[Action, ...] = ()
    routine_index: int = 0
    waypoint_initial_distance: float = 0.0
    mask: AxisMask | None = None
    lock_reference: Pose | None = None

    def tap_progress(self) -> float | None:
        """Routine fraction of emitted ticks, or waypoint travel fraction."""
        if self.active is EMPTY:
            return None
        if self.routine_actions:
            return self.routine_index / max(1, len(self.routine_actions))
        return None  # waypoint progress is reported by the runtime from pose


@dataclass(frozen=True)
class TapEvent:
    tap_id: int
    status: str  # accepted | discarded | rejected
    source: str  # policy | operator


@dataclass(frozen=True)
class TickResult:
    state: ControllerState
    action: Action
    source: str  # "policy" | "tap"
    events: tuple[TapEvent, ...] = ()
    finished_tap: TapCommand = EMPTY


def _apply_mask(cs: ControllerState, current: Pose, action: Action) -> Action:
    """Project the commanded target through the standing lock mask."""
    if cs.mask is None or not cs.mask.any_locked():
        return action
    target = compose(current, action.delta)
    projected = project_locked(target, cs.lock_reference, cs.mask)
    return Action(pose_difference(current, projected), action.gripper)


def controller_tick(
    cs: ControllerState,
    ee_pose: Pose,
    action: Action,
    tap: TapCommand,
    library: TapLibrary,
    control_period: float,
    source: str = "policy",
) -> TickResult:
    """One control period of the TAP-arbitration controller.

    Semantics: a non-Empty command received while idle activates that TAP this
    tick; while a waypoint/routine is active its open-loop behavior is emitted
    and both the incoming action and any new command are discarded; when it
    finishes, the very next tick executes the incoming policy action. Axis
    locks/unlocks complete instantly by installing/clearing the standing mask
    and never occupy the controller.
    """
    events: list[TapEvent] = []

    if cs.active is EMPTY and tap is not EMPTY:
        if not library.has(tap):
            events.append(TapEvent(int(tap), "rejected", source))
            return TickResult(cs, _apply_mask(cs, ee_pose, action), "policy", tuple(events))
        spec = library.get(tap)
        events.append(TapEvent(spec.id, "accepted", source))
        if spec.kind is TapKind.AXIS_LOCK:
            cs = replace(cs, mask=spec.mask, lock_reference=ee_pose.copy())
            return TickResult(cs, _apply_mask(cs, ee_pose, action), "policy", tuple(events))
        if spec.kind is TapKind.AXIS_UNLOCK:
            cs = replace(cs, mask=None, lock_reference=None)
            return TickResult(cs, action, "policy", tuple(events))
        if spec.kind is TapKind.ROUTINE:
            trajectory = tuple(routine_trajectory(spec, ee_pose, control_period))
            if not trajectory:  # degenerate parameters: nothing to execute
                return TickResult(cs, _apply_mask(cs, ee_pose, action), "policy", tuple(events))
            cs = replace(cs, active=spec.id, routine_actions=trajectory, routine_index=0)
        else:  # WAYPOINT
            dist = float(np.linalg.norm(spec.waypoint.position - ee_pose.position))
            cs = replace(
                cs, active=spec.id, routine_actions=(), routine_index=0,
                waypoint_initial_distance=dist,
            )

    if cs.active is not EMPTY:
        if tap is not EMPTY and not events:
            # a trigger arrived while another TAP runs: discard it
            status = "discarded" if library.has(tap) else "rejected"
            events.append(TapEvent(int(tap), status, source))
        spec = library.get(cs.active)
        if spec.kind is TapKind.ROUTINE:
            emitted = cs.routine_actions[cs.routine_index]
            index = cs.routine_index + 1
            finished = index >= len(cs.routine_actions)
            cs = replace(
                cs,
                routine_index=index,
                active=EMPTY if finished else cs.active,
                routine_actions=() if finished else cs.routine_actions,
            )
        else:
            emitted, finished = waypoint_step(spec, ee_pose, control_period)
            if finished:
                cs = replace(cs, active=EMPTY, waypoint_initial_distance=0.0)
        return TickResult(
            cs, emitted, "tap", tuple(events), finished_tap=spec.id if finished else EMPTY
        )

    return TickResult(cs, _apply_mask(cs, ee_pose, action), "policy", tuple(events))
