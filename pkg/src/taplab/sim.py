"""Deterministic flying-gripper workspace with the three benchmark tasks.

The world is a value: ``step``/``observe``/``success`` are pure functions, so
identical (config, action stream) pairs produce bitwise-identical
trajectories. Liquid is a scalar volume; all shipped volumes and flow rates
are dyadic rationals so conservation holds exactly in float64.

The unscrew observation deliberately hides both the lid's remaining thread
turns and its mounted flag: a lid sitting on the container looks the same
whether it is fully threaded or already free. That ambiguity is the failure
mode the TAP routine is meant to beat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .action import Action
from .geometry import (
    Pose,
    clamp_delta,
    compose,
    quat_conjugate,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    quat_to_rotvec,
)
from .tasks import (
    CONTAINER_A_NOMINAL,
    CONTAINER_B_NOMINAL,
    CONTAINER_TOP,
    EE_START_POSITION,
    INITIAL_LIQUID,
    LID_SEAT,
    PLACE_REGION_CENTER,
    TASK_SALT,
    VIAL_NOMINAL,
    TaskConfig,
    TaskName,
)

UP = np.array([0.0, 0.0, 1.0])
TURN_SLACK = 0.01  # rad of forgiveness per full thread turn


class ObjectKind(Enum):
    VIAL = "vial"
    CONTAINER_A = "container_a"
    CONTAINER_B = "container_b"
    LID = "lid"
    TABLE = "table"


@dataclass
class ObjectState:
    id: str
    kind: ObjectKind
    pose: Pose
    liquid_volume: float | None = None  # vial / containers only
    remaining_turns: int | None = None  # lid only
    mounted: bool | None = None  # lid only

    def __post_init__(self) -> None:
        if self.remaining_turns is not None and self.kind is not ObjectKind.LID:
            raise ValueError("remaining_turns only defined for lids")
        if self.liquid_volume is not None and self.kind not in (
            ObjectKind.VIAL, ObjectKind.CONTAINER_A, ObjectKind.CONTAINER_B
        ):
            raise ValueError("liquid_volume only defined for liquid vessels")

    def copy(self) -> "ObjectState":
        return ObjectState(
            self.id, self.kind, self.pose.copy(),
            self.liquid_volume, self.remaining_turns, self.mounted,
        )


@dataclass
class WorldState:
    ee_pose: Pose
    gripper: float = 0.0
    held_object: str | None = None
    held_offset: tuple[np.ndarray, np.ndarray] | None = None  # (pos in EE frame, quat)
    grasp_ee_position: np.ndarray | None = None
    objects: dict[str, ObjectState] = field(default_factory=dict)
    tick: int = 0
    syringe_volume: float = 0.0
    unscrew_progress: float = 0.0  # accumulated CCW yaw toward the next turn
    failure: str | None = None

    def copy(self) -> "WorldState":
        return WorldState(
            ee_pose=self.ee_pose.copy(),
            gripper=self.gripper,
            held_object=self.held_object,
            held_offset=None if self.held_offset is None else (
                self.held_offset[0].copy(), self.held_offset[1].copy()
            ),
            grasp_ee_position=None if self.grasp_ee_position is None
            else self.grasp_ee_position.copy(),
            objects={k: v.copy() for k, v in self.objects.items()},
            tick=self.tick,
            syringe_volume=self.syringe_volume,
            unscrew_progress=self.unscrew_progress,
            failure=self.failure,
        )

    def tip_position(self, tip_length: float) -> np.ndarray:
        return self.ee_pose.position + quat_rotate(
            self.ee_pose.orientation, np.array([0.0, 0.0, -tip_length])
        )

    def digest(self) -> bytes:
        """Byte fingerprint of the full state, for bitwise-determinism checks."""
        parts = [
            self.ee_pose.as_vector().tobytes(),
            np.float64(self.gripper).tobytes(),
            (self.held_object or "").encode(),
            np.int64(self.tick).tobytes(),
            np.float64(self.syringe_volume).tobytes(),
            np.float64(self.unscrew_progress).tobytes(),
            (self.failure or "").encode(),
        ]
        if self.held_offset is not None:
            parts.append(self.held_offset[0].tobytes())
            parts.append(self.held_offset[1].tobytes())
        if self.grasp_ee_position is not None:
            parts.append(self.grasp_ee_position.tobytes())
        for key in sorted(self.objects):
            o = self.objects[key]
            parts.append(key.encode())
            parts.append(o.pose.as_vector().tobytes())
            parts.append(np.float64(-1.0 if o.liquid_volume is None else o.liquid_volume).tobytes())
            parts.append(np.int64(-1 if o.remaining_turns is None else o.remaining_turns).tobytes())
            parts.append(np.int64(-1 if o.mounted is None else int(o.mounted)).tobytes())
        return b"|".join(parts)


@dataclass
class Observation:
    """Policy-visible state: EE pose, gripper, and per-task feature scalars."""

    ee_pose: Pose
    gripper: float
    task_features: np.ndarray

    def as_vector(self) -> np.ndarray:
        rot6 = quat_to_matrix(self.ee_pose.orientation)[:, :2].reshape(-1, order="F")
        return np.concatenate(
            [self.ee_pose.position, rot6, [self.gripper], self.task_features]
        )


# ---------------------------------------------------------------------------
# reset
# ---------------------------------------------------------------------------

def reset(config: TaskConfig) -> WorldState:
    """Deterministic initial state for (task, seed); jitter within config ranges."""
    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, TASK_SALT[config.task]])
    jitter = config.randomization.position_jitter

    def jitter_xy(nominal: np.ndarray) -> np.ndarray:
        out = nominal.copy()
        out[0] += rng.uniform(-jitter, jitter)
        out[1] += rng.uniform(-jitter, jitter)
        return out

    objects: dict[str, ObjectState] = {}
    objects["table"] = ObjectState("table", ObjectKind.TABLE, Pose(PLACE_REGION_CENTER.copy()))

    if config.task is TaskName.VIAL_ASPIRATION:
        position = jitter_xy(VIAL_NOMINAL)
        lo, hi = config.randomization.tilt_range
        tilt = rng.uniform(lo, hi)
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        axis = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
        orientation = quat_normalize(
            np.concatenate(([math.cos(tilt / 2.0)], math.sin(tilt / 2.0) * axis))
        )
        objects["vial"] = ObjectState(
            "vial", ObjectKind.VIAL, Pose(position, orientation), liquid_volume=INITIAL_LIQUID
        )
    elif config.task is TaskName.LIQUID_TRANSFER:
        objects["container_a"] = ObjectState(
            "container_a", ObjectKind.CONTAINER_A, Pose(jitter_xy(CONTAINER_A_NOMINAL)),
            liquid_volume=INITIAL_LIQUID,
        )
        objects["container_b"] = ObjectState(
            "container_b", ObjectKind.CONTAINER_B, Pose(jitter_xy(CONTAINER_B_NOMINAL)),
            liquid_volume=0.0,
        )
    else:  # UNSCREW
        offset = jitter_xy(np.zeros(3))
        turns = int(rng.choice(np.asarray(config.randomization.lid_turns)))
        objects["container"] = ObjectState(
            "container", ObjectKind.CONTAINER_A, Pose(CONTAINER_TOP + offset),
            liquid_volume=0.0,
        )
        objects["lid"] = ObjectState(
            "lid", ObjectKind.LID, Pose(LID_SEAT + offset),
            remaining_turns=turns, mounted=True,
        )

    return WorldState(ee_pose=Pose(EE_START_POSITION.copy()), objects=objects)


# ---------------------------------------------------------------------------
# step
# ---------------------------------------------------------------------------

def _yaw_increment(q_old: np.ndarray, q_new: np.ndarray) -> float:
    rel = quat_multiply(q_new, quat_conjugate(q_old))
    return float(quat_to_rotvec(quat_normalize(rel)) @ UP)


def step(state: WorldState, action: Action, config: TaskConfig) -> WorldState:
    """Advance the world one control period. Failures freeze everything but the tick."""
    if not action.is_finite():
        raise ValueError("action must be finite")
    out = state.copy()
    out.tick = state.tick + 1
    if state.failure is not None:
        return out
    p = config.params

    delta = clamp_delta(action.delta, p.max_step_translation, p.max_step_rotation)
    old_pose = state.ee_pose
    new_pose = compose(old_pose, delta)
    new_pose.position = np.clip(
        new_pose.position, np.asarray(p.workspace_low), np.asarray(p.workspace_high)
    )
    out.ee_pose = new_pose

    command = min(1.0, max(0.0, action.gripper))
    drift = max(-p.gripper_rate, min(p.gripper_rate, command - state.gripper))
    out.gripper = state.gripper + drift

    closed_edge = state.gripper < 0.5 <= out.gripper
    open_edge = state.gripper >= 0.5 > out.gripper

    if closed_edge and out.held_object is None:
        _try_grasp(out, config)
    if open_edge and out.held_object is not None:
        _release(out, config)

    if config.task is TaskName.UNSCREW:
        _unscrew_physics(out, old_pose, config)
    _carry_held(out)

    if config.task is TaskName.VIAL_ASPIRATION:
        _aspirate_vial(out, config)
    elif config.task is TaskName.LIQUID_TRANSFER:
        _transfer_liquid(out, config)
    return out


def _tool_angle_to(state: WorldState, axis_world: np.ndarray) -> float:
    tool = state.ee_pose.tool_axis()
    return float(np.arccos(np.clip(tool @ axis_world, -1.0, 1.0)))


def _try_grasp(state: WorldState, config: TaskConfig) -> None:
    p = config.params
    for obj in state.objects.values():
        if obj.kind is not ObjectKind.LID:
            continue  # the lid is the only graspable object in the shipped tasks
        if float(np.linalg.norm(obj.pose.position - state.ee_pose.position)) > p.grasp_tolerance:
            continue
        object_up = quat_rotate(obj.pose.orientation, UP)
        if _tool_angle_to(state, object_up) > p.grasp_angle_tolerance:
            continue
        state.held_object = obj.id
        state.grasp_ee_position = state.ee_pose.position.copy()
        if not obj.mounted:
            _capture_offset(state, obj)
        else:
            state.held_offset = None
        return


def _capture_offset(state: WorldState, obj: ObjectState) -> None:
    r_inv = quat_to_matrix(state.ee_pose.orientation).T
    pos = r_inv @ (obj.pose.position - state.ee_pose.position)
    quat = quat_normalize(
        quat_multiply(quat_conjugate(state.ee_pose.orientation), obj.pose.orientation)
    )
    state.held_offset = (pos, quat)


def _release(state: WorldState, config: TaskConfig) -> None:
    p = config.params
    obj = state.objects[state.held_object]
    state.held_object = None
    state.held_offset = None
    state.grasp_ee_position = None
    if obj.kind is not ObjectKind.LID or obj.mounted:
        return
    container = state.objects.get("container")
    seat_z = LID_SEAT[2] + (
        container.pose.position[2] - CONTAINER_TOP[2] if container is not None else 0.0
    )
    if container is not None:
        horizontal = float(np.linalg.norm(obj.pose.position[:2] - container.pose.position[:2]))
        if horizontal <= p.zone_radius and abs(obj.pose.position[2] - seat_z) <= 0.03:
            obj.pose.position[2] = seat_z  # settles back onto the container mouth
            return
    obj.pose.position[2] = p.lid_rest_height  # drops to the table


def _carry_held(state: WorldState) -> None:
    if state.held_object is None or state.held_offset is None:
        return
    obj = state.objects[state.held_object]
    if obj.kind is ObjectKind.LID and obj.mounted:
        return
    rotation = quat_to_matrix(state.ee_pose.orientation)
    obj.pose = Pose(
        state.ee_pose.position + rotation @ state.held_offset[0],
        quat_normalize(quat_multiply(state.ee_pose.orientation, state.held_offset[1])),
    )


def _unscrew_physics(state: WorldState, old_pose: Pose, config: TaskConfig) -> None:
    p = config.params
    if state.held_object != "lid":
        return
    lid = state.objects["lid"]
    if not lid.mounted:
        return

    # a mounted lid cannot follow the gripper: escaping sideways slips the
    # grasp, pulling upward past the break height snaps the thread (failure)
    horizontal = float(np.linalg.norm(
        state.ee_pose.position[:2] - state.grasp_ee_position[:2]
    ))
    if horizontal > p.slip_distance:
        state.held_object = None
        state.held_offset = None
        state.grasp_ee_position = None
        return
    if state.ee_pose.position[2] > state.grasp_ee_position[2] + p.break_height:
        state.failure = "lifted_early"
        return

    dyaw = _yaw_increment(old_pose.orientation, state.ee_pose.orientation)
    if dyaw <= 0.0:
        return  # clockwise motion never re-tightens: turns never increase
    state.unscrew_progress += dyaw
    # small slack: rotating about a slightly tilted tool axis projects to a
    # hair less than 2*pi of thread yaw per full grab
    while state.unscrew_progress >= 2.0 * math.pi - TURN_SLACK and lid.remaining_turns > 0:
        state.unscrew_progress -= 2.0 * math.pi
        lid.remaining_turns -= 1
        if lid.remaining_turns == 0:
            lid.mounted = False
            state.unscrew_progress = 0.0
            _capture_offset(state, lid)
            break


def _aspirate_vial(state: WorldState, config: TaskConfig) -> None:
    p = config.params
    vial = state.objects["vial"]
    axis = quat_rotate(vial.pose.orientation, UP)
    aligned = _tool_angle_to(state, axis) <= p.alignment_tolerance
    tip = state.tip_position(p.tip_length)
    in_mouth = float(np.linalg.norm(tip - vial.pose.position)) <= p.mouth_radius
    if aligned and in_mouth:
        dv = min(p.flow_rate, vial.liquid_volume, p.syringe_capacity - state.syringe_volume)
        if dv > 0.0:
            vial.liquid_volume -= dv
            state.syringe_volume += dv


def _transfer_liquid(state: WorldState, config: TaskConfig) -> None:
    p = config.params
    tip = state.tip_position(p.tip_length)
    a = state.objects["container_a"]
    b = state.objects["container_b"]
    if float(np.linalg.norm(tip - a.pose.position)) <= p.zone_radius:
        dv = min(p.flow_rate, a.liquid_volume, p.syringe_capacity - state.syringe_volume)
        if dv > 0.0:
            a.liquid_volume -= dv
            state.syringe_volume += dv
    elif float(np.linalg.norm(tip - b.pose.position)) <= p.zone_radius:
        dv = min(p.flow_rate, state.syringe_volume)
        if dv > 0.0:
            b.liquid_volume += dv
            state.syringe_volume -= dv


# ---------------------------------------------------------------------------
# observe
# ---------------------------------------------------------------------------

def observe(state: WorldState, config: TaskConfig) -> Observation:
    """Deterministic low-dimensional observation.

    Unscrew states differing only in the lid's thread progress (remaining
    turns, mounted flag, accumulated twist) map to identical observations.
    """
    p = config.params
    if config.task is TaskName.VIAL_ASPIRATION:
        vial = state.objects["vial"]
        axis = quat_rotate(vial.pose.orientation, UP)
        tip = state.tip_position(p.tip_length)
        angle = _tool_angle_to(state, axis)
        in_mouth = float(np.linalg.norm(tip - vial.pose.position)) <= p.mouth_radius
        features = np.concatenate([
            vial.pose.position - tip,
            axis,
            [angle, 1.0 if in_mouth else 0.0, state.syringe_volume],
        ])
    elif config.task is TaskName.LIQUID_TRANSFER:
        tip = state.tip_position(p.tip_length)
        a = state.objects["container_a"]
        b = state.objects["container_b"]
        in_a = float(np.linalg.norm(tip - a.pose.position)) <= p.zone_radius
        in_b = float(np.linalg.norm(tip - b.pose.position)) <= p.zone_radius
        features = np.concatenate([
            a.pose.position - tip,
            b.pose.position - tip,
            [state.syringe_volume, 1.0 if in_a else 0.0, 1.0 if in_b else 0.0,
             b.liquid_volume],
        ])
    else:  # UNSCREW
        lid = state.objects["lid"]
        offset = lid.pose.position - state.ee_pose.position
        grasp_zone = float(np.linalg.norm(offset)) <= p.grasp_ready_radius
        features = np.concatenate([
            offset,
            PLACE_REGION_CENTER - state.ee_pose.position,
            [1.0 if grasp_zone else 0.0,
             1.0 if state.held_object == "lid" else 0.0, lid.pose.position[2]],
        ])
    obs = Observation(state.ee_pose.copy(), state.gripper, features)
    vector = obs.as_vector()
    if not np.isfinite(vector).all():
        raise AssertionError("observation contains non-finite values")
    if vector.shape[0] != config.observation_dim:
        raise AssertionError(
            f"observation dim {vector.shape[0]} != expected {config.observation_dim}"
        )
    return obs


# ---------------------------------------------------------------------------
# success / termination
# ---------------------------------------------------------------------------

def success(state: WorldState, config: TaskConfig) -> bool:
    if state.failure is not None:
        return False
    p = config.params
    if config.task is TaskName.VIAL_ASPIRATION:
        return state.syringe_volume >= p.fill_threshold
    if config.task is TaskName.LIQUID_TRANSFER:
        return state.objects["container_b"].liquid_volume >= p.fill_threshold
    lid = state.objects["lid"]
    placed = (
        float(np.linalg.norm(lid.pose.position[:2] - PLACE_REGION_CENTER[:2]))
        <= p.place_radius
        and lid.pose.position[2] <= p.place_max_height
    )
    return (not lid.mounted) and state.held_object != "lid" and placed


def episode_done(state: WorldState, config: TaskConfig) -> tuple[bool, bool, str]:
    """(done, success, reason); reason is '' on success, else a failure label."""
    if success(state, config):
        return True, True, ""
    if state.failure is not None:
        return True, False, state.failure
    if state.tick >= config.max_ticks:
        return True, False, "timeout"
    return False, False, ""


def total_liquid(state: WorldState) -> float:
    """Sum over vessels plus the syringe; conserved by step."""
    volume = state.syringe_volume
    for obj in state.objects.values():
        if obj.liquid_volume is not None:
            volume += obj.liquid_volume
    return volume
