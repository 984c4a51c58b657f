"""Task definitions: physics parameters, randomization, TAP libraries, vocabularies.

One YAML file per task (shipped under ``taplab/configs/``) describes the scene
randomization, the physics constants, the TAP library, the operator command
vocabulary, and the scripted-expert profile. ``load_task`` parses such a file
into a TaskBundle; TAP ids are assigned by list order.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .geometry import AxisMask, Frame, Pose, quat_from_rotvec
from .taps import RoutineParams, TapKind, TapLibrary, TapSpec
from .teleop import CommandVocabulary


class TaskName(Enum):
    VIAL_ASPIRATION = "vial_aspiration"
    LIQUID_TRANSFER = "liquid_transfer"
    UNSCREW = "unscrew"


# fixed per-task salt mixed into the reset seed so tasks draw distinct streams
TASK_SALT = {
    TaskName.VIAL_ASPIRATION: 101,
    TaskName.LIQUID_TRANSFER: 202,
    TaskName.UNSCREW: 303,
}


@dataclass(frozen=True)
class Randomization:
    position_jitter: float = 0.03  # +- range for object x/y (m)
    tilt_range: tuple[float, float] = (0.0, 0.0)  # vial axis tilt (rad)
    lid_turns: tuple[int, ...] = (2, 3, 4)  # unscrew thread turns

    def validate(self) -> None:
        if self.position_jitter < 0:
            raise ValueError("position_jitter must be nonnegative")
        lo, hi = self.tilt_range
        if not 0 <= lo <= hi <= math.pi / 2:
            raise ValueError(f"invalid tilt_range {self.tilt_range}")
        if any(t < 1 for t in self.lid_turns):
            raise ValueError("lid_turns entries must be >= 1")


@dataclass(frozen=True)
class TaskParams:
    """Physics constants; defaults chosen so the scripted expert succeeds
    on nearly every seed while a random policy essentially never does."""

    # kinematics
    max_step_translation: float = 0.05  # m per tick
    max_step_rotation: float = 0.8  # rad per tick
    gripper_rate: float = 0.25  # gripper units per tick
    workspace_low: tuple[float, float, float] = (-0.6, -0.6, 0.01)
    workspace_high: tuple[float, float, float] = (0.6, 0.6, 0.6)
    # grasping
    grasp_tolerance: float = 0.02  # m
    grasp_angle_tolerance: float = 0.3  # rad between tool z and object up
    slip_distance: float = 0.015  # m horizontal escape while holding a mounted lid
    # syringe / liquids
    tip_length: float = 0.08  # m from EE origin along -tool z
    mouth_radius: float = 0.012  # m, vial
    zone_radius: float = 0.025  # m, open containers
    alignment_tolerance: float = 0.15  # rad, aspiration
    flow_rate: float = 0.5  # ml per tick
    syringe_capacity: float = 6.0  # ml
    fill_threshold: float = 4.0  # ml, success volume
    # unscrew
    grasp_ready_radius: float = 0.011  # m: trigger zone; bbox corner stays in grasp ball
    break_height: float = 0.01  # m above grasp height while still threaded
    lid_rest_height: float = 0.01  # m, lid dropped on the table
    place_radius: float = 0.08  # m, table drop region
    place_max_height: float = 0.03  # m, lid counts as placed below this


@dataclass(frozen=True)
class ExpertProfile:
    """Scripted-operator behavior knobs (per-tick noise, speeds, thresholds)."""

    translation_speed: float = 0.03  # m per tick toward targets
    rotation_speed: float = 0.25  # rad per tick toward targets
    noise_translation: float = 0.0015  # m per tick, seeded Gaussian
    noise_rotation: float = 0.008  # rad per tick
    align_trigger_angle: float = 0.05  # rad, vial lock trigger
    settle_ticks: int = 6  # parked ticks before a trigger; covers the executed slice


@dataclass(frozen=True)
class TaskConfig:
    task: TaskName
    seed: int = 0
    control_period: float = 0.1  # 10 Hz control rate
    max_ticks: int = 600
    randomization: Randomization = field(default_factory=Randomization)
    params: TaskParams = field(default_factory=TaskParams)

    def with_seed(self, seed: int) -> "TaskConfig":
        return replace(self, seed=int(seed))

    @property
    def observation_dim(self) -> int:
        return BASE_OBS_DIM + TASK_FEATURE_DIM[self.task]


BASE_OBS_DIM = 10  # position 3 + rotation-6d 6 + gripper 1
TASK_FEATURE_DIM = {
    TaskName.VIAL_ASPIRATION: 9,
    TaskName.LIQUID_TRANSFER: 10,
    TaskName.UNSCREW: 9,
}

# nominal scene layout (meters); jitter is applied relative to these
EE_START_POSITION = np.array([0.0, 0.0, 0.35])
VIAL_NOMINAL = np.array([0.25, 0.0, 0.12])
CONTAINER_A_NOMINAL = np.array([0.3, -0.2, 0.10])
CONTAINER_B_NOMINAL = np.array([0.3, 0.2, 0.10])
CONTAINER_TOP = np.array([0.3, 0.0, 0.15])
LID_SEAT = np.array([0.3, 0.0, 0.16])
PLACE_REGION_CENTER = np.array([0.0, -0.3, 0.0])
INITIAL_LIQUID = 8.0  # ml


@dataclass(frozen=True)
class TaskBundle:
    """Everything a task episode needs: config, TAP library, vocabulary, expert."""

    config: TaskConfig
    library: TapLibrary
    vocabulary: CommandVocabulary
    expert: ExpertProfile
    source: str = ""  # config file name, for dataset manifests

    def with_seed(self, seed: int) -> "TaskBundle":
        return replace(self, config=self.config.with_seed(seed))


# ---------------------------------------------------------------------------
# YAML parsing
# ---------------------------------------------------------------------------

_AXIS_ORDER = ["x", "y", "z", "roll", "pitch", "yaw"]


def _parse_mask(raw: dict) -> AxisMask:
    axes = raw.get("axes", [])
    unknown = set(axes) - set(_AXIS_ORDER)
    if unknown:
        raise ValueError(f"unknown lock axes {sorted(unknown)}; valid: {_AXIS_ORDER}")
    locked = tuple(a in axes for a in _AXIS_ORDER)
    frame = Frame(raw.get("frame", "base"))
    return AxisMask(locked, frame)


def _parse_pose(raw: dict) -> Pose:
    position = np.asarray(raw.get("position", [0, 0, 0]), dtype=float)
    rotvec = np.asarray(raw.get("rotation", [0, 0, 0]), dtype=float)
    return Pose(position, quat_from_rotvec(rotvec))


def _parse_tap(index: int, raw: dict) -> TapSpec:
    kind = TapKind(raw["kind"])
    common = dict(id=index, name=str(raw["name"]), kind=kind, priority=int(raw["priority"]))
    if kind is TapKind.AXIS_LOCK:
        return TapSpec(**common, mask=_parse_mask(raw))
    if kind is TapKind.AXIS_UNLOCK:
        return TapSpec(**common)
    if kind is TapKind.WAYPOINT:
        return TapSpec(
            **common,
            waypoint=_parse_pose(raw["pose"]),
            linear_speed=float(raw.get("linear_speed", 0.2)),
            angular_speed=float(raw.get("angular_speed", 1.0)),
        )
    routine_raw = raw.get("routine", {})
    return TapSpec(**common, routine=RoutineParams(
        cycles=int(routine_raw.get("cycles", 4)),
        angle_per_grab=float(routine_raw.get("angle_per_grab", 2 * math.pi)),
        lift_height=float(routine_raw.get("lift_height", 0.08)),
        yaw_speed=float(routine_raw.get("yaw_speed", 5.0)),
        lift_speed=float(routine_raw.get("lift_speed", 0.2)),
        grip_ticks=int(routine_raw.get("grip_ticks", 4)),
        gripper_force=float(routine_raw.get("gripper_force", 1.0)),
    ))


def _parse_tuple2(raw, default) -> tuple[float, float]:
    if raw is None:
        return default
    lo, hi = raw
    return float(lo), float(hi)


def load_task(path: str | Path) -> TaskBundle:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return parse_task_dict(raw, source=path.name)


def parse_task_dict(raw: dict, source: str = "") -> TaskBundle:
    task = TaskName(raw["task"])

    rand_raw = raw.get("randomization", {})
    randomization = Randomization(
        position_jitter=float(rand_raw.get("position_jitter", 0.03)),
        tilt_range=_parse_tuple2(rand_raw.get("tilt_range"), (0.0, 0.0)),
        lid_turns=tuple(int(t) for t in rand_raw.get("lid_turns", (2, 3, 4))),
    )
    randomization.validate()

    params_raw = raw.get("params", {})
    defaults = TaskParams()
    valid = set(defaults.__dataclass_fields__)
    unknown = set(params_raw) - valid
    if unknown:
        raise ValueError(f"unknown params keys {sorted(unknown)}")
    kwargs = {
        k: (tuple(v) if isinstance(getattr(defaults, k), tuple) else type(getattr(defaults, k))(v))
        for k, v in params_raw.items()
    }
    params = replace(defaults, **kwargs)

    config = TaskConfig(
        task=task,
        control_period=float(raw.get("control_period", 0.1)),
        max_ticks=int(raw.get("max_ticks", 600)),
        randomization=randomization,
        params=params,
    )
    if config.control_period <= 0:
        raise ValueError("control_period must be positive")

    specs = [_parse_tap(i, t) for i, t in enumerate(raw.get("taps", []))]
    library = TapLibrary(specs)

    vocab_raw = raw.get("vocabulary", {})
    entries = []
    for entry in vocab_raw.get("entries", []):
        tap_name = entry["tap"]
        entries.append((entry["phrase"], library.by_name(tap_name).id))
    vocabulary = CommandVocabulary(entries, max_distance=int(vocab_raw.get("max_distance", 3)))
    vocabulary.validate_against(library)

    expert_raw = raw.get("expert", {})
    expert_defaults = ExpertProfile()
    unknown = set(expert_raw) - set(expert_defaults.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown expert keys {sorted(unknown)}")
    expert = replace(expert_defaults, **{k: type(getattr(expert_defaults, k))(v)
                                         for k, v in expert_raw.items()})

    return TaskBundle(config, library, vocabulary, expert, source=source)


def builtin_task_path(name: str) -> Path:
    """Path of a task file shipped with the package (vial_aspiration,
    liquid_transfer, unscrew)."""
    root = importlib.resources.files("taplab") / "configs" / f"{name}.yaml"
    return Path(str(root))


def load_builtin_task(name: str | TaskName) -> TaskBundle:
    if isinstance(name, TaskName):
        name = name.value
    path = builtin_task_path(name)
    if not path.exists():
        valid = sorted(t.value for t in TaskName)
        raise ValueError(f"unknown task {name!r}; valid tasks: {valid}")
    return load_task(path)
