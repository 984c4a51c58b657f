"""Demonstration recording and persistence.

An episode is recorded frame-by-frame at the control rate: the observation,
the action that actually executed (TAP-emitted actions included, tagged
TapSynthesized), the trigger event at its trigger tick only, and the source
tag. One recording serves both policy variants: the baseline consumes
(observation -> action) and ignores tap events; the hybrid variant also
consumes the trigger labels.

Files are HDF5 (self-describing, versioned via a format attribute,
append-friendly per-episode) with a manifest JSON per dataset directory and a
lossless human-readable JSON export (float64 survives the repr round-trip).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import h5py
import numpy as np

from .expert import ScriptedExpert
from .sim import episode_done, observe, reset, step
from .taps import EMPTY, ControllerState, controller_tick
from .tasks import TaskBundle
from .teleop import GainSetting, map_input

FORMAT_VERSION = 1

SOURCE_OPERATOR = 0
SOURCE_TAP = 1
SOURCE_POLICY = 2
SOURCE_NAMES = {SOURCE_OPERATOR: "operator", SOURCE_TAP: "tap_synthesized",
                SOURCE_POLICY: "policy"}


@dataclass
class Demonstration:
    task: str
    task_source: str
    seed: int
    noise_seed: int
    control_period: float
    observations: np.ndarray  # (T, obs_dim) float64
    actions: np.ndarray  # (T, 7) float64, executed actions
    tap_events: np.ndarray  # (T,) int64, -1 = Empty, else TAP id at trigger tick
    source_tags: np.ndarray  # (T,) int64
    ee_poses: np.ndarray  # (T, 7) float64, pose at the start of each tick
    gains: np.ndarray  # (T, 2) float64 (translation, rotation)
    success: bool
    failure_reason: str = ""
    truncated: bool = False
    operator: str = "scripted"
    date: str = ""

    def __len__(self) -> int:
        return int(self.observations.shape[0])

    def trigger_ticks(self) -> np.ndarray:
        return np.flatnonzero(self.tap_events >= 0)


def demonstrations_equal(a: Demonstration, b: Demonstration) -> bool:
    """Bitwise equality, the round-trip persistence contract."""
    scalar = (
        a.task == b.task and a.task_source == b.task_source and a.seed == b.seed
        and a.noise_seed == b.noise_seed and a.control_period == b.control_period
        and a.success == b.success and a.failure_reason == b.failure_reason
        and a.truncated == b.truncated and a.operator == b.operator and a.date == b.date
    )
    arrays = all(
        np.array_equal(getattr(a, name), getattr(b, name))
        for name in ("observations", "actions", "tap_events", "source_tags",
                     "ee_poses", "gains")
    )
    return scalar and arrays


# ---------------------------------------------------------------------------
# recording
# ---------------------------------------------------------------------------

def record_scripted_episode(
    bundle: TaskBundle,
    env_seed: int,
    noise_seed: int | None = None,
    gain: GainSetting | None = None,
) -> Demonstration:
    """Run the scripted expert through the gateway + controller + sim loop."""
    if noise_seed is None:
        noise_seed = env_seed
    gain = gain or GainSetting()
    config = bundle.config.with_seed(env_seed)
    state = reset(config)
    expert = ScriptedExpert(bundle.with_seed(env_seed), noise_seed)
    cs = ControllerState()

    observations, actions, taps, tags, poses, gains = [], [], [], [], [], []
    success = False
    reason = ""
    while True:
        done, success, reason = episode_done(state, config)
        if done or state.tick >= config.max_ticks:
            break
        obs = observe(state, config)
        tele = expert.act(state)
        action = map_input(tele, gain, None, None, state.ee_pose)
        result = controller_tick(
            cs, state.ee_pose, action, tele.tap_button, bundle.library,
            config.control_period, source="operator",
        )
        cs = result.state
        accepted = [e.tap_id for e in result.events if e.status == "accepted"]

        observations.append(obs.as_vector())
        actions.append(result.action.as_vector())
        taps.append(accepted[0] if accepted else -1)
        tags.append(SOURCE_TAP if result.source == "tap" else SOURCE_OPERATOR)
        poses.append(state.ee_pose.as_vector())
        gains.append([gain.translation_gain, gain.rotation_gain])

        state = step(state, result.action, config)

    t = len(observations)
    return Demonstration(
        task=config.task.value,
        task_source=bundle.source,
        seed=env_seed,
        noise_seed=noise_seed,
        control_period=config.control_period,
        observations=np.asarray(observations, dtype=np.float64).reshape(t, -1),
        actions=np.asarray(actions, dtype=np.float64).reshape(t, -1),
        tap_events=np.asarray(taps, dtype=np.int64),
        source_tags=np.asarray(tags, dtype=np.int64),
        ee_poses=np.asarray(poses, dtype=np.float64).reshape(t, -1),
        gains=np.asarray(gains, dtype=np.float64).reshape(t, -1),
        success=success,
        failure_reason=reason,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_SCALAR_ATTRS = ("task", "task_source", "seed", "noise_seed", "control_period",
                 "success", "failure_reason", "truncated", "operator", "date")
_ARRAYS = ("observations", "actions", "tap_events", "source_tags", "ee_poses", "gains")


def save_demonstration(demo: Demonstration, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with h5py.File(path, "w", track_order=True) as fh:
        fh.attrs["format_version"] = FORMAT_VERSION
        for name in _SCALAR_ATTRS:
            fh.attrs[name] = getattr(demo, name)
        for name in _ARRAYS:
            fh.create_dataset(name, data=getattr(demo, name), track_times=False)


def load_demonstration(path: str | Path) -> Demonstration:
    with h5py.File(path, "r") as fh:
        version = int(fh.attrs["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported demonstration format {version}")
        kwargs = {}
        for name in _SCALAR_ATTRS:
            value = fh.attrs[name]
            if isinstance(value, bytes):
                value = value.decode()
            if isinstance(value, np.generic):
                value = value.item()
            kwargs[name] = value
        for name in _ARRAYS:
            kwargs[name] = fh[name][()]
    kwargs["seed"] = int(kwargs["seed"])
    kwargs["noise_seed"] = int(kwargs["noise_seed"])
    kwargs["success"] = bool(kwargs["success"])
    kwargs["truncated"] = bool(kwargs["truncated"])
    return Demonstration(**kwargs)


def export_human_readable(demo: Demonstration) -> str:
    """Lossless JSON text: float64 values round-trip exactly through repr."""
    payload = {"format_version": FORMAT_VERSION}
    for name in _SCALAR_ATTRS:
        payload[name] = getattr(demo, name)
    for name in _ARRAYS:
        payload[name] = getattr(demo, name).tolist()
    return json.dumps(payload, indent=2, sort_keys=True)


def import_human_readable(text: str) -> Demonstration:
    raw = json.loads(text)
    version = raw.pop("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported demonstration format {version}")
    for name in ("observations", "actions", "ee_poses", "gains"):
        raw[name] = np.asarray(raw[name], dtype=np.float64)
    for name in ("tap_events", "source_tags"):
        raw[name] = np.asarray(raw[name], dtype=np.int64)
    return Demonstration(**raw)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    task: str
    task_source: str
    control_period: float
    episodes: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": FORMAT_VERSION,
                "task": self.task,
                "task_source": self.task_source,
                "control_period": self.control_period,
                "episodes": self.episodes,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return DatasetManifest(
            task=raw["task"],
            task_source=raw["task_source"],
            control_period=raw["control_period"],
            episodes=raw["episodes"],
        )


def save_dataset(demos: list[Demonstration], directory: str | Path) -> DatasetManifest:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(
        task=demos[0].task, task_source=demos[0].task_source,
        control_period=demos[0].control_period,
    )
    for i, demo in enumerate(demos):
        name = f"ep_{i:04d}.h5"
        save_demonstration(demo, directory / name)
        manifest.episodes.append({
            "file": name,
            "seed": demo.seed,
            "noise_seed": demo.noise_seed,
            "success": demo.success,
            "failure_reason": demo.failure_reason,
            "truncated": demo.truncated,
            "ticks": len(demo),
        })
    (directory / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_dataset(directory: str | Path) -> tuple[list[Demonstration], DatasetManifest]:
    directory = Path(directory)
    manifest = DatasetManifest.from_json((directory / "manifest.json").read_text())
    demos = [load_demonstration(directory / e["file"]) for e in manifest.episodes]
    return demos, manifest


def generate_dataset(
    bundle: TaskBundle,
    episodes: int,
    seed_base: int,
    directory: str | Path | None = None,
) -> tuple[list[Demonstration], DatasetManifest | None]:
    """Record `episodes` scripted demonstrations with seeds seed_base + i."""
    demos = [
        record_scripted_episode(bundle, env_seed=seed_base + i, noise_seed=seed_base + i)
        for i in range(episodes)
    ]
    manifest = save_dataset(demos, directory) if directory is not None else None
    return demos, manifest
