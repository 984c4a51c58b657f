"""The live control loop: interleaved inference, TAP arbitration, execution.

Lockstep mode models inference latency as a fixed number of control ticks and
invokes the predictor synchronously, making whole episodes bit-reproducible:
an inference conditioned on the observation at tick s delivers window
positions [latency, horizon) stamped for world ticks s+latency onward, and a
new inference starts whenever none is in flight. The first `latency` ticks of
an episode are priming ticks (zero action) while the first prediction is in
flight. Wall-clock mode runs the same buffer discipline with a background
worker and measured latency; underruns repeat the last action and log a
starvation event.

TAP trigger commands are consumed only from the executed slice of each
prediction window (the first non-Empty step within it), which keeps stale
far-horizon triggers from firing.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import h5py
import numpy as np

from .action import Action
from .dataset import (
    SOURCE_OPERATOR,
    SOURCE_POLICY,
    SOURCE_TAP,
    Demonstration,
)
from .policy import PolicyOutput, PolicyWeights, infer
from .sim import WorldState, episode_done, observe, reset, step
from .taps import EMPTY, ControllerState, TapCommand, controller_tick
from .tasks import TaskBundle

SOURCE_PRIME = 3


class RuntimeMode(Enum):
    LOCKSTEP = "deterministic_lockstep"
    WALLCLOCK = "realtime_wallclock"


@dataclass(frozen=True)
class RuntimeConfig:
    control_period: float = 0.1
    inference_latency_ticks: int = 3
    execute_steps: int = 3
    mode: RuntimeMode = RuntimeMode.LOCKSTEP

    def __post_init__(self):
        if self.inference_latency_ticks < 1:
            raise ValueError("inference_latency_ticks must be >= 1")
        if self.mode is RuntimeMode.LOCKSTEP and self.execute_steps < self.inference_latency_ticks:
            raise ValueError("lockstep needs execute_steps >= inference_latency_ticks")


@dataclass(frozen=True)
class BufferEntry:
    tick: int
    action: Action
    tap: TapCommand
    generation: int
    conditioning_tick: int


class ActionBuffer:
    """Pending (action, TAP) pairs; a newer generation replaces older entries."""

    def __init__(self):
        self.entries: list[BufferEntry] = []
        self.generation = 0
        self.last_consumed_generation = 0

    def refill(self, output: PolicyOutput, conditioning_tick: int, start_position: int,
               execute_steps: int) -> None:
        self.generation += 1
        horizon = output.actions.shape[0]
        entries = []
        slice_end = min(start_position + execute_steps, horizon)
        trigger_used = False
        for position in range(start_position, horizon):
            tap: TapCommand = EMPTY
            if position < slice_end and not trigger_used:
                tap_id, _conf = output.tap_decisions[position]
                if tap_id is not None:
                    tap = tap_id  # first non-Empty step in the executed slice
                    trigger_used = True
            entries.append(BufferEntry(
                tick=conditioning_tick + position,
                action=Action.from_vector(output.actions[position]),
                tap=tap,
                generation=self.generation,
                conditioning_tick=conditioning_tick,
            ))
        self.entries = entries  # stale unconsumed entries are discarded

    def pop(self, tick: int) -> BufferEntry | None:
        while self.entries and self.entries[0].tick < tick:
            self.entries.pop(0)
        if self.entries and self.entries[0].tick == tick:
            entry = self.entries.pop(0)
            if entry.generation < self.last_consumed_generation:
                raise AssertionError("buffer generations interleaved out of order")
            self.last_consumed_generation = entry.generation
            return entry
        return None


@dataclass
class TapEventRecord:
    tick: int
    tap_id: int
    status: str  # accepted | discarded | rejected
    source: str  # policy | operator


@dataclass
class EpisodeResult:
    task: str
    env_seed: int
    noise_seed: int
    success: bool
    failure_reason: str
    ticks: int
    actions: np.ndarray  # executed actions (T, 7)
    ee_poses: np.ndarray  # pose at the start of each tick (T, 7)
    observations: np.ndarray  # (T, obs_dim)
    source_tags: np.ndarray  # (T,) int64: operator/tap/policy/prime
    tap_events: list[TapEventRecord] = field(default_factory=list)
    trigger_poses: list[tuple[int, int, np.ndarray]] = field(default_factory=list)
    starvation_ticks: list[int] = field(default_factory=list)
    conditioning_age: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def digest(self) -> bytes:
        payload = [
            self.task.encode(), str(self.env_seed).encode(), str(self.noise_seed).encode(),
            str(self.success).encode(), self.failure_reason.encode(),
            str(self.ticks).encode(), self.actions.tobytes(), self.ee_poses.tobytes(),
            self.observations.tobytes(), self.source_tags.tobytes(),
            json.dumps([
                (e.tick, e.tap_id, e.status, e.source) for e in self.tap_events
            ]).encode(),
        ]
        return b"|".join(payload)

    def accepted_triggers(self) -> list[TapEventRecord]:
        return [e for e in self.tap_events if e.status == "accepted"]


# ---------------------------------------------------------------------------
# policy episodes
# ---------------------------------------------------------------------------

@dataclass
class _PendingInference:
    conditioning_tick: int
    started_wall: float
    output: PolicyOutput | None = None
    thread: threading.Thread | None = None

    def done(self) -> bool:
        return self.output is not None and (self.thread is None or not self.thread.is_alive())


def run_episode(
    weights: PolicyWeights,
    bundle: TaskBundle,
    rt: RuntimeConfig,
    env_seed: int,
    noise_seed: int,
) -> EpisodeResult:
    """Roll the policy out on one seeded episode; lockstep runs are bitwise
    reproducible for fixed (weights, seeds)."""
    config = bundle.config.with_seed(env_seed)
    if weights.config.observation_dim != config.observation_dim:
        raise ValueError("weights were trained for a different observation space")
    horizon = weights.config.horizon
    latency = rt.inference_latency_ticks
    if rt.mode is RuntimeMode.LOCKSTEP and horizon < 2 * latency:
        raise ValueError("horizon too short to cover inference latency without gaps")

    state = reset(config)
    cs = ControllerState()
    buffer = ActionBuffer()
    pending: _PendingInference | None = None
    inference_index = 0

    actions, poses, observations, tags, ages = [], [], [], [], []
    tap_events: list[TapEventRecord] = []
    trigger_poses: list[tuple[int, int, np.ndarray]] = []
    starvation: list[int] = []
    last_action = Action.zero()
    success_flag, reason = False, ""

    while True:
        done, success_flag, reason = episode_done(state, config)
        if done:
            break
        tick = state.tick
        obs = observe(state, config)
        obs_vector = obs.as_vector()

        # deliver a completed inference, then launch a new one if idle
        if pending is not None:
            if rt.mode is RuntimeMode.LOCKSTEP:
                if tick - pending.conditioning_tick >= latency:
                    buffer.refill(pending.output, pending.conditioning_tick,
                                  latency, rt.execute_steps)
                    pending = None
            elif pending.done():
                pending.thread.join()
                elapsed = max(1, int(np.ceil(
                    (time.monotonic() - pending.started_wall) / rt.control_period
                )))
                if elapsed < horizon:
                    buffer.refill(pending.output, pending.conditioning_tick,
                                  elapsed, rt.execute_steps)
                pending = None
        if pending is None:
            seed_i = noise_seed * 1_000_003 + inference_index
            inference_index += 1
            pending = _PendingInference(conditioning_tick=tick, started_wall=time.monotonic())
            if rt.mode is RuntimeMode.LOCKSTEP:
                pending.output = infer(weights, obs_vector, seed_i)
            else:
                def work(p=pending, vec=obs_vector, s=seed_i):
                    p.output = infer(weights, vec, s)
                pending.thread = threading.Thread(target=work, daemon=True)
                pending.thread.start()

        entry = buffer.pop(tick)
        if entry is None:
            if tick < latency and rt.mode is RuntimeMode.LOCKSTEP:
                action, tap, source_tag, age = Action.zero(), EMPTY, SOURCE_PRIME, 0
            else:
                action, tap, source_tag, age = last_action.copy(), EMPTY, SOURCE_POLICY, 0
                starvation.append(tick)
        else:
            action, tap = entry.action, entry.tap
            source_tag = SOURCE_POLICY
            age = tick - entry.conditioning_tick
            if rt.mode is RuntimeMode.LOCKSTEP:
                assert age <= rt.execute_steps + latency, "staleness bound violated"

        result = controller_tick(cs, state.ee_pose, action, tap,
                                 bundle.library, rt.control_period, source="policy")
        cs = result.state
        for event in result.events:
            tap_events.append(TapEventRecord(tick, event.tap_id, event.status, event.source))
            if event.status == "accepted":
                trigger_poses.append((tick, event.tap_id, state.ee_pose.as_vector()))

        executed = result.action
        last_action = executed
        actions.append(executed.as_vector())
        poses.append(state.ee_pose.as_vector())
        observations.append(obs_vector)
        tags.append(SOURCE_TAP if result.source == "tap" else source_tag)
        ages.append(age)

        state = step(state, executed, config)

    t = len(actions)
    return EpisodeResult(
        task=config.task.value,
        env_seed=env_seed,
        noise_seed=noise_seed,
        success=success_flag,
        failure_reason=reason,
        ticks=t,
        actions=np.asarray(actions, dtype=np.float64).reshape(t, -1),
        ee_poses=np.asarray(poses, dtype=np.float64).reshape(t, -1),
        observations=np.asarray(observations, dtype=np.float64).reshape(t, -1),
        source_tags=np.asarray(tags, dtype=np.int64),
        tap_events=tap_events,
        trigger_poses=trigger_poses,
        starvation_ticks=starvation,
        conditioning_age=np.asarray(ages, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class ReplayResult:
    recorded_success: bool
    replayed_success: bool
    incomplete: bool
    first_divergence_tick: int | None

    @property
    def matches(self) -> bool:
        return (
            not self.incomplete
            and self.first_divergence_tick is None
            and self.recorded_success == self.replayed_success
        )


def replay(demo: Demonstration, bundle: TaskBundle) -> ReplayResult:
    """Re-execute a recorded action/TAP stream; the deterministic sim must
    reproduce the recorded per-tick poses and terminal success flag."""
    config = bundle.config.with_seed(demo.seed)
    if demo.task != config.task.value:
        raise ValueError(f"demo task {demo.task!r} does not match bundle {config.task.value!r}")
    if demo.control_period != config.control_period:
        raise ValueError("control period mismatch between demo and config")

    state = reset(config)
    cs = ControllerState()
    divergence: int | None = None
    for i in range(len(demo)):
        if divergence is None and not np.array_equal(state.ee_pose.as_vector(), demo.ee_poses[i]):
            divergence = i
        tap: TapCommand = int(demo.tap_events[i]) if demo.tap_events[i] >= 0 else EMPTY
        action = Action.from_vector(demo.actions[i])
        result = controller_tick(cs, state.ee_pose, action, tap,
                                 bundle.library, config.control_period, source="operator")
        cs = result.state
        state = step(state, result.action, config)

    _, replayed_success, _ = episode_done(state, config)
    return ReplayResult(
        recorded_success=demo.success,
        replayed_success=replayed_success,
        incomplete=demo.truncated,
        first_divergence_tick=divergence,
    )


# ---------------------------------------------------------------------------
# episode result persistence
# ---------------------------------------------------------------------------

def save_episode_result(result: EpisodeResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with h5py.File(path, "w") as fh:
        fh.attrs["format_version"] = 1
        for name in ("task", "env_seed", "noise_seed", "success", "failure_reason", "ticks"):
            fh.attrs[name] = getattr(result, name)
        for name in ("actions", "ee_poses", "observations", "source_tags",
                     "conditioning_age"):
            fh.create_dataset(name, data=getattr(result, name), track_times=False)
        events = np.array(
            [(e.tick, e.tap_id, e.status, e.source) for e in result.tap_events],
            dtype=h5py.string_dtype(),
        )
        fh.create_dataset("tap_events", data=events, track_times=False)
        fh.create_dataset(
            "starvation_ticks", data=np.asarray(result.starvation_ticks, dtype=np.int64),
            track_times=False,
        )
        triggers = np.asarray(
            [np.concatenate([[t, tap_id], pose]) for t, tap_id, pose in result.trigger_poses]
        ).reshape(len(result.trigger_poses), -1)
        fh.create_dataset("trigger_poses", data=triggers, track_times=False)


def load_episode_result(path: str | Path) -> EpisodeResult:
    with h5py.File(path, "r") as fh:
        events = [
            TapEventRecord(int(t), int(tap), status if isinstance(status, str) else status.decode(),
                           source if isinstance(source, str) else source.decode())
            for t, tap, status, source in (
                tuple(x.decode() if isinstance(x, bytes) else x for x in row)
                for row in fh["tap_events"][()]
            )
        ]
        triggers = [
            (int(row[0]), int(row[1]), np.asarray(row[2:], dtype=np.float64))
            for row in fh["trigger_poses"][()]
        ]
        return EpisodeResult(
            task=str(fh.attrs["task"]),
            env_seed=int(fh.attrs["env_seed"]),
            noise_seed=int(fh.attrs["noise_seed"]),
            success=bool(fh.attrs["success"]),
            failure_reason=str(fh.attrs["failure_reason"]),
            ticks=int(fh.attrs["ticks"]),
            actions=fh["actions"][()],
            ee_poses=fh["ee_poses"][()],
            observations=fh["observations"][()],
            source_tags=fh["source_tags"][()],
            tap_events=events,
            trigger_poses=triggers,
            starvation_ticks=[int(x) for x in fh["starvation_ticks"][()]],
            conditioning_age=fh["conditioning_age"][()],
        )
