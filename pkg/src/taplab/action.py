"""The per-tick command sent to the robot: a pose delta plus a gripper target."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseDelta


@dataclass
class Action:
    """Motion delta for one control period and an absolute gripper target in [0, 1]."""

    delta: PoseDelta = field(default_factory=PoseDelta)
    gripper: float = 0.0

    def copy(self) -> "Action":
        return Action(self.delta.copy(), self.gripper)

    def as_vector(self) -> np.ndarray:
        """(tx, ty, tz, rx, ry, rz, gripper) — the 7-dim policy action layout."""
        return np.concatenate([self.delta.translation, self.delta.rotation, [self.gripper]])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Action":
        v = np.asarray(v, dtype=float).reshape(7)
        return Action(PoseDelta(v[:3], v[3:6]), float(v[6]))

    @staticmethod
    def zero(gripper: float = 0.0) -> "Action":
        return Action(PoseDelta.zero(), gripper)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.as_vector()).all())


ACTION_DIM = 7
