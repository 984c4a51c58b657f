"""Pose math: unit-quaternion orientations, pose deltas, axis-mask projection, slerp.

Conventions used across the package:

* quaternions are ``(w, x, y, z)`` float64 arrays, kept unit-norm by every
  operation here (norm drift stays below 1e-9);
* rotations in ``PoseDelta`` are axis-angle 3-vectors applied in the base
  frame (pre-multiplied);
* the end effector's tool z axis points "out of the wrist": the identity
  orientation is the canonical fingers-down working pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

_EPS = 1e-12


# ---------------------------------------------------------------------------
# quaternion primitives
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n2 = float(q @ q)
    if n2 < _EPS:
        raise ValueError("cannot normalize near-zero quaternion")
    if abs(n2 - 1.0) < 1e-12:
        return q  # already unit: keep bits stable for identity operations
    return q / np.sqrt(n2)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, v1 = a[0], a[1:]
    w2, v2 = b[0], b[1:]
    w = w1 * w2 - v1 @ v2
    v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    return np.concatenate(([w], v))


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_rotvec(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = float(np.linalg.norm(rotvec))
    if angle < _EPS:
        # second-order small-angle expansion keeps this C1-smooth at zero
        q = np.concatenate(([1.0 - angle * angle / 8.0], 0.5 * rotvec))
        return quat_normalize(q)
    axis = rotvec / angle
    return np.concatenate(([np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    if q[0] < 0.0:  # canonical hemisphere, angle in [0, pi]
        q = -q
    sin_half = float(np.linalg.norm(q[1:]))
    if sin_half < _EPS:
        return 2.0 * q[1:]
    angle = 2.0 * float(np.arctan2(sin_half, q[0]))
    return q[1:] / sin_half * angle


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle of q in [0, pi]."""
    q = quat_normalize(q)
    return 2.0 * float(np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


def quat_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    return quat_angle(quat_multiply(b, quat_conjugate(a)))


def quat_slerp(a: np.ndarray, b: np.ndarray, fraction: float) -> np.ndarray:
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(a @ b)
    if dot < 0.0:  # shortest arc
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(a + fraction * (b - a))
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    return quat_normalize(
        np.sin((1.0 - fraction) * theta) / s * a + np.sin(fraction * theta) / s * b
    )


def quat_twist(q: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Twist factor of q about the unit axis (q = swing * twist, twist first)."""
    q = quat_normalize(q)
    p = float(q[1:] @ axis)
    n = float(np.hypot(q[0], p))
    if n < 1e-9:
        # q is a half-turn about an axis orthogonal to `axis`: no twist content
        return quat_identity()
    return np.concatenate(([q[0]], p * np.asarray(axis, dtype=float))) / n


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

class Frame(Enum):
    BASE = "base"
    TOOL = "tool"


@dataclass
class Pose:
    """6-DoF end-effector pose: position (m) + unit quaternion orientation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=quat_identity)

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.orientation = quat_normalize(
            np.asarray(self.orientation, dtype=float).reshape(4)
        )

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def tool_axis(self) -> np.ndarray:
        """Tool z axis expressed in the base frame."""
        return quat_rotate(self.orientation, np.array([0.0, 0.0, 1.0]))

    def as_vector(self) -> np.ndarray:
        """(x, y, z, qw, qx, qy, qz) flat view, used for serialization."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Pose":
        v = np.asarray(v, dtype=float).reshape(7)
        return Pose(v[:3], v[3:])

    def allclose(self, other: "Pose", pos_tol: float = 1e-9, ang_tol: float = 1e-9) -> bool:
        return (
            float(np.linalg.norm(self.position - other.position)) <= pos_tol
            and quat_angle_between(self.orientation, other.orientation) <= ang_tol
        )


@dataclass
class PoseDelta:
    """Per-tick motion command: base-frame translation + axis-angle rotation."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3)

    def copy(self) -> "PoseDelta":
        return PoseDelta(self.translation.copy(), self.rotation.copy())

    def scaled(self, translation_gain: float, rotation_gain: float) -> "PoseDelta":
        return PoseDelta(self.translation * translation_gain, self.rotation * rotation_gain)

    def magnitude(self) -> tuple[float, float]:
        return float(np.linalg.norm(self.translation)), float(np.linalg.norm(self.rotation))

    @staticmethod
    def zero() -> "PoseDelta":
        return PoseDelta()


ROTATION_AXES = ("x", "y", "z", "roll", "pitch", "yaw")


@dataclass
class AxisMask:
    """Which of (X, Y, Z, roll, pitch, yaw) are locked and in which frame."""

    locked: tuple[bool, bool, bool, bool, bool, bool]
    frame: Frame = Frame.BASE

    def __post_init__(self) -> None:
        self.locked = tuple(bool(v) for v in self.locked)
        if len(self.locked) != 6:
            raise ValueError("AxisMask needs 6 booleans (X, Y, Z, roll, pitch, yaw)")

    @property
    def translational(self) -> tuple[bool, bool, bool]:
        return self.locked[:3]

    @property
    def rotational(self) -> tuple[bool, bool, bool]:
        return self.locked[3:]

    def any_locked(self) -> bool:
        return any(self.locked)

    @staticmethod
    def none() -> "AxisMask":
        return AxisMask((False,) * 6)

    @staticmethod
    def all_rotation(frame: Frame = Frame.BASE) -> "AxisMask":
        return AxisMask((False, False, False, True, True, True), frame)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def compose(pose: Pose, delta: PoseDelta) -> Pose:
    """Advance a pose by one motion delta; orientation is re-normalized."""
    position = pose.position + delta.translation
    orientation = quat_normalize(
        quat_multiply(quat_from_rotvec(delta.rotation), pose.orientation)
    )
    return Pose(position, orientation)


def pose_difference(a: Pose, b: Pose) -> PoseDelta:
    """Delta d with compose(a, d) == b (up to normalization)."""
    rel = quat_multiply(b.orientation, quat_conjugate(a.orientation))
    return PoseDelta(b.position - a.position, quat_to_rotvec(rel))


def interpolate(start: Pose, end: Pose, fraction: float) -> Pose:
    """Linear position + shortest-arc slerp orientation; fraction in [0, 1]."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if fraction == 0.0:
        return start.copy()
    if fraction == 1.0:
        return end.copy()
    position = (1.0 - fraction) * start.position + fraction * end.position
    return Pose(position, quat_slerp(start.orientation, end.orientation, fraction))


def _project_rotation(rel: np.ndarray, locked: tuple[bool, bool, bool]) -> np.ndarray:
    """Remove rotation about the locked axes from a relative quaternion.

    The projection depends on the locked subset: a single locked axis keeps the
    swing (twist about that axis removed); two locked axes keep only the twist
    about the free axis; all three locked collapse to identity. Each case is a
    true idempotent projection onto {q : twist about every locked axis = id},
    which per-axis sequential removal is not.
    """
    n_locked = sum(locked)
    if n_locked == 0:
        return rel
    if n_locked == 3:
        return quat_identity()
    basis = np.eye(3)
    if n_locked == 1:
        axis = basis[locked.index(True)]
        return quat_normalize(quat_multiply(rel, quat_conjugate(quat_twist(rel, axis))))
    free_axis = basis[locked.index(False)]
    return quat_twist(rel, free_axis)


def project_locked(target: Pose, reference: Pose, mask: AxisMask) -> Pose:
    """Clamp the locked components of `target` to the lock-time `reference`.

    Base frame: locked translation axes take the reference's world coordinate;
    the relative rotation (world side) loses its locked-axis content. Tool
    frame: the same, expressed along the reference pose's own axes. Idempotent
    by construction; the empty mask is the identity on `target`.
    """
    if not mask.any_locked():
        return target.copy()

    t_locked = mask.translational
    r_locked = mask.rotational

    if mask.frame is Frame.BASE:
        position = target.position.copy()
        for i in range(3):
            if t_locked[i]:
                position[i] = reference.position[i]
        rel = quat_multiply(target.orientation, quat_conjugate(reference.orientation))
        rel = _project_rotation(quat_normalize(rel), r_locked)
        orientation = quat_normalize(quat_multiply(rel, reference.orientation))
    else:
        axes = quat_to_matrix(reference.orientation)  # columns = tool axes in base
        offset = target.position - reference.position
        position = target.position.copy()
        for i in range(3):
            if t_locked[i]:
                position = position - (axes[:, i] @ offset) * axes[:, i]
        rel = quat_multiply(quat_conjugate(reference.orientation), target.orientation)
        rel = _project_rotation(quat_normalize(rel), r_locked)
        orientation = quat_normalize(quat_multiply(reference.orientation, rel))

    return Pose(position, orientation)


def clamp_delta(delta: PoseDelta, max_translation: float, max_rotation: float) -> PoseDelta:
    """Scale a delta down so neither component exceeds its per-tick bound."""
    t, r = delta.magnitude()
    translation = delta.translation
    rotation = delta.rotation
    if t > max_translation > 0.0:
        translation = translation * (max_translation / t)
    if r > max_rotation > 0.0:
        rotation = rotation * (max_rotation / r)
    return PoseDelta(translation, rotation)
