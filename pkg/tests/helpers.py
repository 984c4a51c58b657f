"""Shared independent oracles and generators used by unit and acceptance tests.

Everything here deliberately avoids the production code paths it checks:
rotation math goes through scipy.spatial.transform, edit distance through the
memoized textbook recursion, controller traces through a literal hand-stepped
transcription of the arbitration rules.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from taplab.geometry import Pose


# ---------------------------------------------------------------------------
# rotation oracles (scipy-based, independent of taplab.geometry internals)
# ---------------------------------------------------------------------------

def scipy_from_wxyz(q: np.ndarray) -> ScipyRotation:
    return ScipyRotation.from_quat([q[1], q[2], q[3], q[0]])


def wxyz_from_scipy(r: ScipyRotation) -> np.ndarray:
    x, y, z, w = r.as_quat()
    return np.array([w, x, y, z])


def oracle_rotation_angle(q_a: np.ndarray, q_b: np.ndarray) -> float:
    """Angle of the relative rotation between two wxyz quaternions."""
    return float((scipy_from_wxyz(q_a).inv() * scipy_from_wxyz(q_b)).magnitude())


def oracle_axis_content(matrix: np.ndarray, axis: np.ndarray) -> float:
    """Component of the rotation-matrix log along an axis.

    Zero iff the rotation's axis is orthogonal to `axis`, i.e. the rotation is
    a pure swing with respect to it.
    """
    return float(ScipyRotation.from_matrix(matrix).as_rotvec() @ np.asarray(axis, dtype=float))


def oracle_remove_twist(matrix: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Swing factor of a rotation about an axis, via root-finding on the log.

    Finds the twist angle t such that R * Rot(axis, -t) has its rotation axis
    orthogonal to `axis` (zero log content along it); independent of any
    quaternion-projection shortcut.
    """
    axis = np.asarray(axis, dtype=float)

    def residual(t: float) -> float:
        undo = ScipyRotation.from_rotvec(axis * -t).as_matrix()
        return oracle_axis_content(matrix @ undo, axis)

    # bracket every sign change on a fine grid over (-pi, pi), bisect each,
    # and keep the root whose swing has the smallest rotation angle (a
    # half-turn swing about an orthogonal axis is also a root).
    grid = np.linspace(-np.pi + 1e-6, np.pi - 1e-6, 2001)
    values = [residual(t) for t in grid]
    roots: list[float] = []
    for t0, t1, v0, v1 in zip(grid, grid[1:], values, values[1:]):
        if v0 == 0.0:
            roots.append(float(t0))
            continue
        if v0 * v1 < 0.0:
            lo, hi = float(t0), float(t1)
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                vm = residual(mid)
                if vm == 0.0:
                    lo = hi = mid
                    break
                if residual(lo) * vm < 0.0:
                    hi = mid
                else:
                    lo = mid
            roots.append(0.5 * (lo + hi))
    if not roots:
        raise RuntimeError("no twist root found")

    def swing_of(t: float) -> np.ndarray:
        return matrix @ ScipyRotation.from_rotvec(axis * -t).as_matrix()

    t_star = min(roots, key=lambda t: ScipyRotation.from_matrix(swing_of(t)).magnitude())
    return swing_of(t_star)


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> Pose:
    return Pose(
        rng.uniform(-scale, scale, size=3),
        wxyz_from_scipy(ScipyRotation.random(random_state=rng)),
    )


# ---------------------------------------------------------------------------
# edit-distance oracle: the textbook recursion, memoized for feasibility
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def recursive_levenshtein(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        recursive_levenshtein(a[1:], b) + 1,
        recursive_levenshtein(a, b[1:]) + 1,
        recursive_levenshtein(a[1:], b[1:]) + (a[0] != b[0]),
    )


def all_strings(alphabet: str, max_len: int) -> list[str]:
    out = [""]
    frontier = [""]
    for _ in range(max_len):
        frontier = [s + c for s in frontier for c in alphabet]
        out.extend(frontier)
    return out
