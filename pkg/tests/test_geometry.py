import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from taplab.geometry import (
    AxisMask,
    Frame,
    Pose,
    PoseDelta,
    compose,
    interpolate,
    pose_difference,
    project_locked,
    quat_angle_between,
    quat_from_rotvec,
    quat_identity,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    quat_to_rotvec,
)

from helpers import (
    oracle_axis_content,
    oracle_remove_twist,
    oracle_rotation_angle,
    random_pose,
    wxyz_from_scipy,
)


def test_compose_identity_plus_zero_is_identity():
    out = compose(Pose(), PoseDelta.zero())
    assert np.array_equal(out.position, np.zeros(3))
    assert quat_angle_between(out.orientation, quat_identity()) < 1e-12


def test_compose_pure_translation():
    out = compose(Pose(), PoseDelta(np.array([0.1, 0.0, 0.0]), np.zeros(3)))
    np.testing.assert_allclose(out.position, [0.1, 0.0, 0.0])
    assert quat_angle_between(out.orientation, quat_identity()) < 1e-12


def test_compose_half_pi_yaw_twice_matches_quaternion_oracle():
    # oracle: compose two quarter turns with scipy, expect the half turn
    quarter = PoseDelta(np.zeros(3), np.array([0.0, 0.0, math.pi / 2]))
    pose = compose(compose(Pose(), quarter), quarter)
    expected = wxyz_from_scipy(
        ScipyRotation.from_rotvec([0, 0, math.pi / 2]) * ScipyRotation.from_rotvec([0, 0, math.pi / 2])
    )
    assert quat_angle_between(pose.orientation, expected) < 1e-9


def test_pose_difference_round_trips_through_compose():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = random_pose(rng)
        b = random_pose(rng)
        d = pose_difference(a, b)
        out = compose(a, d)
        assert out.allclose(b, pos_tol=1e-12, ang_tol=1e-9)


def test_quat_rotvec_round_trip_matches_scipy():
    rng = np.random.default_rng(11)
    for _ in range(300):
        rv = rng.normal(size=3)
        rv = rv / np.linalg.norm(rv) * rng.uniform(0, math.pi - 1e-6)
        q = quat_from_rotvec(rv)
        np.testing.assert_allclose(
            quat_to_matrix(q), ScipyRotation.from_rotvec(rv).as_matrix(), atol=1e-12
        )
        np.testing.assert_allclose(quat_to_rotvec(q), rv, atol=1e-9)


# ---------------------------------------------------------------------------
# project_locked
# ---------------------------------------------------------------------------

def test_locked_z_takes_reference_component():
    target = Pose(np.array([0.5, -0.2, 0.3]))
    reference = Pose(np.array([0.0, 0.0, 0.1]))
    mask = AxisMask((False, False, True, False, False, False), Frame.BASE)
    out = project_locked(target, reference, mask)
    assert out.position[2] == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_allclose(out.position[:2], target.position[:2])
    assert quat_angle_between(out.orientation, target.orientation) < 1e-12


def test_full_rotational_freeze_returns_reference_orientation():
    rng = np.random.default_rng(5)
    mask = AxisMask.all_rotation()
    for _ in range(50):
        target = random_pose(rng)
        reference = random_pose(rng)
        out = project_locked(target, reference, mask)
        assert quat_angle_between(out.orientation, reference.orientation) < 1e-9
        np.testing.assert_allclose(out.position, target.position)


def test_roll_only_lock_matches_swing_twist_oracle():
    # target rotated by rotvec (0.2, 0.1, 0) from the reference; the locked
    # output must carry zero twist about X and keep the pitch content, checked
    # against an oracle built from the rotation-matrix log / geometric twist.
    reference = Pose()
    rel_in = ScipyRotation.from_rotvec([0.2, 0.1, 0.0])
    target = Pose(np.zeros(3), wxyz_from_scipy(rel_in))
    mask = AxisMask((False, False, False, True, False, False), Frame.BASE)
    out = project_locked(target, reference, mask)

    out_matrix = quat_to_matrix(out.orientation)
    assert abs(oracle_axis_content(out_matrix, np.array([1.0, 0.0, 0.0]))) < 1e-6

    expected = oracle_remove_twist(rel_in.as_matrix(), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(out_matrix, expected, atol=1e-6)

    # pitch content preserved: extrinsic-xyz pitch unchanged by the roll lock
    pitch_in = rel_in.as_euler("xyz")[1]
    pitch_out = ScipyRotation.from_matrix(out_matrix).as_euler("xyz")[1]
    assert pitch_out == pytest.approx(pitch_in, abs=1e-6)


def _random_mask(rng: np.random.Generator) -> AxisMask:
    return AxisMask(
        tuple(bool(b) for b in rng.integers(0, 2, size=6)),
        Frame.BASE if rng.integers(0, 2) == 0 else Frame.TOOL,
    )


def test_project_locked_idempotent_randomized():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        target = random_pose(rng)
        reference = random_pose(rng)
        mask = _random_mask(rng)
        once = project_locked(target, reference, mask)
        twice = project_locked(once, reference, mask)
        assert twice.allclose(once, pos_tol=1e-9, ang_tol=1e-9)


def test_project_locked_empty_mask_is_identity():
    rng = np.random.default_rng(9)
    for _ in range(200):
        target = random_pose(rng)
        out = project_locked(target, random_pose(rng), AxisMask.none())
        assert np.array_equal(out.position, target.position)
        assert np.array_equal(out.orientation, target.orientation)


def test_project_locked_tool_frame_translation():
    # reference rotated 90 deg about z: tool x is world y. Locking X in the
    # tool frame must freeze motion along world y relative to the reference.
    reference = Pose(np.zeros(3), quat_from_rotvec(np.array([0.0, 0.0, math.pi / 2])))
    target = Pose(np.array([0.2, 0.3, 0.1]), reference.orientation.copy())
    mask = AxisMask((True, False, False, False, False, False), Frame.TOOL)
    out = project_locked(target, reference, mask)
    np.testing.assert_allclose(out.position, [0.2, 0.0, 0.1], atol=1e-12)


def test_locked_rotation_axes_have_no_twist():
    rng = np.random.default_rng(13)
    axes = np.eye(3)
    for _ in range(300):
        target = random_pose(rng)
        reference = random_pose(rng)
        locked = tuple(bool(b) for b in rng.integers(0, 2, size=3))
        if not any(locked):
            continue
        mask = AxisMask((False, False, False) + locked, Frame.BASE)
        out = project_locked(target, reference, mask)
        rel = quat_multiply(out.orientation, np.array([1.0, -1, -1, -1]) * reference.orientation)
        rel_matrix = quat_to_matrix(quat_normalize(rel))
        for i in range(3):
            if locked[i]:
                assert abs(oracle_axis_content(rel_matrix, axes[i])) < 1e-6


# ---------------------------------------------------------------------------
# interpolate
# ---------------------------------------------------------------------------

def test_interpolate_endpoints_exact():
    rng = np.random.default_rng(17)
    a, b = random_pose(rng), random_pose(rng)
    assert interpolate(a, b, 0.0).allclose(a, pos_tol=0.0, ang_tol=0.0)
    assert interpolate(a, b, 1.0).allclose(b, pos_tol=0.0, ang_tol=0.0)


def test_interpolate_midpoint_of_near_antipodal_rotation():
    # rotations nearly a half-turn apart: midpoint angle is half the total
    rng = np.random.default_rng(19)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    a = Pose()
    b = Pose(np.zeros(3), quat_from_rotvec(axis * (math.pi - 1e-3)))
    mid = interpolate(a, b, 0.5)
    total = oracle_rotation_angle(a.orientation, b.orientation)
    half = oracle_rotation_angle(a.orientation, mid.orientation)
    assert half == pytest.approx(total / 2.0, abs=1e-6)
    # the flipped-sign representation of b must slerp to the same midpoint
    b_neg = Pose(np.zeros(3), -b.orientation)
    mid2 = interpolate(a, b_neg, 0.5)
    assert mid2.allclose(mid, pos_tol=1e-12, ang_tol=1e-9)


def test_interpolate_position_path_length_monotone():
    rng = np.random.default_rng(23)
    a, b = random_pose(rng), random_pose(rng)
    fractions = np.linspace(0.0, 1.0, 17)
    distances = [
        float(np.linalg.norm(interpolate(a, b, f).position - a.position)) for f in fractions
    ]
    assert all(d2 >= d1 - 1e-12 for d1, d2 in zip(distances, distances[1:]))


def test_interpolate_rejects_out_of_range_fraction():
    with pytest.raises(ValueError):
        interpolate(Pose(), Pose(), 1.5)


# ---------------------------------------------------------------------------
# normalization preservation
# ---------------------------------------------------------------------------

def test_orientation_normalized_after_every_operation():
    rng = np.random.default_rng(29)
    for _ in range(2000):
        a = random_pose(rng)
        b = random_pose(rng)
        delta = PoseDelta(rng.normal(scale=0.05, size=3), rng.normal(scale=0.2, size=3))
        outs = [
            compose(a, delta),
            interpolate(a, b, float(rng.uniform())),
            project_locked(a, b, _random_mask(rng)),
        ]
        for out in outs:
            assert abs(np.linalg.norm(out.orientation) - 1.0) < 1e-9
