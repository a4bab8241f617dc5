#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""位姿代数测试"""

import math

import numpy as np
import pytest

from core.geometry import (
    Pose, PoseTolerance, compose, inverse, relative, approx_eq, wrap_angle, angle_diff,
    interpolate, clip_delta, IDENTITY,
)
from core.simenv import straight_targets


def _random_poses(n, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.uniform([-1.0, -1.0, -math.pi], [1.0, 1.0, math.pi], size=(n, 3))
    return [Pose(*v) for v in values]


def _close(a, b, eps=1e-10):
    return (abs(a.x - b.x) <= eps and abs(a.y - b.y) <= eps
            and abs(angle_diff(a.theta, b.theta)) <= eps)


def test_compose_is_associative():
    poses = _random_poses(3000)
    for a, b, c in zip(poses[0::3], poses[1::3], poses[2::3]):
        assert _close(compose(compose(a, b), c), compose(a, compose(b, c)))


def test_inverse_and_relative_closure():
    poses = _random_poses(2000, seed=1)
    for a, b in zip(poses[0::2], poses[1::2]):
        assert _close(compose(a, inverse(a)), IDENTITY)
        assert _close(compose(inverse(a), a), IDENTITY)
        assert _close(compose(a, relative(a, b)), b)
        assert _close(relative(a, a), IDENTITY)


def test_matrix_form_matches_compose():
    a, b = Pose(0.1, -0.2, 0.7), Pose(-0.3, 0.05, -2.9)
    product = Pose.from_matrix(a.as_matrix() @ b.as_matrix())
    assert _close(product, compose(a, b), 1e-12)


def test_angles_are_wrapped():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert Pose(0, 0, 2 * math.pi + 0.1).theta == pytest.approx(0.1)
    pose = compose(Pose(0, 0, 3.0), Pose(0, 0, 3.0))
    assert -math.pi < pose.theta <= math.pi


def test_approx_eq_bounds_are_inclusive():
    tol = PoseTolerance(0.001, math.radians(0.5))
    assert approx_eq(Pose(0.001, 0.0, 0.0), IDENTITY, tol)
    assert not approx_eq(Pose(0.0011, 0.0, 0.0), IDENTITY, tol)
    assert approx_eq(Pose(0, 0, math.radians(0.5)), IDENTITY, tol)
    # 最短角距离：跨 ±π 的两个角很近
    assert approx_eq(Pose(0, 0, math.pi - 1e-4), Pose(0, 0, -math.pi + 1e-4), tol)


@pytest.mark.parametrize('trans_tol, rot_tol', [(0.0, 0.1), (0.1, 0.0), (-1.0, 0.1)])
def test_tolerance_must_be_positive(trans_tol, rot_tol):
    with pytest.raises(ValueError):
        PoseTolerance(trans_tol, rot_tol)


def test_pose_from_list_requires_three_values():
    with pytest.raises(ValueError):
        Pose.from_list([1.0, 2.0])


def test_interpolation_ends_exactly_at_goal():
    a, b = Pose(0.0, 0.0, 3.0), Pose(0.05, -0.02, -3.0)
    assert interpolate(a, b, 1.0) == b
    middle = interpolate(a, b, 0.5)
    # 走最短弧，经过 ±π
    assert abs(middle.theta) > 3.0
    targets = straight_targets(a, b, 0.008, math.radians(2.0))
    assert targets[-1] == b
    expected = max(math.ceil(math.hypot(0.05, 0.02) / 0.008),
                   math.ceil(abs(angle_diff(b.theta, a.theta)) / math.radians(2.0)))
    assert len(targets) == expected


def test_zero_length_segment_takes_one_tick():
    a = Pose(0.1, 0.2, 0.3)
    assert straight_targets(a, a, 0.008, 0.03) == [a]


def test_clip_delta_limits_each_component():
    clipped = clip_delta(Pose(0.03, 0.04, 0.5), 0.01, 0.1)
    assert clipped.translation_norm() == pytest.approx(0.01)
    assert clipped.x / clipped.y == pytest.approx(0.75)
    assert clipped.theta == pytest.approx(0.1)
    small = Pose(0.001, 0.0, -0.01)
    assert clip_delta(small, 0.01, 0.1) == small
