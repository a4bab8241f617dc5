#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""数据融合测试"""

import math
from dataclasses import replace

import pytest

from core.errors import IntegrityError, RecordFormatError
from core.geometry import Pose, PoseTolerance, approx_eq, translation_distance
from core.simenv import reset
from core.demo import Action
from core.fusion import (
    SRC_DEMO, fuse, check_seam, relabel_nearest_waypoint, subsample, replay_sequence,
    save_fused, load_fused, truncated_demo,
)


def _truncated_result(result, demo, R):
    """把完成的采集结果改写成在 R 处停止"""
    return replace(result, dataset=[t for t in result.dataset if t.k < R], R=R,
                   zeta_remaining=list(demo.actions[R - 1:]), stop_reason='disturbance')


def test_fused_layout(reach_fused, reach_collection, reach_demo):
    fused = reach_fused
    assert len(fused) == 1 + len(reach_collection.dataset)
    assert fused.demo_sequence.src == SRC_DEMO
    assert len(fused.demo_sequence) == reach_demo.N
    assert fused.zeta_remaining == []
    for seq, traj in zip(fused.augmentation_sequences, reach_collection.dataset):
        assert seq.k == traj.k
        assert len(seq) == traj.M + (fused.R - traj.k + 1)
        assert seq.src.startswith(f"aug:k={traj.k}#")
        assert len(seq.observations) == len(seq.actions) == len(seq.waypoints)
    assert fused.collected_waypoints == reach_demo.N


def test_sequences_end_with_a_hold(reach_fused):
    for seq in reach_fused.sequences:
        assert seq.actions[-1] == Action.hold(seq.actions[-1].gripper)


def test_fusion_switch_point(reach_collection, reach_demo):
    R = 6
    fused = fuse(_truncated_result(reach_collection, reach_demo, R), reach_demo)
    assert fused.R == R
    assert len(fused.demo_sequence) == R
    assert fused.demo_sequence.actions[:R - 1] == reach_demo.actions[:R - 1]
    # a_R 属于重放段，训练序列在 R 处保持
    assert fused.demo_sequence.actions[-1] == Action.hold()
    assert fused.zeta_remaining[0] == reach_demo.action(R)
    assert all(seq.k < R for seq in fused.augmentation_sequences)


def test_trajectory_beyond_R_is_an_integrity_error(reach_collection, reach_demo):
    broken = replace(reach_collection, R=5, zeta_remaining=list(reach_demo.actions[4:]))
    with pytest.raises(IntegrityError):
        fuse(broken, reach_demo)


def test_seam_checks(reach_collection, reach_demo):
    traj = reach_collection.dataset[0]
    tol = PoseTolerance(0.001, math.radians(0.5))
    check_seam(traj, reach_demo, tol, 0.9)
    far = replace(traj, final_pose=Pose(traj.final_pose.x + 0.01, traj.final_pose.y, traj.final_pose.theta))
    with pytest.raises(IntegrityError):
        check_seam(far, reach_demo, tol, None)
    check_seam(far, reach_demo, None, None)
    with pytest.raises(IntegrityError):
        check_seam(replace(traj, similarity=0.5), reach_demo, None, 0.9)


def test_fused_sequences_replay_to_the_switch_point(reach_fused, reach_demo):
    tol = PoseTolerance(0.001, math.radians(0.5))
    goal = reach_demo.waypoint(reach_fused.R)
    for seq in reach_fused.sequences:
        world, _ = replay_sequence(reset('reach', 0), seq)
        assert approx_eq(world.ee_pose, goal, tol), seq.src


def test_sequence_without_waypoints_cannot_be_replayed(reach_fused):
    seq = replace(reach_fused.sequences[1], waypoints=[])
    with pytest.raises(IntegrityError):
        replay_sequence(reset('reach', 0), seq)


def test_nearest_waypoint_relabel(reach_collection, reach_demo):
    fused = relabel_nearest_waypoint(reach_collection, reach_demo, 0.01, math.radians(5.0))
    assert len(fused) == len(reach_collection.dataset) + 1
    for seq, traj in zip(fused.augmentation_sequences, reach_collection.dataset):
        for action in seq.actions[:traj.M]:
            assert action.delta.translation_norm() <= 0.01 + 1e-12
            assert abs(action.delta.theta) <= math.radians(5.0) + 1e-12
        first = traj.steps[0].waypoint
        nearest = min(reach_demo.waypoints, key=lambda w: translation_distance(first, w))
        expected = min(translation_distance(first, nearest), 0.01)
        assert seq.actions[0].delta.translation_norm() == pytest.approx(expected, abs=1e-9)
        assert seq.actions[-1] == Action.hold()


def test_subsample_keeps_the_demo(reach_fused):
    assert subsample(reach_fused, 1.0) is reach_fused
    half = subsample(reach_fused, 0.5, seed=1)
    assert half.demo_sequence is reach_fused.demo_sequence
    assert len(half.augmentation_sequences) == round(0.5 * len(reach_fused.augmentation_sequences))
    assert [s.src for s in half.sequences] == [s.src for s in subsample(reach_fused, 0.5, seed=1).sequences]
    order = [s.src for s in reach_fused.sequences]
    positions = [order.index(s.src) for s in half.sequences]
    assert positions == sorted(positions)
    for fraction in (0.0, 1.5):
        with pytest.raises(ValueError):
            subsample(reach_fused, fraction)


def test_fused_file_round_trip(tmp_path, reach_fused):
    path, sidecar = tmp_path / 'fused.jsonl', tmp_path / 'fused.waypoints.json'
    save_fused(reach_fused, str(path), str(sidecar))
    assert '"w"' not in path.read_text(encoding='utf-8')
    loaded = load_fused(str(path), str(sidecar))
    assert len(loaded) == len(reach_fused)
    assert loaded.R == reach_fused.R and loaded.N == reach_fused.N
    for a, b in zip(loaded.sequences, reach_fused.sequences):
        assert a.src == b.src and a.k == b.k
        assert a.actions == b.actions
        assert a.waypoints == b.waypoints
    without = load_fused(str(path))
    assert without.sequences[1].waypoints == []


def test_fused_file_rejects_waypoint_fields(tmp_path, reach_fused):
    path = tmp_path / 'fused.jsonl'
    save_fused(reach_fused, str(path))
    lines = path.read_text(encoding='utf-8').splitlines()
    lines[2] = lines[2][:-1] + ',"w":[0,0,0]}'
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    with pytest.raises(RecordFormatError) as info:
        load_fused(str(path))
    assert info.value.field == 'w'


def test_truncated_demo_hold(reach_demo):
    seq = truncated_demo(reach_demo, 3)
    assert len(seq) == 3
    assert seq.actions[:2] == reach_demo.actions[:2]
    assert seq.actions[2] == Action.hold()
