#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""增强轨迹采集测试"""

import math
from dataclasses import replace

import numpy as np
import pytest

from core.errors import ConfigError, UnrecoverableStateError, RecordFormatError
from core.geometry import Pose, PoseTolerance, compose, relative, approx_eq
from core.simenv import reset, teleport_ee, nudge_object
from core.renderer import render
from core.disturbance import image_similarity
from core.collector import (
    CollectorConfig, STOP_COMPLETED, STOP_DISTURBANCE, STOP_FORCE_LIMIT,
    sample_start_offset, sample_trajectory, return_to_waypoint, collect,
    build_manifest, save_dataset, load_dataset, save_manifest, load_manifest,
)
from core.harness import make_demo

from tests.conftest import small_collector_config, SMALL_CAMERA


def _world_at(demo, k, config):
    world = reset(demo.scenario_id, demo.seed)
    return return_to_waypoint(world, k, demo, config)


def _nudge_theta(demo, nudge, camera=None, extractor=None):
    """取未扰动与被推动场景相似度的中点作为阈值"""
    k, index, dx, dy = nudge
    world = _world_at(demo, k, CollectorConfig())
    reference = demo.observation(k).image
    clean = image_similarity(reference, render(world, camera), extractor)
    nudged = image_similarity(reference, render(nudge_object(world, index, dx, dy), camera), extractor)
    assert nudged < clean
    return min(0.999, (clean + nudged) / 2.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        CollectorConfig(Z=0)
    with pytest.raises(ConfigError):
        CollectorConfig(theta=1.5)
    with pytest.raises(ConfigError):
        CollectorConfig(trans_range=-0.01)
    assert CollectorConfig(trans_range=0.0, rot_range=0.0).trans_range == 0.0


def test_offsets_stay_inside_the_box():
    config = CollectorConfig(trans_range=0.04, rot_range=math.radians(4.0))
    rng = np.random.default_rng(0)
    for _ in range(200):
        offset = sample_start_offset(rng, config)
        assert abs(offset.x) <= 0.04 and abs(offset.y) <= 0.04
        assert abs(offset.theta) <= math.radians(4.0)
    assert sample_start_offset(rng, CollectorConfig(trans_range=0.0, rot_range=0.0)) == Pose()


def test_zero_offset_gives_a_single_step(reach_demo, small_extractor):
    config = small_collector_config()
    world = _world_at(reach_demo, 4, config)
    world, traj = sample_trajectory(world, reach_demo, 4, config, offset=Pose(),
                                    camera=SMALL_CAMERA, extractor=small_extractor)
    assert traj.M == 1
    assert traj.reached
    assert traj.steps[0].action.delta.translation_norm() < 1e-4


def test_trajectory_labels_chain_to_the_final_pose(reach_demo, small_extractor):
    config = small_collector_config()
    world = _world_at(reach_demo, 3, config)
    offset = Pose(0.02, -0.015, math.radians(2.0))
    world, traj = sample_trajectory(world, reach_demo, 3, config, offset=offset,
                                    camera=SMALL_CAMERA, extractor=small_extractor)
    assert traj.reached and not traj.timed_out
    assert approx_eq(traj.final_pose, reach_demo.waypoint(3), config.pose_tol)
    assert approx_eq(traj.start_pose, compose(reach_demo.waypoint(3), offset), PoseTolerance(0.002, 0.01))
    chain = [s.waypoint for s in traj.steps] + [traj.final_pose]
    for m, s in enumerate(traj.steps):
        assert s.action.delta == relative(chain[m], chain[m + 1])
    # 25 mm 按 8 mm 一拍需要 4 拍
    assert traj.M == 4
    assert traj.similarity > 0.9


def test_tick_budget_marks_timeouts(reach_demo, small_extractor):
    config = small_collector_config(max_ticks_per_traj=6, settle_ticks=4)
    world = _world_at(reach_demo, 2, config)
    world, traj = sample_trajectory(world, reach_demo, 2, config, offset=Pose(0.04, 0.04, 0.0),
                                    camera=SMALL_CAMERA, extractor=small_extractor)
    assert traj.timed_out
    assert not traj.reached
    assert traj.M == 2


@pytest.mark.parametrize('k', [1, 5, 10])
def test_return_to_waypoint_restores_demo_pose(reach_demo, k):
    config = small_collector_config()
    world = teleport_ee(reset('reach', 0), compose(reach_demo.waypoint(k), Pose(0.01, 0.01, 0.0)))
    world = return_to_waypoint(world, k, reach_demo, config)
    assert approx_eq(world.ee_pose, reach_demo.waypoint(k), config.pose_tol)


def test_unrecoverable_state_carries_diagnostics(reach_demo):
    config = small_collector_config()
    # 示教路点被篡改后重放回不去
    tampered = make_demo('reach', 0, SMALL_CAMERA)
    step = tampered.steps[4]
    tampered.steps[4] = replace(step, waypoint=compose(step.waypoint, Pose(0.01, 0.0, 0.0)))
    with pytest.raises(UnrecoverableStateError) as info:
        return_to_waypoint(reset('reach', 0), 5, tampered, config)
    assert info.value.diagnostics['k'] == 5
    assert info.value.diagnostics['distance'] > config.pose_tol.trans_tol


def test_collect_requires_world_at_first_waypoint(reach_demo):
    world = teleport_ee(reset('reach', 0), compose(reach_demo.waypoint(1), Pose(0.02, 0.0, 0.0)))
    with pytest.raises(UnrecoverableStateError):
        collect(world, reach_demo, small_collector_config(), SMALL_CAMERA)


def test_completed_collection(reach_collection, reach_demo):
    result = reach_collection
    assert result.stop_reason == STOP_COMPLETED
    assert result.R == result.N == reach_demo.N
    assert result.zeta_remaining == []
    assert len(result.dataset) == 2 * reach_demo.N
    assert all(result.count(k) == 2 for k in range(1, reach_demo.N + 1))
    assert result.collected_waypoints == reach_demo.N
    for traj in result.dataset:
        assert approx_eq(traj.final_pose, reach_demo.waypoint(traj.k), result.config.pose_tol)
        assert traj.similarity >= result.config.theta


def test_collection_is_deterministic(reach_demo, reach_collection, small_extractor):
    again = collect(reset('reach', 0), reach_demo, small_collector_config(), SMALL_CAMERA, small_extractor)
    assert [t.final_pose for t in again.dataset] == [t.final_pose for t in reach_collection.dataset]
    assert [t.M for t in again.dataset] == [t.M for t in reach_collection.dataset]


def test_force_limit_stops_collection():
    demo = make_demo('push-block', 0, SMALL_CAMERA)
    config = small_collector_config(force_limit=0.5, check_disturbance=False)
    result = collect(reset('push-block', 0), demo, config, SMALL_CAMERA)
    assert result.stop_reason == STOP_FORCE_LIMIT
    assert result.R < result.N
    assert all(t.k < result.R for t in result.dataset)
    assert result.zeta_remaining == demo.actions[result.R - 1:]


def test_random_order_drops_trajectories_beyond_R(small_extractor):
    demo = make_demo('push-block', 0, SMALL_CAMERA)
    nudge = (6, 1, 0.0, 0.05)
    theta = _nudge_theta(demo, nudge, SMALL_CAMERA, small_extractor)
    config = small_collector_config(Z=1, sequential=False, scripted_nudge=nudge, seed=3, theta=theta)
    result = collect(reset('push-block', 0), demo, config, SMALL_CAMERA, small_extractor)
    assert result.stop_reason == STOP_DISTURBANCE
    assert all(t.k < result.R for t in result.dataset)


def test_peg_jam_is_unreachable_and_recoverable(small_extractor):
    demo = make_demo('peg', 0, SMALL_CAMERA)
    config = CollectorConfig()
    k = 16
    world = _world_at(demo, k, config)
    # 从槽口右上方斜着返回，销落在唇边上
    world, traj = sample_trajectory(world, demo, k, config, offset=Pose(0.03, 0.035, 0.0),
                                    camera=SMALL_CAMERA, extractor=small_extractor)
    assert not traj.reached
    assert not traj.timed_out
    assert traj.final_pose.y > demo.waypoint(k).y + 0.01

    world = return_to_waypoint(world, k, demo, config)
    assert approx_eq(world.ee_pose, demo.waypoint(k), config.pose_tol)


@pytest.mark.slow
def test_peg_collection_rejects_jammed_returns(monkeypatch):
    import core.collector as collector_module

    demo = make_demo('peg', 0)
    restored = []
    original = collector_module.return_to_waypoint

    def recording_return(world, k, demo_, config=None):
        world = original(world, k, demo_, config)
        restored.append(approx_eq(world.ee_pose, demo_.waypoint(k), (config or CollectorConfig()).pose_tol))
        return world

    monkeypatch.setattr(collector_module, 'return_to_waypoint', recording_return)
    result = collect(reset('peg', 0), demo, CollectorConfig(Z=10))

    assert result.stop_reason == STOP_COMPLETED
    unreachable = sum(r['unreachable'] for r in result.waypoint_stats.values())
    attempts = sum(r['attempts'] for r in result.waypoint_stats.values())
    assert unreachable / attempts >= 0.10
    assert len(restored) == unreachable and all(restored)
    for traj in result.dataset:
        assert approx_eq(traj.final_pose, demo.waypoint(traj.k), result.config.pose_tol)


@pytest.mark.slow
def test_full_reach_collection_yields_Z_per_waypoint():
    demo = make_demo('reach', 0)
    result = collect(reset('reach', 0), demo, CollectorConfig(Z=10))
    assert result.N == 10
    assert result.R == result.N
    assert len(result.dataset) == 100
    assert result.exhausted == []


@pytest.mark.slow
def test_scripted_disturbance_sets_R():
    demo = make_demo('push-block', 0)
    nudge = (3, 1, 0.0, 0.05)
    config = CollectorConfig(Z=3, trans_range=0.01, scripted_nudge=nudge, theta=_nudge_theta(demo, nudge))
    result = collect(reset('push-block', 0), demo, config)
    assert result.stop_reason == STOP_DISTURBANCE
    assert result.R == 3
    assert not any(t.k >= 3 for t in result.dataset)
    assert result.zeta_remaining == demo.actions[2:]


def test_dataset_and_manifest_files(tmp_path, reach_collection):
    path = tmp_path / 'dataset.jsonl'
    save_dataset(reach_collection, str(path), demo_hash='abc')
    loaded = load_dataset(str(path))
    assert loaded.R == reach_collection.R
    assert len(loaded.dataset) == len(reach_collection.dataset)
    first, original = loaded.dataset[0], reach_collection.dataset[0]
    assert first.k == original.k
    assert first.final_pose == original.final_pose
    assert [s.action for s in first.steps] == [s.action for s in original.steps]
    assert loaded.config.theta == reach_collection.config.theta

    manifest = build_manifest(reach_collection, 'abc', 'def')
    save_manifest(manifest, str(tmp_path / 'manifest.json'))
    reloaded = load_manifest(str(tmp_path / 'manifest.json'))
    assert reloaded['R'] == reach_collection.R
    assert reloaded['per_waypoint']['1']['valid'] == 2
    assert reloaded['config_hash'] == reach_collection.config.config_hash()

    lines = path.read_text(encoding='utf-8').splitlines(keepends=True)
    path.write_text(''.join(lines[:-2]), encoding='utf-8')
    with pytest.raises(RecordFormatError):
        load_dataset(str(path))
