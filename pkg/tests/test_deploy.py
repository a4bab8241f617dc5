#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""部署测试：闭环执行与开环重放的切换"""

import json
import math

import pytest

from core.errors import ConfigError
from core.geometry import Pose, approx_eq, PoseTolerance
from core.demo import Action
from core.scenarios import RandomizationSpec
from core.simenv import reset, translate_scene
from core.network import PolicyNet
from core.policy import Policy
from core.deploy import DeployConfig, deploy, is_identity_action, save_trace

from tests.conftest import small_network_config


class ScriptedPolicy:
    """按固定动作序列输出的策略，记录每次收到的隐状态"""

    def __init__(self, actions, zeta_remaining=(), interval=100):
        self.actions = list(actions)
        self.zeta_remaining = list(zeta_remaining)
        self.hidden_reset_interval = interval
        self.states = []

    def initial_state(self):
        return 0

    def act(self, observation, h):
        self.states.append(h)
        index = min(len(self.states) - 1, len(self.actions) - 1)
        return self.actions[index], h + 1


MOVE = Action(Pose(0.005, 0.0, 0.0))


def test_identity_threshold_is_inclusive():
    cfg = DeployConfig(identity_eps_trans=0.001, identity_eps_rot=0.01)
    assert is_identity_action(Action.hold(), cfg)
    assert is_identity_action(Action(Pose(0.001, 0.0, 0.01)), cfg)
    assert not is_identity_action(Action(Pose(0.0011, 0.0, 0.0)), cfg)
    assert not is_identity_action(Action(Pose(0.0, 0.0, -0.011)), cfg)


def test_deploy_config():
    assert DeployConfig.for_timeout_seconds(20.0).timeout_ticks == 200
    assert DeployConfig.for_timeout_seconds(3.0, tick_rate=5.0).timeout_ticks == 15
    with pytest.raises(ConfigError) as info:
        DeployConfig(identity_consecutive=0)
    assert info.value.key_path == 'deploy.identity_consecutive'


def test_identity_switches_to_replay(reach_demo, small_camera):
    pi = ScriptedPolicy([MOVE, Action.hold(), Action.hold(), Action.hold()], reach_demo.actions)
    world = reset('reach', 0)
    result = deploy(pi, world, DeployConfig(), small_camera)
    assert result.switched_by == 'identity'
    assert result.ticks_closed_loop == 4
    assert result.replayed == reach_demo.N
    assert [e['mode'] for e in result.trace] == ['closed'] * 4 + ['replay'] * reach_demo.N
    assert [e['identity'] for e in result.trace[:4]] == [False, True, True, True]


def test_identity_run_must_be_consecutive(reach_demo, small_camera):
    hold = Action.hold()
    pi = ScriptedPolicy([hold, hold, MOVE, hold, hold, hold], reach_demo.actions)
    result = deploy(pi, reset('reach', 0), DeployConfig(), small_camera)
    assert result.switched_by == 'identity'
    assert result.ticks_closed_loop == 6


def test_replay_from_the_start_succeeds(reach_demo, small_camera):
    pi = ScriptedPolicy([Action.hold()], reach_demo.actions)
    result = deploy(pi, reset('reach', 0), DeployConfig(), small_camera)
    assert result.ticks_closed_loop == 3
    assert result.success
    assert approx_eq(result.final_pose, reach_demo.waypoint(reach_demo.N), PoseTolerance(0.002, math.radians(1.0)))


def test_timeout_switches_to_replay(reach_demo, small_camera):
    pi = ScriptedPolicy([MOVE], [Action.hold()])
    result = deploy(pi, reset('reach', 0), DeployConfig(timeout_ticks=5), small_camera)
    assert result.switched_by == 'timeout'
    assert result.ticks_closed_loop == 5
    assert result.replayed == 1
    # 闭环动作相对实际位姿执行
    assert result.final_pose.x > reset('reach', 0).ee_pose.x + 0.01


def test_completed_collection_only_settles(small_camera):
    pi = ScriptedPolicy([Action.hold()])
    result = deploy(pi, reset('reach', 0), DeployConfig(), small_camera)
    assert result.switched_by == 'n/a'
    assert result.replayed == 0
    assert all(e['mode'] == 'closed' for e in result.trace)


def test_hidden_state_is_reset_periodically(small_camera):
    pi = ScriptedPolicy([MOVE], [Action.hold()], interval=2)
    deploy(pi, reset('reach', 0), DeployConfig(timeout_ticks=5), small_camera)
    assert pi.states == [0, 1, 0, 1, 0]


def test_trace_file(tmp_path, small_camera):
    pi = ScriptedPolicy([MOVE], [Action.hold()])
    result = deploy(pi, reset('reach', 0), DeployConfig(timeout_ticks=3), small_camera)
    path = tmp_path / 'trial-000.jsonl'
    save_trace(result, str(path), {'trial': 0})
    lines = [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines()]
    assert lines[0]['kind'] == 'trace'
    assert lines[0]['switched_by'] == 'timeout'
    assert lines[0]['trial'] == 0
    assert len(lines) == 1 + len(result.trace)
    assert [line['tick'] for line in lines[1:]] == [1, 2, 3, 4]


def test_scene_translation_leaves_the_episode_unchanged(small_camera):
    net = PolicyNet(small_network_config(), seed=11, action_scale=[0.004, 0.004, 0.02])
    pi = Policy(net, [Action.hold()], 15, 16, 6)
    world = reset('push-block', 2, RandomizationSpec(0.02, math.radians(3.0)))
    cfg = DeployConfig(timeout_ticks=12)
    a = deploy(pi, world, cfg, small_camera)
    b = deploy(pi, translate_scene(world, 0.7, -0.4), cfg, small_camera)
    assert a.trace == b.trace
    assert a.final_pose == b.final_pose
    assert a.success == b.success
    assert a.ticks_closed_loop == b.ticks_closed_loop
