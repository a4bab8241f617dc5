#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
策略部署模块

闭环执行：观测 -> 网络单步 -> 执行（相对当前实际位姿）。
连续 K 次预测恒等动作或超时后，切换到开环重放剩余示教动作 a_R..a_N。
恒等动作在执行前判定，判定为恒等的动作不执行（只保持一拍）。
"""

import math
from dataclasses import dataclass, field, asdict, replace
from typing import Dict, List

from .errors import ConfigError
from .geometry import Pose
from .records import FORMAT_VERSION, write_jsonl
from .demo import observe, replay_actions
from .simenv import apply_delta, settle, step, is_success

SWITCH_IDENTITY = 'identity'
SWITCH_TIMEOUT = 'timeout'
SWITCH_NONE = 'n/a'


@dataclass(frozen=True)
class DeployConfig:
    identity_eps_trans: float = 0.0005
    identity_eps_rot: float = math.radians(0.25)
    identity_consecutive: int = 3
    timeout_ticks: int = 200
    tick_rate: float = 10.0
    settle_ticks: int = 4

    def __post_init__(self):
        for name in ('identity_eps_trans', 'identity_eps_rot', 'identity_consecutive',
                     'timeout_ticks', 'tick_rate'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} 必须为正: {getattr(self, name)}", f'deploy.{name}')
        if self.settle_ticks < 0:
            raise ConfigError("settle_ticks 不能为负", 'deploy.settle_ticks')

    @classmethod
    def for_timeout_seconds(cls, seconds, tick_rate=10.0, **kwargs):
        return cls(timeout_ticks=int(round(seconds * tick_rate)), tick_rate=tick_rate, **kwargs)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpisodeResult:
    success: bool
    ticks_closed_loop: int
    switched_by: str
    replayed: int
    final_pose: Pose
    trace: List[Dict] = field(default_factory=list)

    def summary(self):
        return {
            'success': self.success,
            'ticks_closed_loop': self.ticks_closed_loop,
            'switched_by': self.switched_by,
            'replayed': self.replayed,
            'final_pose': self.final_pose.to_list(),
        }


def is_identity_action(action, cfg=None):
    """位姿增量在阈值内（含边界）即为恒等动作"""
    cfg = cfg or DeployConfig()
    delta = action.delta
    return (delta.translation_norm() <= cfg.identity_eps_trans
            and abs(delta.theta) <= cfg.identity_eps_rot)


def _trace_entry(tick, mode, action, force, identity):
    return {
        'tick': tick,
        'mode': mode,
        'action': action.to_record(),
        'force': force,
        'identity': identity,
    }


def deploy(pi, world, cfg=None, camera=None):
    """
    执行一个评估回合

    Args:
        pi: 策略（需提供 initial_state / act / zeta_remaining / hidden_reset_interval）
        world: 按评估随机化复位的世界
        cfg: DeployConfig

    Returns:
        EpisodeResult（失败只记录，不抛出）
    """
    cfg = cfg or DeployConfig()
    observe_world = getattr(pi, 'observe_world', None)
    interval = max(1, int(pi.hidden_reset_interval))
    h = pi.initial_state()
    trace = []
    consecutive = 0
    ticks = 0
    switched_by = SWITCH_TIMEOUT

    while ticks < cfg.timeout_ticks:
        if ticks > 0 and ticks % interval == 0:
            h = pi.initial_state()
        if observe_world is not None:
            observe_world(world)
        action, h = pi.act(observe(world, camera), h)
        identity = is_identity_action(action, cfg)
        ticks += 1
        if identity:
            consecutive += 1
            world, reading = step(world, world.ee_target, action.gripper)
        else:
            consecutive = 0
            world, reading = apply_delta(world, action.delta, action.gripper, anchor='pose')
        trace.append(_trace_entry(ticks, 'closed', action, reading.magnitude(), identity))
        if consecutive >= cfg.identity_consecutive:
            switched_by = SWITCH_IDENTITY
            break

    replayed = 0
    if pi.zeta_remaining:
        world = replace(world, ee_target=world.ee_pose)

        def on_tick(index, w):
            trace.append(_trace_entry(ticks + index + 1, 'replay', pi.zeta_remaining[index],
                                      w.force.magnitude(), False))

        world, _ = replay_actions(world, pi.zeta_remaining, cfg.settle_ticks, on_tick)
        replayed = len(pi.zeta_remaining)
    else:
        switched_by = SWITCH_NONE
        world, _ = settle(world, cfg.settle_ticks)

    return EpisodeResult(is_success(world), ticks, switched_by, replayed, world.ee_pose, trace)


def save_trace(result, path, extra=None):
    """回合轨迹 JSON-lines：头记录 + 每拍一条"""
    header = {'type': 'header', 'kind': 'trace', 'version': FORMAT_VERSION, **result.summary()}
    if extra:
        header.update(extra)
    write_jsonl(path, [header] + [{'type': 'tick', **entry} for entry in result.trace])
    return path
