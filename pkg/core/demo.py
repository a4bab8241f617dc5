#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
示教记录模块

示教 ζ 是 N 个 (路点 w_n, 观测 o_n, 动作 a_n) 三元组：
- o_n 在 w_n 处观测
- a_n 是在 w_n 处执行的动作，即 w_{n+1} 在 w_n 坐标系下的相对位姿
- 最后一个动作 a_N 为恒等保持

文件格式为 JSON-lines：头记录 + 每步一条记录
  {"w": [x, y, theta], "img": <base64>, "f": [fx, fy, tz], "a": {"d": [dx, dy, dtheta], "g": 0|1}}
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import RecordFormatError, ScriptUnreachableError, TaskFailedError
from .geometry import Pose, IDENTITY, relative, translation_distance, approx_eq
from .records import (
    FORMAT_VERSION, read_jsonl, write_jsonl, check_header, require,
    encode_image, decode_image,
)
from .renderer import render
from .scenarios import RandomizationSpec, task_success
from .simenv import ForceReading, step, settle, apply_delta


@dataclass(frozen=True, eq=False)
class Observation:
    """观测：腕部相机图像 (H, W, 3) uint8 + 接触力"""

    image: np.ndarray
    force: ForceReading

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (self.image.shape == other.image.shape
                and np.array_equal(self.image, other.image)
                and self.force == other.force)

    def __hash__(self):
        return hash((self.image.tobytes(), self.force))


@dataclass(frozen=True)
class Action:
    """动作：相对上一末端坐标系的位姿增量 + 夹爪开合"""

    delta: Pose
    gripper: int = 0

    def to_record(self):
        return {'d': self.delta.to_list(), 'g': int(self.gripper)}

    @classmethod
    def from_record(cls, data, index=None, path=None):
        if not isinstance(data, dict):
            raise RecordFormatError("动作必须是对象", index, 'a', path)
        delta = require(data, 'd', index, path)
        gripper = require(data, 'g', index, path)
        if gripper not in (0, 1):
            raise RecordFormatError(f"夹爪取值必须为 0/1，实际为 {gripper}", index, 'a.g', path)
        return cls(_pose(delta, index, 'a.d', path), int(gripper))

    @classmethod
    def hold(cls, gripper=0):
        return cls(IDENTITY, gripper)


@dataclass(frozen=True)
class DemoStep:
    waypoint: Pose
    obs: Observation
    action: Action


@dataclass
class Demonstration:
    """单条示教"""

    steps: List[DemoStep]
    scenario_id: str
    seed: int
    tick_rate: float
    randomization: RandomizationSpec = field(default_factory=RandomizationSpec.none)

    def __post_init__(self):
        if len(self.steps) < 2:
            raise ValueError(f"示教长度必须 ≥ 2，实际为 {len(self.steps)}")

    def __len__(self):
        return len(self.steps)

    @property
    def N(self):
        return len(self.steps)

    def waypoint(self, k):
        """1 起始的路点 w_k"""
        return self.steps[k - 1].waypoint

    def action(self, k):
        return self.steps[k - 1].action

    def observation(self, k):
        return self.steps[k - 1].obs

    @property
    def waypoints(self):
        return [s.waypoint for s in self.steps]

    @property
    def actions(self):
        return [s.action for s in self.steps]

    @property
    def image_shape(self):
        return self.steps[0].obs.image.shape


def observe(world, camera=None, noise_seed=None):
    return Observation(render(world, camera, noise_seed), world.force)


def record_demo(world, script, camera=None, settle_ticks=4, verbose=False):
    """
    按脚本路点录制示教

    每拍把阻抗目标设为下一个脚本路点，记录实际到达的位姿；
    动作取实际相邻位姿的相对变换。最后一个路点保持 settle_ticks 拍后记录。

    Args:
        world: 刚复位的世界，末端位于脚本起点
        script: 路点列表（含起点），长度即示教长度 N
        camera: 相机参数
        settle_ticks: 末端在最后路点的稳定拍数

    Raises:
        ScriptUnreachableError: 某个路点跟踪偏差超过 script_tol 或步长超过上限
        TaskFailedError: 脚本结束时任务未完成
    """
    script = list(script)
    physics = world.physics
    if len(script) < 2:
        raise ScriptUnreachableError("脚本至少需要 2 个路点", 0)
    if translation_distance(world.ee_pose, script[0]) > physics.script_tol:
        raise ScriptUnreachableError("末端不在脚本起点", 0)

    for i in range(1, len(script)):
        delta = relative(script[i - 1], script[i])
        if (delta.translation_norm() > physics.max_step_trans + 1e-12
                or abs(delta.theta) > physics.max_step_rot + 1e-12):
            raise ScriptUnreachableError(f"路点 {i + 1} 与前一路点的距离超过每拍最大步长", i + 1)

    gripper = world.gripper
    poses = [world.ee_pose]
    observations = [observe(world, camera)]
    for i in range(1, len(script)):
        world, _ = step(world, script[i], gripper)
        if i == len(script) - 1:
            world, _ = settle(world, settle_ticks, gripper)
        if translation_distance(world.ee_pose, script[i]) > physics.script_tol:
            raise ScriptUnreachableError(
                f"路点 {i + 1} 无法到达（偏差 {translation_distance(world.ee_pose, script[i]):.4f} m）",
                i + 1,
            )
        poses.append(world.ee_pose)
        observations.append(observe(world, camera))

    if not task_success(world):
        raise TaskFailedError(f"场景 {world.scenario_id} 的示教脚本执行完毕但任务未完成")

    steps = []
    for n in range(len(poses)):
        if n + 1 < len(poses):
            action = Action(relative(poses[n], poses[n + 1]), gripper)
        else:
            action = Action.hold(gripper)
        steps.append(DemoStep(poses[n], observations[n], action))

    if verbose:
        print(f"✅ 示教录制完成: {world.scenario_id}, N={len(steps)}")

    return Demonstration(steps, world.scenario_id, world.seed, physics.tick_rate)


def replay_actions(world, actions, settle_ticks=4, on_tick=None):
    """
    开环重放动作序列（目标在指令目标上累加）

    Args:
        on_tick: 可选回调 on_tick(index, world)，每执行一个动作后调用

    Returns:
        (世界, 期间最大接触力)
    """
    peak = 0.0
    for index, action in enumerate(actions):
        world, reading = apply_delta(world, action.delta, action.gripper, anchor='target')
        peak = max(peak, reading.magnitude())
        if on_tick is not None:
            on_tick(index, world)
    world, settle_peak = settle(world, settle_ticks)
    return world, max(peak, settle_peak)


def replay_fidelity(world, demo, tol, settle_ticks=4):
    """
    从复位世界重放示教，返回每一步的位姿是否在容差内

    Returns:
        (末端世界, 每步是否达标的列表)
    """
    checks = []

    def on_tick(index, w):
        checks.append(approx_eq(w.ee_pose, demo.waypoint(index + 2), tol))

    world, _ = replay_actions(world, demo.actions[:-1], settle_ticks, on_tick)
    if checks:
        checks[-1] = approx_eq(world.ee_pose, demo.waypoint(demo.N), tol)
    return world, checks


# ---------------------------------------------------------------------------
# 记录编解码
# ---------------------------------------------------------------------------

def _pose(values, index, field_name, path):
    if not isinstance(values, list) or len(values) != 3:
        raise RecordFormatError("需要 [x, y, theta] 三元组", index, field_name, path)
    try:
        return Pose.from_list([float(v) for v in values])
    except (TypeError, ValueError) as e:
        raise RecordFormatError(f"数值无效: {e}", index, field_name, path) from e


def encode_step(obs, action, waypoint=None, extra=None):
    record = {'type': 'step', 'img': encode_image(obs.image), 'f': obs.force.to_list(),
              'a': action.to_record()}
    if waypoint is not None:
        record['w'] = waypoint.to_list()
    if extra:
        record.update(extra)
    return record


def decode_step(record, index, image_shape, path=None, with_waypoint=True):
    """解码一条步记录，返回 (waypoint 或 None, Observation, Action)"""
    if record.get('type') != 'step':
        raise RecordFormatError(f"期望步记录，实际为 {record.get('type')}", index, 'type', path)
    waypoint = None
    if with_waypoint:
        waypoint = _pose(require(record, 'w', index, path), index, 'w', path)
    elif 'w' in record:
        raise RecordFormatError("融合数据不允许包含路点字段", index, 'w', path)
    image = decode_image(require(record, 'img', index, path), image_shape, index, path)
    force_values = require(record, 'f', index, path)
    if not isinstance(force_values, list) or len(force_values) != 3:
        raise RecordFormatError("需要 [fx, fy, tz] 三元组", index, 'f', path)
    try:
        force = ForceReading.from_list(force_values)
    except (TypeError, ValueError) as e:
        raise RecordFormatError(f"数值无效: {e}", index, 'f', path) from e
    action = Action.from_record(require(record, 'a', index, path), index, path)
    return waypoint, Observation(image, force), action


def demo_header(demo):
    return {
        'type': 'header',
        'kind': 'demo',
        'version': FORMAT_VERSION,
        'scenario': demo.scenario_id,
        'seed': demo.seed,
        'tick_rate': demo.tick_rate,
        'image': list(demo.image_shape),
        'N': demo.N,
        'randomization': demo.randomization.to_dict(),
    }


def save_demo(demo, path):
    """保存示教为 JSON-lines（原子写入）"""
    records = [demo_header(demo)]
    for n, s in enumerate(demo.steps, start=1):
        records.append(encode_step(s.obs, s.action, s.waypoint, {'n': n}))
    write_jsonl(path, records)
    return path


def load_demo(path):
    """
    加载示教

    Raises:
        MissingInputError: 文件不存在
        VersionError: 版本不符
        RecordFormatError: 记录格式错误或文件被截断
    """
    records = read_jsonl(path)
    header = records[0]
    check_header(header, 'demo', path)
    image_shape = tuple(require(header, 'image', 0, path))
    expected = int(require(header, 'N', 0, path))

    steps = []
    for index, record in enumerate(records[1:], start=1):
        waypoint, obs, action = decode_step(record, index, image_shape, path)
        steps.append(DemoStep(waypoint, obs, action))
    if len(steps) != expected:
        raise RecordFormatError(
            f"文件被截断：头记录声明 {expected} 步，实际 {len(steps)} 步", len(records), None, path
        )

    return Demonstration(
        steps=steps,
        scenario_id=require(header, 'scenario', 0, path),
        seed=int(require(header, 'seed', 0, path)),
        tick_rate=float(require(header, 'tick_rate', 0, path)),
        randomization=RandomizationSpec.from_dict(header.get('randomization')),
    )
