#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
场景注册表模块

场景定义保存在 data/scenarios/<id>.json 中，包括：
- 物理参数（刚度、阻尼、末端半径、力限幅等）
- 场景物体（方块、带槽插座、铰链盖板、地面色块）
- 分段直线示教脚本
- 任务成功判定
"""

import os
import json
import math
from dataclasses import dataclass, replace
from typing import Dict, Tuple

import numpy as np

from .errors import UnknownScenarioError, ConfigError
from .geometry import Pose, compose, relative, interpolate, transform_points

DEFAULT_SCENARIO_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data', 'scenarios'
)

SHAPES = ('box', 'socket', 'lid')


@dataclass(frozen=True)
class PhysicsParams:
    """末端阻抗控制与接触参数"""

    stiffness: float = 400.0        # N/m
    damping: float = 10.0           # N·s/m
    substep_rate: float = 100.0     # Hz
    tick_rate: float = 10.0         # Hz
    ee_radius: float = 0.01         # m
    max_force: float = 30.0         # N
    block_drag: float = 1.5         # N，可移动方块的滑动阻力
    hinge_torque: float = 0.02      # N·m，铰链阻尼力矩
    max_step_trans: float = 0.01    # 每拍最大平移
    max_step_rot: float = 0.0873    # 每拍最大旋转
    script_tol: float = 0.005       # 示教跟踪偏差上限

    @property
    def dt(self):
        return 1.0 / self.tick_rate

    @property
    def rate(self):
        """一阶跟踪速率 κ = 刚度 / 阻尼"""
        return self.stiffness / self.damping


@dataclass(frozen=True)
class SceneObject:
    """
    场景物体

    shape 为 box / socket / lid；collidable 为 False 的 box 是地面色块，只参与渲染。
    dims 含义：
        box    -> (宽, 高)
        socket -> (槽宽, 槽深, 壁厚)
        lid    -> (长度, 厚度, 最大开角)
    """

    name: str
    shape: str
    pose: Pose
    dims: Tuple[float, ...]
    movable: bool = False
    hinge_angle: float = 0.0
    friction_coeff: float = 0.5
    collidable: bool = True
    color: Tuple[float, float, float] = (0.8, 0.8, 0.8)


@dataclass(frozen=True)
class RandomizationSpec:
    """场景整体随机偏移：平移范围（米）、旋转范围（弧度）、采样形状 box/sphere"""

    trans_range: float = 0.0
    rot_range: float = 0.0
    shape: str = 'box'

    def __post_init__(self):
        if self.trans_range < 0 or self.rot_range < 0:
            raise ConfigError("随机化范围不能为负")
        if self.shape not in ('box', 'sphere'):
            raise ConfigError(f"未知随机化形状: {self.shape}")

    @classmethod
    def none(cls):
        return cls()

    def is_none(self):
        return self.trans_range == 0 and self.rot_range == 0

    def sample(self, rng):
        """采样整体偏移位姿"""
        if self.is_none():
            return Pose.identity()
        if self.shape == 'sphere':
            radius = self.trans_range * math.sqrt(rng.uniform(0.0, 1.0))
            angle = rng.uniform(-math.pi, math.pi)
            dx, dy = radius * math.cos(angle), radius * math.sin(angle)
        else:
            dx, dy = rng.uniform(-self.trans_range, self.trans_range, size=2)
        dtheta = rng.uniform(-self.rot_range, self.rot_range) if self.rot_range > 0 else 0.0
        return Pose(dx, dy, dtheta)

    def to_dict(self):
        return {'trans_range': self.trans_range, 'rot_range': self.rot_range, 'shape': self.shape}

    @classmethod
    def from_dict(cls, data):
        if not data:
            return cls.none()
        return cls(float(data.get('trans_range', 0.0)), float(data.get('rot_range', 0.0)),
                   data.get('shape', 'box'))


@dataclass(frozen=True)
class Scenario:
    """一个注册场景的完整描述"""

    id: str
    description: str
    physics: PhysicsParams
    objects: Tuple[SceneObject, ...]
    script: Tuple[Pose, ...]
    gripper: int
    success: Dict
    floor_color: Tuple[float, float, float] = (0.35, 0.35, 0.35)

    @property
    def ee_start(self):
        return self.script[0]

    @property
    def demo_length(self):
        return len(self.script)

    def object_index(self, name):
        for i, obj in enumerate(self.objects):
            if obj.name == name:
                return i
        raise KeyError(f"场景 {self.id} 中不存在物体 {name}")


def _rect(cx, cy, w, h):
    """以 (cx, cy) 为中心的逆时针矩形顶点"""
    return np.array([[cx - w / 2, cy - h / 2],
                     [cx + w / 2, cy - h / 2],
                     [cx + w / 2, cy + h / 2],
                     [cx - w / 2, cy + h / 2]])


def local_polygons(obj):
    """物体坐标系下的凸多边形列表"""
    if obj.shape == 'box':
        return [_rect(0.0, 0.0, obj.dims[0], obj.dims[1])]
    if obj.shape == 'socket':
        slot, depth, wall = obj.dims
        side = slot / 2 + wall / 2
        return [
            _rect(-side, -depth / 2, wall, depth),
            _rect(side, -depth / 2, wall, depth),
            _rect(0.0, -depth - wall / 2, slot + 2 * wall, wall),
        ]
    if obj.shape == 'lid':
        length, thickness = obj.dims[0], obj.dims[1]
        panel = _rect(length / 2, 0.0, length, thickness)
        return [transform_points(Pose(0.0, 0.0, obj.hinge_angle), panel)]
    raise ValueError(f"未知物体形状: {obj.shape}")


def object_polygons(obj, frame=None):
    """
    物体的凸多边形（世界系，或给定 frame 时表示在 frame 坐标系下）

    frame 用于相机渲染：先求物体相对 frame 的位姿，再变换顶点，
    只依赖相对几何。
    """
    pose = obj.pose if frame is None else relative(frame, obj.pose)
    return [transform_points(pose, poly) for poly in local_polygons(obj)]


def expand_script(start, segments):
    """把分段直线脚本展开为路点列表（含起点）"""
    waypoints = [start]
    current = start
    for seg in segments:
        goal = Pose.from_list(seg['to'])
        steps = int(seg['steps'])
        if steps < 1:
            raise ConfigError("脚本分段步数必须 ≥ 1", 'script.segments.steps')
        for i in range(1, steps + 1):
            waypoints.append(interpolate(current, goal, i / steps))
        current = goal
    return waypoints


def _parse_object(data):
    shape = data.get('shape')
    if shape not in SHAPES:
        raise ConfigError(f"未知物体形状: {shape}", 'objects.shape')
    return SceneObject(
        name=data['name'],
        shape=shape,
        pose=Pose.from_list(data.get('pose', [0.0, 0.0, 0.0])),
        dims=tuple(float(v) for v in data['dims']),
        movable=bool(data.get('movable', False)),
        hinge_angle=float(data.get('hinge_angle', 0.0)),
        friction_coeff=float(data.get('friction', 0.5)),
        collidable=bool(data.get('collidable', True)),
        color=tuple(float(c) for c in data.get('color', (0.8, 0.8, 0.8))),
    )


def parse_scenario(data):
    """由字典解析场景"""
    physics = PhysicsParams(**data.get('physics', {}))
    script = data['script']
    start = Pose.from_list(script['start'])
    waypoints = expand_script(start, script.get('segments', []))
    return Scenario(
        id=data['id'],
        description=data.get('description', ''),
        physics=physics,
        objects=tuple(_parse_object(o) for o in data.get('objects', [])),
        script=tuple(waypoints),
        gripper=int(data.get('gripper', 0)),
        success=dict(data['success']),
        floor_color=tuple(data.get('floor_color', (0.35, 0.35, 0.35))),
    )


_CACHE = {}


def list_scenarios(scenario_dir=None):
    """列出已注册的场景ID"""
    scenario_dir = scenario_dir or DEFAULT_SCENARIO_DIR
    if not os.path.isdir(scenario_dir):
        return []
    return sorted(name[:-5] for name in os.listdir(scenario_dir) if name.endswith('.json'))


def load_scenario(scenario_id, scenario_dir=None):
    """按ID加载场景，结果缓存"""
    scenario_dir = scenario_dir or DEFAULT_SCENARIO_DIR
    key = (os.path.abspath(scenario_dir), scenario_id)
    if key in _CACHE:
        return _CACHE[key]
    path = os.path.join(scenario_dir, f"{scenario_id}.json")
    if not os.path.exists(path):
        raise UnknownScenarioError(
            f"未知场景 '{scenario_id}'，可用场景: {', '.join(list_scenarios(scenario_dir))}"
        )
    with open(path, 'r', encoding='utf-8') as f:
        scenario = parse_scenario(json.load(f))
    _CACHE[key] = scenario
    return scenario


# ---------------------------------------------------------------------------
# 任务成功判定
# ---------------------------------------------------------------------------

def _find(world, name):
    for obj in world.objects:
        if obj.name == name:
            return obj
    raise KeyError(name)


def _ee_at_object(world, spec):
    goal = compose(_find(world, spec['object']).pose, Pose.from_list(spec['offset']))
    rel = relative(goal, world.ee_pose)
    return rel.translation_norm() <= spec['trans_tol'] and abs(rel.theta) <= spec['rot_tol']


def _ee_in_slot(world, spec):
    rel = relative(_find(world, spec['object']).pose, world.ee_pose)
    return abs(rel.x) <= spec['max_lateral'] and rel.y <= spec['max_y']


def _object_at(world, spec):
    obj = _find(world, spec['object']).pose
    target = _find(world, spec['target']).pose
    return math.hypot(obj.x - target.x, obj.y - target.y) <= spec['tol']


def _hinge_open(world, spec):
    return _find(world, spec['object']).hinge_angle >= spec['min_angle']


SUCCESS_PREDICATES = {
    'ee_at_object': _ee_at_object,
    'ee_in_slot': _ee_in_slot,
    'object_at': _object_at,
    'hinge_open': _hinge_open,
}


def task_success(world, scenario=None):
    """场景任务是否完成"""
    scenario = scenario or load_scenario(world.scenario_id)
    spec = scenario.success
    predicate = SUCCESS_PREDICATES.get(spec['kind'])
    if predicate is None:
        raise ConfigError(f"未知成功判定: {spec['kind']}", 'success.kind')
    return bool(predicate(world, spec))


def randomize_objects(objects, offset):
    """把整体偏移施加到所有物体（绕场景原点）"""
    if offset == Pose.identity():
        return tuple(objects)
    return tuple(replace(obj, pose=compose(offset, obj.pose)) for obj in objects)
