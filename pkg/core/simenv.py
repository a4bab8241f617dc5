#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
平面柔顺操作仿真模块

末端为圆盘，物体为凸多边形的并集。每个控制拍（10 Hz）内按 100 Hz 子步积分：
1. 无质量弹簧-阻尼跟踪：隐式欧拉 p <- p + β (target - p)，β = hκ / (1 + hκ)，κ = 刚度/阻尼
2. 穿透投影：固定物体把末端沿接触法向推出；可移动方块被推开；铰链盖板绕铰链转动
3. 库仑摩擦：切向力不超过 μ·法向力时切向位移被抵消（卡住），否则按比例滑动

World 中的位姿都表示在场景局部坐标系，origin 记录场景整体平移；
物理和渲染只使用相对几何，因此整体平移不改变任何计算结果。
"""

import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from .geometry import Pose, compose, angle_diff, wrap_angle, interpolate, translation_distance
from .scenarios import (
    PhysicsParams, SceneObject, RandomizationSpec, load_scenario,
    local_polygons, randomize_objects, task_success,
)


@dataclass(frozen=True)
class ForceReading:
    """末端坐标系下的接触力 (fx, fy) 与力矩"""

    fx: float = 0.0
    fy: float = 0.0
    torque: float = 0.0

    def magnitude(self):
        return math.hypot(self.fx, self.fy)

    def is_zero(self):
        return self.fx == 0.0 and self.fy == 0.0 and self.torque == 0.0

    def to_list(self):
        return [self.fx, self.fy, self.torque]

    @classmethod
    def from_list(cls, values):
        if len(values) != 3:
            raise ValueError(f"力读数需要3个分量，实际为 {len(values)}")
        return cls(float(values[0]), float(values[1]), float(values[2]))


ZERO_FORCE = ForceReading()


@dataclass(frozen=True)
class World:
    """仿真世界状态（值类型，step 返回新实例）"""

    scenario_id: str
    ee_pose: Pose
    ee_target: Pose
    gripper: int
    objects: Tuple[SceneObject, ...]
    physics: PhysicsParams
    seed: int = 0
    time: float = 0.0
    tick: int = 0
    force: ForceReading = ZERO_FORCE
    origin: Tuple[float, float] = (0.0, 0.0)
    floor_color: Tuple[float, float, float] = (0.35, 0.35, 0.35)

    def object_named(self, name):
        for obj in self.objects:
            if obj.name == name:
                return obj
        raise KeyError(name)

    def global_pose(self, pose):
        """局部位姿 -> 全局位姿"""
        return Pose(pose.x + self.origin[0], pose.y + self.origin[1], pose.theta)


def reset(scenario_id, seed=0, randomization=None, scenario_dir=None):
    """
    按 (场景, 种子, 随机化) 构造确定性的初始世界

    随机化作为整体偏移施加到所有物体上，末端停在脚本起点。
    """
    scenario = load_scenario(scenario_id, scenario_dir)
    randomization = randomization or RandomizationSpec.none()
    rng = np.random.default_rng(seed)
    offset = randomization.sample(rng)
    start = scenario.ee_start
    return World(
        scenario_id=scenario.id,
        ee_pose=start,
        ee_target=start,
        gripper=scenario.gripper,
        objects=randomize_objects(scenario.objects, offset),
        physics=scenario.physics,
        seed=int(seed),
        floor_color=tuple(scenario.floor_color),
    )


def read_force(world):
    """当前接触力；自由空间中为零"""
    return world.force


def is_success(world):
    return task_success(world)


def translate_scene(world, dx, dy):
    """整体平移场景（末端和所有物体一起）"""
    return replace(world, origin=(world.origin[0] + dx, world.origin[1] + dy))


def nudge_object(world, index, dx, dy):
    """外部扰动：直接平移一个物体"""
    objects = list(world.objects)
    obj = objects[index]
    objects[index] = replace(obj, pose=Pose(obj.pose.x + dx, obj.pose.y + dy, obj.pose.theta))
    return replace(world, objects=tuple(objects))


def teleport_ee(world, pose):
    """把末端直接放到给定位姿（只用于重放测试和基线的初始化）"""
    return replace(world, ee_pose=pose, ee_target=pose, force=ZERO_FORCE)


def _world_polygon(obj):
    c, s = math.cos(obj.pose.theta), math.sin(obj.pose.theta)
    ox, oy = obj.pose.x, obj.pose.y
    polys = []
    for poly in local_polygons(obj):
        polys.append([(ox + c * px - s * py, oy + s * px + c * py) for px, py in poly])
    return polys


def disk_polygon_contact(cx, cy, radius, poly):
    """
    圆盘与逆时针凸多边形的接触

    Returns:
        None 或 (穿透深度, 法向 nx, 法向 ny, 接触点 px, 接触点 py)，法向从多边形指向圆心
    """
    inside = True
    best_sd = -math.inf
    best_n = (0.0, 0.0)
    closest_d2 = math.inf
    closest = (cx, cy)
    count = len(poly)
    for i in range(count):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % count]
        ex, ey = x1 - x0, y1 - y0
        length2 = ex * ex + ey * ey
        length = math.sqrt(length2)
        nx, ny = ey / length, -ex / length
        sd = (cx - x0) * nx + (cy - y0) * ny
        if sd > 0.0:
            inside = False
        if sd > best_sd:
            best_sd, best_n = sd, (nx, ny)
        t = ((cx - x0) * ex + (cy - y0) * ey) / length2
        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
        px, py = x0 + t * ex, y0 + t * ey
        d2 = (cx - px) ** 2 + (cy - py) ** 2
        if d2 < closest_d2:
            closest_d2, closest = d2, (px, py)

    if inside:
        nx, ny = best_n
        return radius - best_sd, nx, ny, cx - nx * best_sd, cy - ny * best_sd

    dist = math.sqrt(closest_d2)
    if dist >= radius:
        return None
    if dist < 1e-12:
        nx, ny = best_n
    else:
        nx, ny = (cx - closest[0]) / dist, (cy - closest[1]) / dist
    return radius - dist, nx, ny, closest[0], closest[1]


def _substep(x, y, theta, target, objects, physics, beta):
    """一个 100 Hz 子步；返回新状态与世界系接触力"""
    ox, oy = x, y
    x += beta * (target.x - x)
    y += beta * (target.y - y)
    theta = wrap_angle(theta + beta * angle_diff(target.theta, theta))

    radius = physics.ee_radius
    rigid = {}
    pushed = {}

    for _ in range(3):
        hit = False
        for idx, obj in enumerate(objects):
            if not obj.collidable:
                continue
            for pidx, poly in enumerate(_world_polygon(obj)):
                contact = disk_polygon_contact(x, y, radius, poly)
                if contact is None or contact[0] <= 1e-12:
                    continue
                depth, nx, ny, px, py = contact
                hit = True
                if obj.movable and obj.shape == 'box':
                    p = obj.pose
                    objects[idx] = replace(obj, pose=Pose(p.x - nx * depth, p.y - ny * depth, p.theta))
                    pushed[idx] = (physics.block_drag * nx, physics.block_drag * ny)
                    break
                if obj.movable and obj.shape == 'lid':
                    lx, ly = px - obj.pose.x, py - obj.pose.y
                    lever = max(math.hypot(lx, ly), 1e-3)
                    direction = 1.0 if (ly * nx - lx * ny) > 0.0 else -1.0
                    angle = obj.hinge_angle + direction * depth / lever
                    angle = min(max(angle, 0.0), obj.dims[2])
                    if abs(angle - obj.hinge_angle) > 1e-15:
                        objects[idx] = replace(obj, hinge_angle=angle)
                        drag = physics.hinge_torque / lever
                        pushed[idx] = (drag * nx, drag * ny)
                        break
                x += nx * depth
                y += ny * depth
                rigid[(idx, pidx)] = (nx, ny, obj.friction_coeff)
        if not hit:
            break

    fx = fy = torque = 0.0
    for nx, ny, mu in rigid.values():
        sx = physics.stiffness * (target.x - x)
        sy = physics.stiffness * (target.y - y)
        fn = -(sx * nx + sy * ny)
        if fn <= 0.0:
            continue
        tx, ty = sx + fn * nx, sy + fn * ny
        ft = math.hypot(tx, ty)
        dx, dy = x - ox, y - oy
        dn = dx * nx + dy * ny
        dtx, dty = dx - dn * nx, dy - dn * ny
        if ft <= mu * fn:
            x -= dtx
            y -= dty
            frx, fry = -tx, -ty
        else:
            scale = mu * fn / ft
            x -= dtx * scale
            y -= dty * scale
            frx, fry = -tx * scale, -ty * scale
        wx, wy = fn * nx + frx, fn * ny + fry
        fx += wx
        fy += wy
        # 接触点相对圆心 (-n·r)
        torque += (-nx * radius) * wy - (-ny * radius) * wx

    for wx, wy in pushed.values():
        fx += wx
        fy += wy

    return x, y, theta, (fx, fy, torque)


def _to_ee_frame(theta, fx, fy, torque, max_force):
    c, s = math.cos(theta), math.sin(theta)
    ex = c * fx + s * fy
    ey = -s * fx + c * fy
    mag = math.hypot(ex, ey)
    if mag > max_force:
        scale = max_force / mag
        ex, ey = ex * scale, ey * scale
    return ForceReading(ex, ey, torque)


def step(world, target, gripper_cmd=None, dt=None):
    """
    推进一个控制拍

    Args:
        world: 当前世界
        target: 阻抗控制目标位姿（场景局部坐标）
        gripper_cmd: 夹爪指令 0/1，None 表示保持
        dt: 拍长（秒），默认 1 / tick_rate

    Returns:
        (新世界, 末端坐标系下的接触力)
    """
    physics = world.physics
    dt = physics.dt if dt is None else dt
    if not dt > 0:
        raise ValueError(f"dt 必须为正: {dt}")

    substeps = max(1, int(round(dt * physics.substep_rate)))
    h = dt / substeps
    beta = h * physics.rate / (1.0 + h * physics.rate)

    x, y, theta = world.ee_pose.x, world.ee_pose.y, world.ee_pose.theta
    objects = list(world.objects)
    wrench = (0.0, 0.0, 0.0)
    for _ in range(substeps):
        x, y, theta, wrench = _substep(x, y, theta, target, objects, physics, beta)

    reading = _to_ee_frame(theta, wrench[0], wrench[1], wrench[2], physics.max_force)
    new_world = replace(
        world,
        ee_pose=Pose(x, y, theta),
        ee_target=target,
        gripper=world.gripper if gripper_cmd is None else int(gripper_cmd),
        objects=tuple(objects),
        time=world.time + dt,
        tick=world.tick + 1,
        force=reading,
    )
    return new_world, reading


def apply_delta(world, delta, gripper_cmd=None, anchor='target'):
    """
    执行一个相对位姿动作

    anchor='target'：目标在上一个指令目标上累加（开环重放，不累积跟踪滞后）
    anchor='pose'  ：目标相对当前实际位姿（闭环策略执行）
    """
    base = world.ee_target if anchor == 'target' else world.ee_pose
    return step(world, compose(base, delta), gripper_cmd)


def settle(world, ticks, gripper_cmd=None):
    """保持当前指令目标若干拍，返回 (世界, 期间最大力)"""
    peak = 0.0
    for _ in range(ticks):
        world, reading = step(world, world.ee_target, gripper_cmd)
        peak = max(peak, reading.magnitude())
    return world, peak


def step_count(start, goal, step_trans, step_rot):
    """按每拍最大步长计算直线段所需拍数（至少 1）"""
    n_trans = math.ceil(translation_distance(start, goal) / step_trans) if step_trans > 0 else 0
    n_rot = math.ceil(abs(angle_diff(goal.theta, start.theta)) / step_rot) if step_rot > 0 else 0
    return max(1, n_trans, n_rot)


def straight_targets(start, goal, step_trans, step_rot):
    """直线段上每拍的目标位姿，最后一个精确等于 goal"""
    n = step_count(start, goal, step_trans, step_rot)
    return [interpolate(start, goal, i / n) for i in range(1, n + 1)]


def drive_to(world, goal, step_trans, step_rot, settle_ticks=0, gripper_cmd=None):
    """
    沿直线把末端驱动到 goal（不记录），再保持 settle_ticks 拍

    Returns:
        (世界, 期间最大接触力)
    """
    peak = 0.0
    for target in straight_targets(world.ee_pose, goal, step_trans, step_rot):
        world, reading = step(world, target, gripper_cmd)
        peak = max(peak, reading.magnitude())
    world, settle_peak = settle(world, settle_ticks, gripper_cmd)
    return world, max(peak, settle_peak)
