#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
平面刚体位姿 SE(2) 运算模块

所有模块共用的位姿代数：复合、求逆、相对位姿、近似相等判断。
角度始终保存为 (-π, π] 内的值，从不累加未归一化的角度。
"""

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle):
    """将角度归一化到 (-π, π]"""
    wrapped = math.remainder(angle, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def angle_diff(a, b):
    """最短有向角差 a - b"""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class Pose:
    """平面位姿：平移 (x, y) 单位米，旋转 theta 单位弧度"""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'x', float(self.x))
        object.__setattr__(self, 'y', float(self.y))
        object.__setattr__(self, 'theta', wrap_angle(float(self.theta)))

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_list(cls, values):
        """由 [x, y, theta] 三元组构造"""
        if len(values) != 3:
            raise ValueError(f"位姿需要3个分量，实际为 {len(values)}")
        return cls(values[0], values[1], values[2])

    def to_list(self):
        return [self.x, self.y, self.theta]

    def translation_norm(self):
        return math.hypot(self.x, self.y)

    def as_matrix(self):
        """3x3 齐次矩阵"""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x],
                         [s, c, self.y],
                         [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, matrix):
        return cls(matrix[0, 2], matrix[1, 2], math.atan2(matrix[1, 0], matrix[0, 0]))


@dataclass(frozen=True)
class PoseTolerance:
    """位姿容差：平移容差（米）和旋转容差（弧度），均须为正"""

    trans_tol: float
    rot_tol: float

    def __post_init__(self):
        if not self.trans_tol > 0 or not self.rot_tol > 0:
            raise ValueError(
                f"位姿容差必须为正: trans_tol={self.trans_tol}, rot_tol={self.rot_tol}"
            )

    def halved(self):
        return PoseTolerance(self.trans_tol / 2.0, self.rot_tol / 2.0)


def compose(a, b):
    """先 a 后 b 的刚体变换（b 表示在 a 的坐标系下）"""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose(a.x + c * b.x - s * b.y,
                a.y + s * b.x + c * b.y,
                a.theta + b.theta)


def inverse(p):
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose(-(c * p.x + s * p.y),
                -(-s * p.x + c * p.y),
                -p.theta)


def relative(frm, to):
    """
    计算 to 在 frm 坐标系下的位姿

    满足 compose(frm, relative(frm, to)) == to（数值容差内）
    """
    dx = to.x - frm.x
    dy = to.y - frm.y
    c, s = math.cos(frm.theta), math.sin(frm.theta)
    return Pose(c * dx + s * dy,
                -s * dx + c * dy,
                angle_diff(to.theta, frm.theta))


def translation_distance(a, b):
    return math.hypot(a.x - b.x, a.y - b.y)


def rotation_distance(a, b):
    return abs(angle_diff(a.theta, b.theta))


def approx_eq(a, b, tol):
    """平移欧氏距离和最短角距离都不超过容差时为真（边界包含）"""
    return (translation_distance(a, b) <= tol.trans_tol
            and rotation_distance(a, b) <= tol.rot_tol)


def interpolate(a, b, s):
    """
    沿直线段从 a 插值到 b，角度走最短弧

    s == 1 时精确返回 b
    """
    if s >= 1.0:
        return b
    if s <= 0.0:
        return a
    return Pose(a.x + s * (b.x - a.x),
                a.y + s * (b.y - a.y),
                a.theta + s * angle_diff(b.theta, a.theta))


def transform_points(pose, points):
    """将 (n, 2) 局部坐标点变换到 pose 所在坐标系"""
    points = np.asarray(points, dtype=float)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + np.array([pose.x, pose.y])


def clip_delta(delta, max_trans, max_rot):
    """按每拍最大步长裁剪相对位姿"""
    scale = 1.0
    norm = delta.translation_norm()
    if norm > max_trans > 0:
        scale = max_trans / norm
    theta = max(-max_rot, min(max_rot, delta.theta))
    return Pose(delta.x * scale, delta.y * scale, theta)


IDENTITY = Pose.identity()
