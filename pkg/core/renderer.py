#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
腕部相机渲染模块

相机固定在末端坐标系，俯视地面。物体多边形先变换到末端坐标系，
再对像素采样点做半平面测试（边函数叉积符号）着色，
supersample x supersample 个子采样平均后量化为 uint8。
"""

from dataclasses import dataclass

import numpy as np

from .geometry import relative, transform_points
from .scenarios import local_polygons


@dataclass(frozen=True)
class CameraConfig:
    """相机参数：分辨率（像素）、视场宽度（米）、子采样数、噪声标准差"""

    resolution: int = 64
    fov: float = 0.24
    supersample: int = 2
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.resolution < 1 or self.supersample < 1 or not self.fov > 0:
            raise ValueError(f"相机参数无效: {self}")

    @property
    def meters_per_pixel(self):
        return self.fov / self.resolution


_GRID_CACHE = {}


def _sample_grid(camera):
    """末端坐标系下的子采样点 (H*s, W*s, 2)；第 0 行对应相机前方 +y"""
    key = (camera.resolution, camera.fov, camera.supersample)
    if key not in _GRID_CACHE:
        n = camera.resolution * camera.supersample
        step = camera.fov / n
        coords = (np.arange(n) + 0.5) * step - camera.fov / 2
        xs = coords
        ys = coords[::-1]
        gx, gy = np.meshgrid(xs, ys)
        _GRID_CACHE[key] = (gx, gy)
    return _GRID_CACHE[key]


def _inside_convex(gx, gy, poly):
    """采样点是否在逆时针凸多边形内（含边界）"""
    mask = np.ones(gx.shape, dtype=bool)
    count = len(poly)
    for i in range(count):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % count]
        cross = (x1 - x0) * (gy - y0) - (y1 - y0) * (gx - x0)
        mask &= cross >= 0.0
    return mask


def render(world, camera=None, noise_seed=None):
    """
    渲染腕部相机图像

    Args:
        world: 仿真世界
        camera: 相机参数，默认 CameraConfig()
        noise_seed: 给定时叠加高斯噪声（标准差 camera.noise_sigma，未设置时为 0.01）

    Returns:
        (H, W, 3) uint8 图像。颜色强度 c ∈ [0, 1]（物体和地面的 color 字段，子采样平均、加噪声后
        截断到 [0, 1]）编码为字节 round(255 * c)：0 对应强度 0，255 对应强度 1。
        读回强度用 byte / 255（策略网络的 to_unit_images 即如此）。
    """
    camera = camera or CameraConfig()
    gx, gy = _sample_grid(camera)
    canvas = np.empty(gx.shape + (3,), dtype=np.float64)
    canvas[...] = np.asarray(world.floor_color, dtype=np.float64)

    # 先画地面色块，再画实体
    ordered = sorted(world.objects, key=lambda o: 1 if o.collidable else 0)
    for obj in ordered:
        rel = relative(world.ee_pose, obj.pose)
        color = np.asarray(obj.color, dtype=np.float64)
        for poly in local_polygons(obj):
            verts = transform_points(rel, poly)
            mask = _inside_convex(gx, gy, verts)
            if mask.any():
                canvas[mask] = color

    s = camera.supersample
    n = camera.resolution
    image = canvas.reshape(n, s, n, s, 3).mean(axis=(1, 3))

    if noise_seed is not None:
        sigma = camera.noise_sigma if camera.noise_sigma > 0 else 0.01
        rng = np.random.default_rng(noise_seed)
        image = image + rng.normal(0.0, sigma, size=image.shape)

    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def pixel_distance(camera, meters):
    """米 -> 像素"""
    return meters / camera.meters_per_pixel
