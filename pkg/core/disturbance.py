#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
环境扰动检测模块

把图像切成 P x P 个图块，每个图块提取描述子：
    [通道均值 (3) | 水平梯度直方图 | 垂直梯度直方图]
再做 L2 归一化。两幅图的相似度为对应图块余弦相似度的平均值，
低于阈值 θ 即判定场景被扰动。

描述子提取器可替换：只要实现 FeatureExtractor.extract 即可。
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, List

import numpy as np

from .geometry import Pose, compose
from .renderer import CameraConfig, render
from .simenv import reset, nudge_object, teleport_ee
from .scenarios import load_scenario

DEFAULT_THETA = 0.94
# 中间档是噪声死区
DEFAULT_GRAD_EDGES = (-0.25, -0.1, -0.03, 0.03, 0.1, 0.25)


@dataclass(frozen=True)
class PatchFeatures:
    """图块特征网格 (P, P, F)，每个向量单位范数"""

    grid: np.ndarray

    @property
    def shape(self):
        return self.grid.shape


class FeatureExtractor:
    """特征提取器接口"""

    kind = 'abstract'

    def __init__(self, patch_size):
        self.patch_size = patch_size

    @property
    def dim(self):
        raise NotImplementedError

    def extract(self, image):
        raise NotImplementedError


class PatchDescriptorExtractor(FeatureExtractor):
    """默认的手工图块描述子"""

    kind = 'patch-descriptor'

    def __init__(self, patch_size=8, grad_edges=DEFAULT_GRAD_EDGES):
        super().__init__(patch_size)
        self.grad_edges = np.asarray(grad_edges, dtype=np.float64)
        self.bins = len(grad_edges) + 1

    @property
    def dim(self):
        return 3 + 2 * self.bins

    def _histogram(self, grad, rows, cols):
        p = self.patch_size
        index = np.digitize(grad, self.grad_edges)
        onehot = np.eye(self.bins)[index]
        return onehot.reshape(rows, p, cols, p, self.bins).mean(axis=(1, 3))

    def extract(self, image):
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"图像必须为 (H, W, 3)，实际为 {image.shape}")
        height, width = image.shape[:2]
        p = self.patch_size
        if height % p or width % p:
            raise ValueError(f"图像尺寸 {height}x{width} 不能被图块大小 {p} 整除")

        pixels = image.astype(np.float64) / 255.0 if image.dtype == np.uint8 else image.astype(np.float64)
        gray = pixels.mean(axis=2)
        gx = np.zeros_like(gray)
        gy = np.zeros_like(gray)
        gx[:, :-1] = gray[:, 1:] - gray[:, :-1]
        gy[:-1, :] = gray[1:, :] - gray[:-1, :]

        rows, cols = height // p, width // p
        means = pixels.reshape(rows, p, cols, p, 3).mean(axis=(1, 3))
        desc = np.concatenate([means, self._histogram(gx, rows, cols),
                               self._histogram(gy, rows, cols)], axis=-1)
        # 直方图各自和为 1，范数不会为 0
        desc /= np.linalg.norm(desc, axis=-1, keepdims=True)
        return PatchFeatures(desc)


def extract_features(image, extractor=None):
    extractor = extractor or PatchDescriptorExtractor()
    return extractor.extract(image)


def avg_cosine_similarity(a, b):
    """对应图块余弦相似度的平均值"""
    if a.grid.shape != b.grid.shape:
        raise ValueError(f"特征形状不一致: {a.grid.shape} vs {b.grid.shape}")
    return float(np.mean(np.sum(a.grid * b.grid, axis=-1)))


def image_similarity(img_a, img_b, extractor=None):
    extractor = extractor or PatchDescriptorExtractor()
    if img_a.shape != img_b.shape:
        raise ValueError(f"图像尺寸不一致: {img_a.shape} vs {img_b.shape}")
    return avg_cosine_similarity(extractor.extract(img_a), extractor.extract(img_b))


def check_env_disturbance(demo_obs, live_img, theta=DEFAULT_THETA, extractor=None):
    """相似度低于 θ 时判定环境被扰动"""
    return image_similarity(demo_obs.image, live_img, extractor) < theta


# ---------------------------------------------------------------------------
# 阈值标定
# ---------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    theta: float
    margin: float
    separated: bool
    rows: List[Dict]
    min_undisturbed: float
    max_disturbed: float

    def mean_by_displacement(self):
        """每个场景、每个位移下的平均相似度"""
        table = {}
        for row in self.rows:
            table.setdefault((row['scenario'], row['displacement']), []).append(row['similarity'])
        return {key: float(np.mean(values)) for key, values in sorted(table.items())}


def _probe_object(world):
    """标定时被移动的物体：优先可移动物体，否则第一个物体"""
    for i, obj in enumerate(world.objects):
        if obj.movable:
            return i
    for i, obj in enumerate(world.objects):
        if obj.collidable:
            return i
    return 0


def calibrate_theta(scenarios, camera=None, extractor=None, displacements=(0, 2, 4, 8, 16),
                    pairs=100, view_range=0.01, min_disturbed_px=8, seed=0,
                    scenario_dir=None, verbose=False, progress_callback=None):
    """
    渲染未扰动/扰动图像对，选取间隔最大处的阈值

    progress_callback(已完成对数, 总对数, 场景) 在每对图像处理完后调用

    未扰动对：同一场景的干净渲染与加噪重渲染。
    扰动对：可移动物体（没有则为主要物体）按像素位移网格平移后加噪渲染。
    θ 取 [最大扰动相似度, 最小未扰动相似度] 区间中点（仅统计位移 ≥ min_disturbed_px 的扰动）。

    Returns:
        CalibrationResult
    """
    camera = camera or CameraConfig()
    extractor = extractor or PatchDescriptorExtractor()
    if camera.noise_sigma <= 0:
        camera = replace(camera, noise_sigma=0.01)
    rng = np.random.default_rng(seed)
    rows = []
    undisturbed, disturbed = [], []
    total, done = len(scenarios) * pairs, 0

    for scenario_id in scenarios:
        scenario = load_scenario(scenario_id, scenario_dir)
        base = reset(scenario_id, seed, None, scenario_dir)
        probe = _probe_object(base)
        if verbose:
            print(f"🎯 标定场景 {scenario_id}（探测物体: {base.objects[probe].name}）")
        for i in range(pairs):
            view = scenario.script[i % len(scenario.script)]
            jitter = Pose(*rng.uniform(-view_range, view_range, size=2), 0.0)
            world = teleport_ee(base, compose(view, jitter))
            clean = render(world, camera)
            clean_features = extractor.extract(clean)
            direction = rng.uniform(-math.pi, math.pi)
            for d in displacements:
                meters = d * camera.meters_per_pixel
                moved = nudge_object(world, probe, meters * math.cos(direction), meters * math.sin(direction))
                noisy = render(moved, camera, noise_seed=int(rng.integers(0, 2 ** 31 - 1)))
                sim = avg_cosine_similarity(clean_features, extractor.extract(noisy))
                rows.append({'scenario': scenario_id, 'displacement': d, 'similarity': sim})
                if d == 0:
                    undisturbed.append(sim)
                elif d >= min_disturbed_px:
                    disturbed.append(sim)
            done += 1
            if progress_callback is not None:
                progress_callback(done, total, scenario_id)

    min_u = float(min(undisturbed)) if undisturbed else 1.0
    max_d = float(max(disturbed)) if disturbed else -1.0
    separated = max_d < min_u
    if separated:
        theta = (min_u + max_d) / 2.0
    else:
        theta = min_u
        if verbose:
            print(f"⚠️ 扰动与未扰动相似度重叠: 最小未扰动 {min_u:.4f} ≤ 最大扰动 {max_d:.4f}")
    if verbose:
        print(f"✅ 标定完成: θ = {theta:.4f}, 间隔 = {min_u - max_d:.4f}")
    return CalibrationResult(theta, min_u - max_d, separated, rows, min_u, max_d)
