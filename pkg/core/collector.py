#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
自监督增强轨迹采集模块

从示教的第一个路点开始，按顺序在每个路点 w_k 附近：
1. 采样一个随机起始偏移，把末端驱动过去（不记录）
2. 沿直线命令末端返回 w_k，逐拍记录 (w, o, a)，动作为实际相邻位姿的相对变换
3. 可达性检查：终点位姿与 w_k 在容差内，否则回到初始路点重放示教恢复 w_k 状态后重试
4. 扰动检查：终点图像与示教图像 k 的图块相似度低于 θ 时，记 R = k 并停止全部采集
5. 采满 Z 条后执行示教动作 a_k 前进到下一个路点
"""

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .errors import ConfigError, UnrecoverableStateError, RecordFormatError
from .geometry import Pose, PoseTolerance, compose, relative, approx_eq, translation_distance
from .records import (
    FORMAT_VERSION, read_jsonl, write_jsonl, write_json, read_json,
    check_header, require, sha256_json,
)
from .demo import Action, DemoStep, observe, replay_actions, encode_step, decode_step
from .disturbance import PatchDescriptorExtractor, image_similarity
from .renderer import render
from .simenv import step, settle, drive_to, straight_targets, nudge_object

STOP_COMPLETED = 'completed'
STOP_DISTURBANCE = 'disturbance'
STOP_FORCE_LIMIT = 'force_limit'


@dataclass(frozen=True)
class CollectorConfig:
    """采集参数"""

    Z: int = 10
    trans_range: float = 0.04
    rot_range: float = math.radians(4.0)
    theta: float = 0.94
    pose_tol: PoseTolerance = PoseTolerance(0.001, math.radians(0.5))
    max_ticks_per_traj: int = 60
    step_trans: float = 0.008
    step_rot: float = math.radians(2.0)
    settle_ticks: int = 4
    max_attempts_per_waypoint: int = 50
    force_limit: Optional[float] = None
    sequential: bool = True
    check_reachability: bool = True
    check_disturbance: bool = True
    seed: int = 0
    # (路点 k, 物体序号, dx, dy)：到达 w_k 时施加一次外部扰动
    scripted_nudge: Optional[Tuple[int, int, float, float]] = None

    def __post_init__(self):
        if self.Z < 1:
            raise ConfigError(f"Z 必须 ≥ 1: {self.Z}", 'collector.Z')
        if self.trans_range < 0 or self.rot_range < 0:
            raise ConfigError("采样范围不能为负", 'collector.trans_range')
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"θ 必须在 (0, 1) 内: {self.theta}", 'collector.theta')
        if self.max_ticks_per_traj < 1 or self.max_attempts_per_waypoint < 1:
            raise ConfigError("拍数与尝试次数上限必须 ≥ 1", 'collector.max_ticks_per_traj')
        if not self.step_trans > 0 or not self.step_rot > 0:
            raise ConfigError("每拍步长必须为正", 'collector.step_trans')

    def to_dict(self):
        data = asdict(self)
        data['pose_tol'] = [self.pose_tol.trans_tol, self.pose_tol.rot_tol]
        if self.scripted_nudge is not None:
            data['scripted_nudge'] = list(self.scripted_nudge)
        return data

    def config_hash(self):
        return sha256_json(self.to_dict())


@dataclass
class AugTrajectory:
    """
    返回路点 k 的增强轨迹

    steps[m] 是第 m 个返回指令执行前的 (w, o, a)；final_pose 是稳定后的终点位姿。
    """

    k: int
    steps: List[DemoStep]
    final_pose: Pose
    similarity: float = 1.0
    reached: bool = True
    timed_out: bool = False
    peak_force: float = 0.0

    @property
    def M(self):
        return len(self.steps)

    @property
    def start_pose(self):
        return self.steps[0].waypoint


@dataclass
class CollectionResult:
    dataset: List[AugTrajectory]
    R: int
    N: int
    zeta_remaining: List[Action]
    stop_reason: str
    scenario_id: str = ''
    seed: int = 0
    config: CollectorConfig = field(default_factory=CollectorConfig)
    waypoint_stats: Dict[int, Dict] = field(default_factory=dict)
    exhausted: List[int] = field(default_factory=list)

    def count(self, k):
        return sum(1 for t in self.dataset if t.k == k)

    @property
    def collected_waypoints(self):
        """有增强数据的示教路点数"""
        return len({t.k for t in self.dataset})


def sample_start_offset(rng, config):
    """在 (dx, dy, dθ) 盒内均匀采样起始偏移；范围为 0 的分量取 0"""
    dx, dy = (rng.uniform(-config.trans_range, config.trans_range, size=2)
              if config.trans_range > 0 else (0.0, 0.0))
    dtheta = rng.uniform(-config.rot_range, config.rot_range) if config.rot_range > 0 else 0.0
    return Pose(dx, dy, dtheta)


def check_reachability(achieved, target, tol):
    return approx_eq(achieved, target, tol)


def sample_trajectory(world, demo, k, config, rng=None, offset=None, camera=None, extractor=None):
    """
    采集一条返回路点 k 的候选轨迹

    Args:
        world: 末端位于 w_k 的世界
        offset: 指定起始偏移（w_k 坐标系下）；为 None 时随机采样

    Returns:
        (世界, AugTrajectory 候选)
    """
    if offset is None:
        offset = sample_start_offset(rng, config)
    target = demo.waypoint(k)
    gripper = demo.action(k).gripper

    world, peak = drive_to(world, compose(target, offset), config.step_trans, config.step_rot,
                           config.settle_ticks, gripper)

    targets = straight_targets(world.ee_pose, target, config.step_trans, config.step_rot)
    budget = config.max_ticks_per_traj - config.settle_ticks
    timed_out = len(targets) > budget
    if timed_out:
        targets = targets[:max(1, budget)]

    poses, observations = [], []
    for tgt in targets:
        poses.append(world.ee_pose)
        observations.append(observe(world, camera))
        world, reading = step(world, tgt, gripper)
        peak = max(peak, reading.magnitude())
    world, settle_peak = settle(world, config.settle_ticks, gripper)
    peak = max(peak, settle_peak)
    final = world.ee_pose

    chain = poses + [final]
    steps = [DemoStep(chain[m], observations[m], Action(relative(chain[m], chain[m + 1]), gripper))
             for m in range(len(poses))]

    similarity = image_similarity(demo.observation(k).image, render(world, camera), extractor)
    reached = not timed_out and check_reachability(final, target, config.pose_tol)
    return world, AugTrajectory(k, steps, final, similarity, reached, timed_out, peak)


def return_to_waypoint(world, k, demo, config=None):
    """
    恢复到示教路点 k 的状态：先回到第一个路点，再重放 a_1..a_{k-1}（k ≤ 1 时只回到起点）

    Raises:
        UnrecoverableStateError: 重放后仍不在 w_k 容差内
    """
    config = config or CollectorConfig()
    home = demo.waypoint(1)
    world, _ = drive_to(world, home, config.step_trans, config.step_rot, config.settle_ticks,
                        demo.action(1).gripper)
    k = max(k, 1)
    world, _ = replay_actions(world, demo.actions[:k - 1], config.settle_ticks)
    goal = demo.waypoint(k)
    if not approx_eq(world.ee_pose, goal, config.pose_tol):
        raise UnrecoverableStateError(
            f"重放示教后无法回到路点 {k}",
            {
                'k': k,
                'achieved': world.ee_pose.to_list(),
                'target': goal.to_list(),
                'distance': translation_distance(world.ee_pose, goal),
                'force': world.force.to_list(),
            },
        )
    return world


def collect(world, demo, config=None, camera=None, extractor=None,
            progress_callback=None, verbose=False):
    """
    完整采集循环

    Args:
        world: 按示教场景和种子刚复位的世界（整个采集过程只复位这一次）
        demo: 示教
        config: 采集参数
        progress_callback: 可选回调 progress_callback(当前序号, 总数, k, 有效条数)

    Returns:
        CollectionResult
    """
    config = config or CollectorConfig()
    extractor = extractor or PatchDescriptorExtractor()
    rng = np.random.default_rng(config.seed)
    N = demo.N

    if not approx_eq(world.ee_pose, demo.waypoint(1), config.pose_tol):
        raise UnrecoverableStateError("采集开始时末端不在示教起点",
                                      {'achieved': world.ee_pose.to_list(),
                                       'target': demo.waypoint(1).to_list()})

    if config.sequential:
        order = list(range(1, N + 1))
    else:
        order = [int(k) + 1 for k in rng.permutation(N)]

    dataset = []
    stats = {}
    exhausted = []
    R, stop_reason = N, STOP_COMPLETED

    iterator = tqdm(order, desc=f"采集 {demo.scenario_id}", unit="路点", disable=not verbose)
    for position, k in enumerate(iterator, start=1):
        if config.sequential:
            if k > 1:
                world, _ = replay_actions(world, [demo.action(k - 1)], config.settle_ticks)
        else:
            world = return_to_waypoint(world, k, demo, config)

        if config.scripted_nudge is not None and config.scripted_nudge[0] == k:
            _, index, dx, dy = config.scripted_nudge
            world = nudge_object(world, int(index), dx, dy)

        record = {'valid': 0, 'unreachable': 0, 'timed_out': 0, 'attempts': 0, 'similarities': []}
        while record['valid'] < config.Z and record['attempts'] < config.max_attempts_per_waypoint:
            record['attempts'] += 1
            world, candidate = sample_trajectory(world, demo, k, config, rng,
                                                 camera=camera, extractor=extractor)

            if config.force_limit is not None and candidate.peak_force > config.force_limit:
                R, stop_reason = k, STOP_FORCE_LIMIT
                break

            if config.check_reachability and not candidate.reached:
                record['unreachable'] += 1
                record['timed_out'] += int(candidate.timed_out)
                world = return_to_waypoint(world, k, demo, config)
                continue

            if config.check_disturbance and candidate.similarity < config.theta:
                R, stop_reason = k, STOP_DISTURBANCE
                break

            dataset.append(candidate)
            record['valid'] += 1
            record['similarities'].append(candidate.similarity)

        stats[k] = record
        if progress_callback is not None:
            progress_callback(position, len(order), k, record['valid'])
        if stop_reason != STOP_COMPLETED:
            if verbose:
                print(f"\n⚠️ 路点 {k} 停止采集: {stop_reason}")
            break
        if record['valid'] < config.Z:
            exhausted.append(k)
            if verbose:
                print(f"\n⚠️ 路点 {k} 尝试 {record['attempts']} 次只得到 {record['valid']} 条有效轨迹")

    if stop_reason == STOP_COMPLETED:
        zeta_remaining = []
    else:
        # 乱序模式下还会有 k > R 的轨迹
        dropped = sum(1 for t in dataset if t.k >= R)
        dataset = [t for t in dataset if t.k < R]
        if dropped and verbose:
            print(f"⚠️ 丢弃 {dropped} 条目标路点 ≥ R 的轨迹")
        # R == N 时剩下的只有恒等保持 a_N
        zeta_remaining = list(demo.actions[R - 1:]) if R < N else []

    if verbose:
        print(f"✅ 采集完成: {len(dataset)} 条轨迹, R={R}/{N}, 停止原因: {stop_reason}")

    return CollectionResult(dataset, R, N, zeta_remaining, stop_reason, demo.scenario_id,
                            demo.seed, config, stats, exhausted)


# ---------------------------------------------------------------------------
# 数据集与清单文件
# ---------------------------------------------------------------------------

def build_manifest(result, demo_hash=None, dataset_hash=None):
    """采集清单：R、停止原因、配置哈希、每个路点的统计"""
    per_waypoint = {}
    for k, record in sorted(result.waypoint_stats.items()):
        sims = record['similarities']
        per_waypoint[str(k)] = {
            'valid': record['valid'],
            'unreachable': record['unreachable'],
            'timed_out': record['timed_out'],
            'attempts': record['attempts'],
            'min_similarity': min(sims) if sims else None,
        }
    return {
        'kind': 'collection-manifest',
        'version': FORMAT_VERSION,
        'scenario': result.scenario_id,
        'seed': result.seed,
        'R': result.R,
        'N': result.N,
        'stop_reason': result.stop_reason,
        'n_trajectories': len(result.dataset),
        'collected_waypoints': result.collected_waypoints,
        'zeta_remaining': [a.to_record() for a in result.zeta_remaining],
        'config': result.config.to_dict(),
        'config_hash': result.config.config_hash(),
        'exhausted_waypoints': list(result.exhausted),
        'per_waypoint': per_waypoint,
        'demo_hash': demo_hash,
        'dataset_hash': dataset_hash,
    }


def save_dataset(result, path, demo_hash=None):
    """增强数据集 JSON-lines：头记录，然后每条轨迹一条 traj 记录加 M 条步记录"""
    shape = list(result.dataset[0].steps[0].obs.image.shape) if result.dataset else None
    records = [{
        'type': 'header',
        'kind': 'dataset',
        'version': FORMAT_VERSION,
        'scenario': result.scenario_id,
        'seed': result.seed,
        'image': shape,
        'R': result.R,
        'N': result.N,
        'stop_reason': result.stop_reason,
        'n_trajectories': len(result.dataset),
        'theta': result.config.theta,
        'pose_tol': [result.config.pose_tol.trans_tol, result.config.pose_tol.rot_tol],
        'check_reachability': result.config.check_reachability,
        'check_disturbance': result.config.check_disturbance,
        'zeta_remaining': [a.to_record() for a in result.zeta_remaining],
        'demo_hash': demo_hash,
    }]
    for traj in result.dataset:
        records.append({'type': 'traj', 'k': traj.k, 'M': traj.M, 'final': traj.final_pose.to_list(),
                        'similarity': traj.similarity, 'peak_force': traj.peak_force,
                        'reached': traj.reached, 'timed_out': traj.timed_out})
        for s in traj.steps:
            records.append(encode_step(s.obs, s.action, s.waypoint))
    write_jsonl(path, records)
    return path


def load_dataset(path):
    """
    加载增强数据集

    Returns:
        CollectionResult（waypoint_stats 为空，config 中只恢复 θ、pose_tol 和两个检查开关）
    """
    records = read_jsonl(path)
    header = records[0]
    check_header(header, 'dataset', path)
    shape = header.get('image')
    tol = require(header, 'pose_tol', 0, path)
    config = CollectorConfig(theta=float(require(header, 'theta', 0, path)),
                             pose_tol=PoseTolerance(float(tol[0]), float(tol[1])),
                             check_reachability=bool(header.get('check_reachability', True)),
                             check_disturbance=bool(header.get('check_disturbance', True)))

    dataset = []
    index = 1
    while index < len(records):
        head = records[index]
        if head.get('type') != 'traj':
            raise RecordFormatError("期望轨迹头记录", index, 'type', path)
        M = int(require(head, 'M', index, path))
        if index + M >= len(records):
            raise RecordFormatError(f"轨迹声明 {M} 步但文件提前结束", len(records), None, path)
        steps = []
        for j in range(index + 1, index + 1 + M):
            waypoint, obs, action = decode_step(records[j], j, tuple(shape), path)
            steps.append(DemoStep(waypoint, obs, action))
        final = Pose.from_list(require(head, 'final', index, path))
        dataset.append(AugTrajectory(int(require(head, 'k', index, path)), steps, final,
                                     float(head.get('similarity', 1.0)),
                                     bool(head.get('reached', True)), bool(head.get('timed_out', False)),
                                     float(head.get('peak_force', 0.0))))
        index += 1 + M

    expected = int(require(header, 'n_trajectories', 0, path))
    if len(dataset) != expected:
        raise RecordFormatError(f"头记录声明 {expected} 条轨迹，实际 {len(dataset)} 条",
                                len(records), None, path)

    zeta = [Action.from_record(a, 0, path) for a in header.get('zeta_remaining', [])]
    return CollectionResult(dataset, int(header['R']), int(header['N']), zeta, header['stop_reason'],
                            header.get('scenario', ''), int(header.get('seed', 0)), config)


def save_manifest(manifest, path):
    write_json(path, manifest)
    return path


def load_manifest(path):
    manifest = read_json(path)
    if manifest.get('kind') != 'collection-manifest':
        raise RecordFormatError("不是采集清单文件", 0, 'kind', path)
    return manifest
