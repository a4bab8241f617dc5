#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据融合模块

每条增强轨迹 τ_k 后接示教片段 n = k..R，得到只含 (观测, 动作) 的训练序列；
示教本身截断到 R 作为第一条序列。融合数据不含路点（本体感知），
路点另存到旁路索引文件，仅用于校验可重放性。
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import IntegrityError, RecordFormatError
from .geometry import Pose, approx_eq, relative, clip_delta, translation_distance
from .records import (
    FORMAT_VERSION, read_jsonl, write_jsonl, write_json, read_json,
    check_header, require,
)
from .demo import Action, encode_step, decode_step, replay_actions
from .simenv import teleport_ee

SRC_DEMO = 'demo'


@dataclass
class FusedSequence:
    """一条融合序列；waypoints 只存在于内存和旁路索引中"""

    observations: list
    actions: List[Action]
    src: str
    k: Optional[int] = None
    waypoints: List[Pose] = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    @property
    def start_pose(self):
        return self.waypoints[0] if self.waypoints else None


@dataclass
class FusedDataset:
    sequences: List[FusedSequence]
    R: int
    N: int
    zeta_remaining: List[Action]
    scenario_id: str = ''
    seed: int = 0
    demo_hash: Optional[str] = None
    manifest_hash: Optional[str] = None

    def __len__(self):
        return len(self.sequences)

    @property
    def demo_sequence(self):
        return self.sequences[0]

    @property
    def augmentation_sequences(self):
        return self.sequences[1:]

    @property
    def collected_waypoints(self):
        return len({s.k for s in self.sequences if s.k is not None})

    @property
    def image_shape(self):
        return self.sequences[0].observations[0].image.shape


def _aug_src(k, i):
    return f"aug:k={k}#{i}"


def _demo_segment(demo, k, R):
    """示教片段 n = k..R；末尾动作改为保持（a_R 是重放段的第一个动作）"""
    observations = [demo.observation(n) for n in range(k, R + 1)]
    actions = [demo.action(n) for n in range(k, R)]
    actions.append(Action.hold(demo.action(R).gripper))
    waypoints = [demo.waypoint(n) for n in range(k, R + 1)]
    return observations, actions, waypoints


def truncated_demo(demo, R):
    observations, actions, waypoints = _demo_segment(demo, 1, R)
    return FusedSequence(observations, actions, SRC_DEMO, None, waypoints)


def check_seam(traj, demo, tol=None, theta=None):
    """
    融合接缝检查（tol 或 theta 为 None 时跳过对应检查）

    Raises:
        IntegrityError: 终点位姿不在 w_k 容差内，或终点相似度低于 θ
    """
    target = demo.waypoint(traj.k)
    if tol is not None and not approx_eq(traj.final_pose, target, tol):
        raise IntegrityError(
            f"轨迹 k={traj.k} 的终点与示教路点相距 {translation_distance(traj.final_pose, target):.4f} m"
        )
    if theta is not None and traj.similarity < theta:
        raise IntegrityError(f"轨迹 k={traj.k} 的终点图像相似度 {traj.similarity:.4f} 低于 θ={theta}")


def fuse(result, demo, demo_hash=None, manifest_hash=None, check_seams=True):
    """
    把增强轨迹与示教片段拼接成训练集

    Args:
        result: 采集结果
        demo: 示教
        check_seams: 按采集时启用的检查项校验每条轨迹的接缝

    Returns:
        FusedDataset，第一条为截断到 R 的示教

    Raises:
        IntegrityError: 存在 k > R 的轨迹或接缝校验失败
    """
    R = result.R
    config = result.config
    sequences = [truncated_demo(demo, R)]
    counters = {}
    for traj in result.dataset:
        if traj.k > R or traj.k < 1:
            raise IntegrityError(f"轨迹目标路点 k={traj.k} 超出 [1, R={R}]")
        if check_seams:
            check_seam(traj, demo,
                       config.pose_tol if config.check_reachability else None,
                       config.theta if config.check_disturbance else None)
        i = counters.get(traj.k, 0)
        counters[traj.k] = i + 1

        observations, actions, waypoints = _demo_segment(demo, traj.k, R)
        sequences.append(FusedSequence(
            [s.obs for s in traj.steps] + observations,
            [s.action for s in traj.steps] + actions,
            _aug_src(traj.k, i),
            traj.k,
            [s.waypoint for s in traj.steps] + waypoints,
        ))

    return FusedDataset(sequences, R, result.N, list(result.zeta_remaining), demo.scenario_id,
                        demo.seed, demo_hash, manifest_hash)


def relabel_nearest_waypoint(result, demo, max_step_trans=0.01, max_step_rot=math.radians(5.0)):
    """
    不做可达性检查时的标注方式

    增强轨迹每个观测的动作改为朝最近示教路点（按平移距离）的直线步（按最大步长截断），
    之后接上从该最近路点开始到 R 的示教片段。
    """
    R = result.R
    reachable = [demo.waypoint(n) for n in range(1, R + 1)]
    sequences = [truncated_demo(demo, R)]
    counters = {}
    for traj in result.dataset:
        if traj.k > R:
            raise IntegrityError(f"轨迹目标路点 k={traj.k} 超出 R={R}")
        observations, actions, waypoints = [], [], []
        for s in traj.steps:
            distances = [translation_distance(s.waypoint, w) for w in reachable]
            nearest = reachable[int(np.argmin(distances))]
            delta = clip_delta(relative(s.waypoint, nearest), max_step_trans, max_step_rot)
            observations.append(s.obs)
            actions.append(Action(delta, s.action.gripper))
            waypoints.append(s.waypoint)
        distances = [translation_distance(traj.final_pose, w) for w in reachable]
        joined = int(np.argmin(distances)) + 1
        seg_obs, seg_actions, seg_waypoints = _demo_segment(demo, joined, R)

        i = counters.get(traj.k, 0)
        counters[traj.k] = i + 1
        sequences.append(FusedSequence(observations + seg_obs, actions + seg_actions,
                                       _aug_src(traj.k, i), traj.k, waypoints + seg_waypoints))

    return FusedDataset(sequences, R, result.N, list(result.zeta_remaining), demo.scenario_id, demo.seed)


def subsample(fused, fraction, seed=0):
    """
    保留示教和按种子随机抽取的一部分增强序列（保持原有顺序）

    Args:
        fraction: (0, 1]，1.0 时原样返回
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"数据比例必须在 (0, 1] 内: {fraction}")
    if fraction == 1.0:
        return fused
    augment = fused.augmentation_sequences
    keep = int(round(fraction * len(augment)))
    chosen = sorted(np.random.default_rng(seed).permutation(len(augment))[:keep].tolist())
    return FusedDataset([fused.demo_sequence] + [augment[i] for i in chosen], fused.R, fused.N,
                        fused.zeta_remaining, fused.scenario_id, fused.seed, fused.demo_hash,
                        fused.manifest_hash)


def replay_sequence(world, sequence, settle_ticks=4):
    """从序列记录的起点位姿开环重放其动作，返回 (世界, 最大力)"""
    if sequence.start_pose is None:
        raise IntegrityError(f"序列 {sequence.src} 没有路点索引，无法重放")
    world = teleport_ee(world, sequence.start_pose)
    return replay_actions(world, sequence.actions, settle_ticks)


# ---------------------------------------------------------------------------
# 文件读写
# ---------------------------------------------------------------------------

def save_fused(fused, path, sidecar_path=None):
    """
    融合数据 JSON-lines：头记录，然后每条序列一条 seq 记录加 L 条步记录（不含路点）

    sidecar_path 给定时把每条序列的路点写入旁路索引。
    """
    records = [{
        'type': 'header',
        'kind': 'fused',
        'version': FORMAT_VERSION,
        'scenario': fused.scenario_id,
        'seed': fused.seed,
        'image': list(fused.image_shape),
        'R': fused.R,
        'N': fused.N,
        'n_sequences': len(fused.sequences),
        'collected_waypoints': fused.collected_waypoints,
        'zeta_remaining': [a.to_record() for a in fused.zeta_remaining],
        'demo_hash': fused.demo_hash,
        'manifest_hash': fused.manifest_hash,
    }]
    for seq in fused.sequences:
        records.append({'type': 'seq', 'src': seq.src, 'k': seq.k, 'L': len(seq)})
        for obs, action in zip(seq.observations, seq.actions):
            records.append(encode_step(obs, action))
    write_jsonl(path, records)

    if sidecar_path:
        write_json(sidecar_path, {
            'kind': 'fused-waypoints',
            'version': FORMAT_VERSION,
            'sequences': [{'src': s.src, 'waypoints': [w.to_list() for w in s.waypoints]}
                          for s in fused.sequences],
        })
    return path


def load_fused(path, sidecar_path=None):
    """
    加载融合数据

    Raises:
        RecordFormatError: 格式错误、包含路点字段或文件被截断
    """
    records = read_jsonl(path)
    header = records[0]
    check_header(header, 'fused', path)
    shape = tuple(require(header, 'image', 0, path))

    sequences = []
    index = 1
    while index < len(records):
        head = records[index]
        if head.get('type') != 'seq':
            raise RecordFormatError("期望序列头记录", index, 'type', path)
        length = int(require(head, 'L', index, path))
        if index + length >= len(records):
            raise RecordFormatError(f"序列声明 {length} 步但文件提前结束", len(records), None, path)
        observations, actions = [], []
        for j in range(index + 1, index + 1 + length):
            _, obs, action = decode_step(records[j], j, shape, path, with_waypoint=False)
            observations.append(obs)
            actions.append(action)
        sequences.append(FusedSequence(observations, actions, require(head, 'src', index, path),
                                       head.get('k')))
        index += 1 + length

    expected = int(require(header, 'n_sequences', 0, path))
    if len(sequences) != expected:
        raise RecordFormatError(f"头记录声明 {expected} 条序列，实际 {len(sequences)} 条",
                                len(records), None, path)
    if not sequences or sequences[0].src != SRC_DEMO:
        raise RecordFormatError("第一条序列必须是示教", 1, 'src', path)

    if sidecar_path:
        sidecar = read_json(sidecar_path)
        entries = sidecar.get('sequences', [])
        if len(entries) != len(sequences):
            raise RecordFormatError("旁路索引与融合数据的序列数不一致", None, 'sequences', sidecar_path)
        for seq, entry in zip(sequences, entries):
            seq.waypoints = [Pose.from_list(w) for w in entry['waypoints']]

    zeta = [Action.from_record(a, 0, path) for a in header.get('zeta_remaining', [])]
    return FusedDataset(sequences, int(require(header, 'R', 0, path)), int(require(header, 'N', 0, path)),
                        zeta, header.get('scenario', ''), int(header.get('seed', 0)),
                        header.get('demo_hash'), header.get('manifest_hash'))
