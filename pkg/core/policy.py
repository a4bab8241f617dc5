#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
策略训练与持久化模块

策略 π = {f_ψ, 剩余示教动作 a_R..a_N}：
- train: 在融合数据上做行为克隆
- save_policy / load_policy: 二进制策略文件

策略文件布局（小端）：
    MAGIC(8) | u32 头长度 | 头 JSON | u64 参数个数 | float64 参数块 | u32 后缀长度 | 后缀 JSON | sha256(32)
sha256 覆盖其之前的全部字节。
"""

import json
import math
import struct
import hashlib
from dataclasses import dataclass, field, asdict
from typing import List

import numpy as np
from tqdm import tqdm

from .errors import (
    ConfigError, TrainingError, ChecksumError, VersionError, ShapeError,
    RecordFormatError, MissingInputError,
)
from .records import FORMAT_VERSION, atomic_write_bytes
from .demo import Action
from .network import (
    NetworkConfig, InputNorm, PolicyNet, param_specs, sequence_arrays, collate,
    augment_images, clip_gradient, make_optimizer,
)

MAGIC = b'DLPOLICY'
ACTION_SCALE_FLOOR = 1e-6
LR_SCHEDULES = ('constant', 'cosine')


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 4
    epochs: int = 150
    clip_norm: float = 1.0
    seed: int = 0
    optimizer: str = 'adam'
    momentum: float = 0.9
    augment: bool = False
    # 损失趋势检查的窗口（轮）
    loss_window: int = 5
    # cosine: 学习率按余弦从 lr 降到 lr * lr_final_fraction
    lr_schedule: str = 'cosine'
    lr_final_fraction: float = 0.1

    def __post_init__(self):
        for name in ('lr', 'batch_size', 'epochs', 'clip_norm', 'loss_window', 'lr_final_fraction'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} 必须为正: {getattr(self, name)}", f'train.{name}')
        if self.optimizer not in ('adam', 'sgd-momentum'):
            raise ConfigError(f"未知优化器: {self.optimizer}", 'train.optimizer')
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"未知学习率计划: {self.lr_schedule}", 'train.lr_schedule')
        if self.lr_final_fraction > 1.0:
            raise ConfigError(f"lr_final_fraction 不能大于 1: {self.lr_final_fraction}",
                              'train.lr_final_fraction')

    def learning_rate(self, epoch):
        """第 epoch 轮（从 0 起）的学习率"""
        if self.lr_schedule == 'constant' or self.epochs == 1:
            return self.lr
        progress = epoch / (self.epochs - 1)
        floor = self.lr * self.lr_final_fraction
        return floor + (self.lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))

    def to_dict(self):
        return asdict(self)


@dataclass
class Policy:
    """训练好的策略：网络 + 剩余示教动作"""

    net: PolicyNet
    zeta_remaining: List[Action]
    R: int
    N: int
    hidden_reset_interval: int
    loss_curve: List[float] = field(default_factory=list)
    scenario_id: str = ''

    def __post_init__(self):
        if bool(self.zeta_remaining) == (self.R == self.N):
            raise ValueError(f"剩余动作为空当且仅当 R == N（R={self.R}, N={self.N}, "
                             f"剩余 {len(self.zeta_remaining)} 个动作）")
        if self.hidden_reset_interval < 1:
            raise ValueError(f"隐状态重置间隔必须 ≥ 1: {self.hidden_reset_interval}")

    def initial_state(self):
        return self.net.initial_state()

    def act(self, observation, h):
        """闭环单步：返回 (动作, 新隐状态)"""
        return self.net.step(observation, h)


def compute_action_scale(sequences):
    """每个位姿分量关于 0 的均方根，下限 1e-6"""
    deltas = np.asarray([a.delta.to_list() for s in sequences for a in s.actions], dtype=np.float64)
    scale = np.sqrt(np.mean(deltas ** 2, axis=0))
    return np.maximum(scale, ACTION_SCALE_FLOOR)


def hidden_reset_interval_for(dataset):
    """两倍的有增强数据的示教路点数；没有增强数据时按 R 计"""
    collected = dataset.collected_waypoints
    return 2 * (collected if collected > 0 else max(dataset.R, 1))


def check_loss_trend(curve, window=5):
    """返回损失在 window 轮内上升的起始轮次列表"""
    return [i for i in range(len(curve) - window + 1) if curve[i + window - 1] > curve[i]]


def train(dataset, cfg=None, net_config=None, verbose=False, progress_callback=None):
    """
    在融合数据上训练策略

    Args:
        dataset: FusedDataset
        cfg: TrainConfig
        net_config: NetworkConfig（图像尺寸以数据为准）
        progress_callback: 可选回调 progress_callback(当前轮, 总轮数, 平均损失)

    Returns:
        Policy

    Raises:
        TrainingError: 损失出现非有限值
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise TrainingError("训练集为空")
    net_config = net_config or NetworkConfig()
    if tuple(net_config.image_shape) != tuple(dataset.image_shape):
        net_config = NetworkConfig.from_dict({**net_config.to_dict(), 'image_shape': tuple(dataset.image_shape)})

    scale = compute_action_scale(dataset.sequences)
    arrays = [sequence_arrays(s.observations, s.actions, scale) for s in dataset.sequences]
    net = PolicyNet(net_config, seed=cfg.seed, action_scale=scale, input_norm=InputNorm.fit(arrays))
    optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)

    if verbose:
        print(f"🧠 开始训练: {len(arrays)} 条序列, {net.n_params} 个参数, {cfg.epochs} 轮"
              f"（输入: {net_config.modalities}，学习率计划: {cfg.lr_schedule}）")

    curve = []
    epochs = tqdm(range(cfg.epochs), desc="训练", unit="轮", disable=not verbose)
    for epoch in epochs:
        optimizer.lr = cfg.learning_rate(epoch)
        order = rng.permutation(len(arrays))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = collate([arrays[i] for i in order[start:start + cfg.batch_size]])
            if cfg.augment:
                batch['images'] = augment_images(batch['images'], rng)
            value, g = net.loss_and_grad(batch)
            if not math.isfinite(value) or not np.all(np.isfinite(g)):
                raise TrainingError(f"损失或梯度出现非有限值: {value}", epoch, b)
            g, _ = clip_gradient(g, cfg.clip_norm)
            optimizer.step(net.params, g)
            losses.append(value)
        mean = float(np.mean(losses))
        curve.append(mean)
        epochs.set_postfix(loss=f"{mean:.4f}")
        if progress_callback is not None:
            progress_callback(epoch + 1, cfg.epochs, mean)

    rising = check_loss_trend(curve, cfg.loss_window)
    if rising and verbose:
        print(f"⚠️ 损失在 {len(rising)} 个 {cfg.loss_window} 轮窗口内上升（首个起点: 第 {rising[0]} 轮）")
    if verbose:
        print(f"✅ 训练完成: 损失 {curve[0]:.4f} -> {curve[-1]:.4f}")

    return Policy(net, list(dataset.zeta_remaining), dataset.R, dataset.N,
                  hidden_reset_interval_for(dataset), curve, dataset.scenario_id)


# ---------------------------------------------------------------------------
# 策略文件
# ---------------------------------------------------------------------------

def _policy_header(policy):
    return {
        'kind': 'policy',
        'version': FORMAT_VERSION,
        'network': policy.net.config.to_dict(),
        'layers': [[name, list(shape)] for name, shape in policy.net.specs],
        'action_scale': policy.net.action_scale.tolist(),
        'input_norm': policy.net.input_norm.to_dict(),
        'R': policy.R,
        'N': policy.N,
        'hidden_reset_interval': policy.hidden_reset_interval,
        'scenario': policy.scenario_id,
        'loss_curve': policy.loss_curve,
    }


def policy_bytes(policy):
    header = json.dumps(_policy_header(policy), sort_keys=True).encode('utf-8')
    suffix = json.dumps([a.to_record() for a in policy.zeta_remaining], sort_keys=True).encode('utf-8')
    params = np.ascontiguousarray(policy.net.params, dtype='<f8')
    body = b''.join([
        MAGIC,
        struct.pack('<I', len(header)), header,
        struct.pack('<Q', params.size), params.tobytes(),
        struct.pack('<I', len(suffix)), suffix,
    ])
    return body + hashlib.sha256(body).digest()


def save_policy(policy, path):
    atomic_write_bytes(path, policy_bytes(policy))
    return path


def _check_layers(stored, expected):
    """逐层比较形状，返回第一个不一致的层名"""
    for (name, shape), (exp_name, exp_shape) in zip(stored, expected):
        if name != exp_name or tuple(shape) != tuple(exp_shape):
            return exp_name
    if len(stored) != len(expected):
        return expected[min(len(stored), len(expected) - 1)][0]
    return None


def load_policy(path, network_config=None):
    """
    加载策略文件

    Args:
        network_config: 给定时要求文件中的网络与之逐层形状一致

    Raises:
        ChecksumError: 校验和不符（文件损坏）
        VersionError: 文件版本不符
        ShapeError: 参数形状与期望网络不符（错误信息中给出层名）
    """
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except FileNotFoundError as e:
        raise MissingInputError(f"策略文件不存在: {path}") from e

    if len(data) < len(MAGIC) + 32 or not data.startswith(MAGIC):
        raise RecordFormatError("不是策略文件", path=path)
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"策略文件校验和不符: {path}")

    offset = len(MAGIC)
    (header_len,) = struct.unpack_from('<I', body, offset)
    offset += 4
    header = json.loads(body[offset:offset + header_len].decode('utf-8'))
    offset += header_len
    if header.get('version') != FORMAT_VERSION:
        raise VersionError(f"不支持的策略文件版本 {header.get('version')}（期望 {FORMAT_VERSION}）")

    (count,) = struct.unpack_from('<Q', body, offset)
    offset += 8
    params = np.frombuffer(body, dtype='<f8', count=count, offset=offset).astype(np.float64)
    offset += 8 * count
    (suffix_len,) = struct.unpack_from('<I', body, offset)
    offset += 4
    suffix = json.loads(body[offset:offset + suffix_len].decode('utf-8'))

    stored_config = NetworkConfig.from_dict(header['network'])
    stored_layers = [(name, tuple(shape)) for name, shape in header['layers']]
    if network_config is not None:
        layer = _check_layers(stored_layers, param_specs(network_config))
        if layer is not None:
            raise ShapeError(f"策略文件与期望网络在层 {layer} 的形状不一致", layer)
    layer = _check_layers(stored_layers, param_specs(stored_config))
    if layer is not None:
        raise ShapeError(f"策略文件的层表与其网络配置不一致: {layer}", layer)

    try:
        input_norm = InputNorm.from_dict(header['input_norm'])
    except (KeyError, TypeError) as e:
        raise RecordFormatError(f"策略文件缺少输入标准化统计量: {e}", path=path) from e
    net = PolicyNet(stored_config, params=params, action_scale=header['action_scale'],
                    input_norm=input_norm)
    zeta = [Action.from_record(a, i, path) for i, a in enumerate(suffix)]
    return Policy(net, zeta, int(header['R']), int(header['N']), int(header['hidden_reset_interval']),
                  list(header.get('loss_curve', [])), header.get('scenario', ''))


def policy_summary(policy):
    return {
        'scenario': policy.scenario_id,
        'n_params': policy.net.n_params,
        'recurrent': policy.net.config.recurrent,
        'modalities': policy.net.config.modalities,
        'R': policy.R,
        'N': policy.N,
        'zeta_remaining': len(policy.zeta_remaining),
        'hidden_reset_interval': policy.hidden_reset_interval,
        'final_loss': policy.loss_curve[-1] if policy.loss_curve else None,
    }
