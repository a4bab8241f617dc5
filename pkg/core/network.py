#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
视觉-力觉策略网络（numpy 实现，逐层手写反向传播）

结构：
    图像 (H, W, 3) -> 标准化 -> 分块卷积(核=步长, tanh) -> 分块卷积(线性 logit)
        -> 每通道在特征网格上做 softmax，取期望坐标 (x, y) -> 全连接 -> 图像嵌入
    力 (fx, fy, tz) -> 标准化 -> 两层感知机 -> 力嵌入
    [图像嵌入 | 力嵌入] -> 门控循环层（或逐步前馈层） -> 线性头 -> (dx, dy, dθ, 夹爪 logit)

所有参数存放在一个扁平向量 ψ 中，按名字取视图。网络只接受观测（图像和力），
不接受末端位姿。输入标准化统计量（InputNorm）在训练集上估计，随策略文件保存，不参与训练。
"""

import math
from dataclasses import dataclass, asdict
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .geometry import Pose
from .demo import Action

# both: 图像 + 力；vision: 只用图像（力嵌入置零）；force: 只用力（图像嵌入置零）
MODALITIES = ('both', 'vision', 'force')

IMAGE_STD_FLOOR = 1e-3
FORCE_SCALE_FLOOR = 0.1


@dataclass(frozen=True)
class NetworkConfig:
    """网络结构参数"""

    image_shape: Tuple[int, int, int] = (64, 64, 3)
    kernels: Tuple[int, int] = (2, 2)
    channels: Tuple[int, int] = (8, 16)
    image_embed: int = 64
    force_hidden: int = 32
    force_embed: int = 100
    hidden: int = 64
    recurrent: bool = True
    modalities: str = 'both'

    def __post_init__(self):
        height, width, depth = self.image_shape
        stride = self.kernels[0] * self.kernels[1]
        if depth != 3:
            raise ConfigError(f"图像必须为 3 通道: {self.image_shape}", 'network.image_shape')
        if height % stride or width % stride:
            raise ConfigError(f"图像尺寸 {height}x{width} 不能被总步长 {stride} 整除", 'network.kernels')
        for name in ('image_embed', 'force_hidden', 'force_embed', 'hidden'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} 必须 ≥ 1", f'network.{name}')
        if min(self.channels) < 1:
            raise ConfigError("通道数必须 ≥ 1", 'network.channels')
        if self.modalities not in MODALITIES:
            raise ConfigError(f"未知输入模态: {self.modalities}（可选: {', '.join(MODALITIES)}）",
                              'network.modalities')

    @property
    def feature_shape(self):
        stride = self.kernels[0] * self.kernels[1]
        return self.image_shape[0] // stride, self.image_shape[1] // stride

    @property
    def keypoint_dim(self):
        return 2 * self.channels[1]

    @property
    def input_dim(self):
        return self.image_embed + self.force_embed

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ('image_shape', 'kernels', 'channels'):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def tiny(cls, recurrent=True, modalities='both'):
        """梯度检查用的小网络：8x8 图像，2x2 特征网格，隐状态 4"""
        return cls(image_shape=(8, 8, 3), kernels=(2, 2), channels=(3, 4), image_embed=6,
                   force_hidden=5, force_embed=7, hidden=4, recurrent=recurrent, modalities=modalities)


@dataclass(frozen=True)
class InputNorm:
    """
    输入标准化统计量

    image_mean / image_std 是 [0, 1] 强度上的逐通道均值和标准差，
    force_scale 是力各分量关于 0 的均方根。
    """

    image_mean: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    image_std: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    force_scale: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ('image_mean', 'image_std', 'force_scale'):
            if len(getattr(self, name)) != 3:
                raise ShapeError(f"{name} 必须有 3 个分量", 'input_norm')
        if min(self.image_std) <= 0 or min(self.force_scale) <= 0:
            raise ConfigError("标准化尺度必须为正", 'input_norm')

    def to_dict(self):
        return {key: list(value) for key, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, data):
        return cls(**{key: tuple(float(v) for v in value) for key, value in data.items()})

    @classmethod
    def fit(cls, arrays):
        """在一组 SequenceArrays 上估计统计量（标准差下限 1e-3，力尺度下限 0.1 N）"""
        total = 0
        s1 = np.zeros(3)
        s2 = np.zeros(3)
        f2 = np.zeros(3)
        frames = 0
        for a in arrays:
            pixels = a.images.reshape(-1, 3).astype(np.float64)
            total += len(pixels)
            s1 += pixels.sum(axis=0)
            s2 += (pixels * pixels).sum(axis=0)
            f2 += (a.forces * a.forces).sum(axis=0)
            frames += len(a.forces)
        if total == 0:
            return cls()
        mean = s1 / total
        std = np.sqrt(np.maximum(s2 / total - mean * mean, 0.0))
        rms = np.sqrt(f2 / max(frames, 1))
        return cls(tuple(float(v) for v in mean),
                   tuple(float(v) for v in np.maximum(std, IMAGE_STD_FLOOR)),
                   tuple(float(v) for v in np.maximum(rms, FORCE_SCALE_FLOOR)))


def param_specs(config):
    """按顺序列出 (参数名, 形状)"""
    k1, k2 = config.kernels
    c1, c2 = config.channels
    H = config.hidden
    specs = [
        ('conv1.W', (k1 * k1 * 3, c1)), ('conv1.b', (c1,)),
        # softmax 对每通道的常数平移不变，第二层卷积不设偏置
        ('conv2.W', (k2 * k2 * c1, c2)),
        ('img_fc.W', (config.keypoint_dim, config.image_embed)), ('img_fc.b', (config.image_embed,)),
        ('force1.W', (3, config.force_hidden)), ('force1.b', (config.force_hidden,)),
        ('force2.W', (config.force_hidden, config.force_embed)), ('force2.b', (config.force_embed,)),
    ]
    if config.recurrent:
        specs += [('gru.Wx', (config.input_dim, 3 * H)), ('gru.Wh', (H, 3 * H)), ('gru.b', (3 * H,))]
    else:
        specs += [('ff.W', (config.input_dim, H)), ('ff.b', (H,))]
    specs += [('head.W', (H, 4)), ('head.b', (4,))]
    return specs


def init_params(specs, seed=0, zeros=False):
    """
    权重均匀初始化，偏置为 0

    卷积、全连接和力感知机按 ±sqrt(3/fan_in)（方差 1/fan_in），
    循环层按 ±1/sqrt(fan_in)，输出头在此基础上再缩小 10 倍。
    """
    total = sum(int(np.prod(shape)) for _, shape in specs)
    params = np.zeros(total, dtype=np.float64)
    if zeros:
        return params
    rng = np.random.default_rng(seed)
    offset = 0
    for name, shape in specs:
        size = int(np.prod(shape))
        if name.endswith('.W') or name.endswith('.Wx') or name.endswith('.Wh'):
            if name.startswith('gru.') or name.startswith('head.'):
                bound = 1.0 / math.sqrt(shape[0])
            else:
                bound = math.sqrt(3.0 / shape[0])
            if name.startswith('head.'):
                bound *= 0.1
            params[offset:offset + size] = rng.uniform(-bound, bound, size=size)
        offset += size
    return params


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _patchify(x, k):
    n, height, width, depth = x.shape
    x = x.reshape(n, height // k, k, width // k, k, depth).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, height // k, width // k, k * k * depth)


def _unpatchify(p, k, depth):
    n, rows, cols, _ = p.shape
    p = p.reshape(n, rows, cols, k, k, depth).transpose(0, 1, 3, 2, 4, 5)
    return p.reshape(n, rows * k, cols * k, depth)


def keypoint_grid(feature_shape):
    """特征网格各格中心的 (x, y) 坐标，取值 [-1, 1]，按行优先展平；y 向上为正"""
    rows, cols = feature_shape
    xs = (2.0 * np.arange(cols) + 1.0) / cols - 1.0
    ys = 1.0 - (2.0 * np.arange(rows) + 1.0) / rows
    return np.tile(xs, rows), np.repeat(ys, cols)


def to_unit_images(images):
    """uint8 图像 -> [0, 1] 强度（float32，训练集常驻内存时省一半）"""
    return np.asarray(images, dtype=np.float32) / np.float32(255.0)


def augment_images(images, rng, brightness=0.1, contrast=0.2, noise=0.02):
    """亮度、对比度、噪声扰动（输入为 [0, 1] 强度，形状 (..., H, W, 3)）"""
    lead = images.shape[:-3]
    c = rng.uniform(1.0 - contrast, 1.0 + contrast, size=lead + (1, 1, 1))
    b = rng.uniform(-brightness, brightness, size=lead + (1, 1, 1))
    out = (images - 0.5) * c + 0.5 + b + rng.normal(0.0, noise, size=images.shape)
    return np.clip(out, 0.0, 1.0)


@dataclass
class SequenceArrays:
    """一条训练序列的数组形式"""

    images: np.ndarray    # (L, H, W, 3)，[0, 1] 强度
    forces: np.ndarray    # (L, 3)，原始读数（N, N, N·m）
    targets: np.ndarray   # (L, 3)，除以 action_scale
    gripper: np.ndarray   # (L,)

    def __len__(self):
        return len(self.targets)


def sequence_arrays(observations, actions, action_scale):
    images = to_unit_images([o.image for o in observations])
    forces = np.asarray([o.force.to_list() for o in observations], dtype=np.float64)
    deltas = np.asarray([a.delta.to_list() for a in actions], dtype=np.float64)
    gripper = np.asarray([a.gripper for a in actions], dtype=np.float64)
    return SequenceArrays(images, forces, deltas / action_scale, gripper)


def collate(arrays):
    """补齐到批内最大长度，返回 batch 字典（mask 标记有效步）"""
    B = len(arrays)
    T = max(len(a) for a in arrays)
    image_shape = arrays[0].images.shape[1:]
    batch = {
        'images': np.zeros((B, T) + image_shape),
        'forces': np.zeros((B, T, 3)),
        'targets': np.zeros((B, T, 3)),
        'gripper': np.zeros((B, T)),
        'mask': np.zeros((B, T)),
    }
    for i, a in enumerate(arrays):
        L = len(a)
        batch['images'][i, :L] = a.images
        batch['forces'][i, :L] = a.forces
        batch['targets'][i, :L] = a.targets
        batch['gripper'][i, :L] = a.gripper
        batch['mask'][i, :L] = 1.0
    return batch


class PolicyNet:
    """
    策略网络 f_ψ

    action_scale 是每个位姿分量的归一化尺度（训练集上的均方根），input_norm 是输入标准化统计量，
    两者都不参与训练。modalities 不为 both 时，未使用分支的嵌入在进入时序核心前置零。
    """

    def __init__(self, config=None, params=None, seed=0, action_scale=None, zeros=False, input_norm=None):
        self.config = config or NetworkConfig()
        self.specs = param_specs(self.config)
        self.n_params = sum(int(np.prod(shape)) for _, shape in self.specs)
        if params is None:
            params = init_params(self.specs, seed, zeros)
        params = np.array(params, dtype=np.float64).ravel()
        if params.size != self.n_params:
            raise ShapeError(f"参数个数 {params.size} 与网络结构 {self.n_params} 不符")
        self.params = params
        self.action_scale = (np.ones(3) if action_scale is None
                             else np.asarray(action_scale, dtype=np.float64).copy())
        self.input_norm = input_norm or InputNorm()
        self._image_mean = np.asarray(self.input_norm.image_mean, dtype=np.float64)
        self._image_std = np.asarray(self.input_norm.image_std, dtype=np.float64)
        self._force_scale = np.asarray(self.input_norm.force_scale, dtype=np.float64)
        self._grid_x, self._grid_y = keypoint_grid(self.config.feature_shape)
        E, F = self.config.image_embed, self.config.force_embed
        modalities = self.config.modalities
        self._branch_mask = np.concatenate([np.full(E, float(modalities != 'force')),
                                            np.full(F, float(modalities != 'vision'))])

    def _views(self, flat):
        views = {}
        offset = 0
        for name, shape in self.specs:
            size = int(np.prod(shape))
            views[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        return views

    @property
    def named_params(self):
        return self._views(self.params)

    def initial_state(self):
        return np.zeros(self.config.hidden)

    # ------------------------------------------------------------------
    # 编码器
    # ------------------------------------------------------------------

    def _keypoints(self, logits):
        """logits (n, fh, fw, c2) -> (softmax 权重 (n, P, c2), 期望坐标 (n, 2*c2))"""
        n, c2 = logits.shape[0], logits.shape[-1]
        z = logits.reshape(n, -1, c2)
        z = z - z.max(axis=1, keepdims=True)
        s = np.exp(z)
        s /= s.sum(axis=1, keepdims=True)
        kx = np.einsum('npc,p->nc', s, self._grid_x)
        ky = np.einsum('npc,p->nc', s, self._grid_y)
        return s, np.concatenate([kx, ky], axis=1)

    def _encode(self, p, images, forces):
        k1, k2 = self.config.kernels
        x = (images - self._image_mean) / self._image_std
        forces = forces / self._force_scale
        p1 = _patchify(x, k1)
        a1 = np.tanh(p1 @ p['conv1.W'] + p['conv1.b'])
        p2 = _patchify(a1, k2)
        s, kp = self._keypoints(p2 @ p['conv2.W'])
        e = np.tanh(kp @ p['img_fc.W'] + p['img_fc.b'])
        f1 = np.tanh(forces @ p['force1.W'] + p['force1.b'])
        f2 = np.tanh(f1 @ p['force2.W'] + p['force2.b'])
        X = np.concatenate([e, f2], axis=1) * self._branch_mask
        return X, (p1, a1, p2, s, kp, e, forces, f1, f2)

    def _encode_backward(self, p, g, dx, cache):
        p1, a1, p2, s, kp, e, forces, f1, f2 = cache
        k1, k2 = self.config.kernels
        c1, c2 = self.config.channels
        E = self.config.image_embed
        dx = dx * self._branch_mask

        de = dx[:, :E] * (1.0 - e * e)
        g['img_fc.W'][...] = kp.T @ de
        g['img_fc.b'][...] = de.sum(axis=0)
        dkp = de @ p['img_fc.W'].T
        ds = (dkp[:, None, :c2] * self._grid_x[None, :, None]
              + dkp[:, None, c2:] * self._grid_y[None, :, None])
        dz = s * (ds - (s * ds).sum(axis=1, keepdims=True))
        dz = dz.reshape(p2.shape[:-1] + (c2,))
        g['conv2.W'][...] = p2.reshape(-1, p2.shape[-1]).T @ dz.reshape(-1, c2)
        da1 = _unpatchify(dz @ p['conv2.W'].T, k2, c1) * (1.0 - a1 * a1)
        g['conv1.W'][...] = p1.reshape(-1, p1.shape[-1]).T @ da1.reshape(-1, da1.shape[-1])
        g['conv1.b'][...] = da1.sum(axis=(0, 1, 2))

        df2 = dx[:, E:] * (1.0 - f2 * f2)
        g['force2.W'][...] = f1.T @ df2
        g['force2.b'][...] = df2.sum(axis=0)
        df1 = (df2 @ p['force2.W'].T) * (1.0 - f1 * f1)
        g['force1.W'][...] = forces.T @ df1
        g['force1.b'][...] = df1.sum(axis=0)

    # ------------------------------------------------------------------
    # 时序核心
    # ------------------------------------------------------------------

    def _core(self, p, X, h0):
        """X: (B, T, D)，h0: (B, H) -> (隐状态序列 (B, T, H), 缓存)"""
        B, T, _ = X.shape
        H = self.config.hidden
        if not self.config.recurrent:
            hs = np.tanh(X @ p['ff.W'] + p['ff.b'])
            return hs, (X, hs)

        A = X @ p['gru.Wx'] + p['gru.b']
        states = [h0]
        gates = []
        for t in range(T):
            h = states[-1]
            hh = h @ p['gru.Wh']
            z = sigmoid(A[:, t, :H] + hh[:, :H])
            r = sigmoid(A[:, t, H:2 * H] + hh[:, H:2 * H])
            n = np.tanh(A[:, t, 2 * H:] + r * hh[:, 2 * H:])
            states.append((1.0 - z) * n + z * h)
            gates.append((z, r, n, hh))
        return np.stack(states[1:], axis=1), (X, states, gates)

    def _core_backward(self, p, g, dH, cache):
        if not self.config.recurrent:
            X, hs = cache
            dpre = dH * (1.0 - hs * hs)
            D = X.shape[-1]
            g['ff.W'][...] = X.reshape(-1, D).T @ dpre.reshape(-1, dpre.shape[-1])
            g['ff.b'][...] = dpre.sum(axis=(0, 1))
            return dpre @ p['ff.W'].T

        X, states, gates = cache
        B, T, D = X.shape
        H = self.config.hidden
        Wh = p['gru.Wh']
        dA = np.zeros((B, T, 3 * H))
        dWh = np.zeros_like(Wh)
        dh = np.zeros((B, H))
        for t in reversed(range(T)):
            z, r, n, hh = gates[t]
            h_prev = states[t]
            dh = dh + dH[:, t]
            dn = dh * (1.0 - z) * (1.0 - n * n)
            dz = dh * (h_prev - n) * z * (1.0 - z)
            dr = dn * hh[:, 2 * H:] * r * (1.0 - r)
            dA[:, t] = np.concatenate([dz, dr, dn], axis=1)
            dhh = np.concatenate([dz, dr, dn * r], axis=1)
            dWh += h_prev.T @ dhh
            dh = dh * z + dhh @ Wh.T
        g['gru.Wx'][...] = X.reshape(-1, D).T @ dA.reshape(-1, 3 * H)
        g['gru.Wh'][...] = dWh
        g['gru.b'][...] = dA.sum(axis=(0, 1))
        return dA @ p['gru.Wx'].T

    # ------------------------------------------------------------------
    # 前向 / 损失 / 梯度
    # ------------------------------------------------------------------

    def _check_images(self, images):
        if images.shape[-3:] != tuple(self.config.image_shape):
            raise ShapeError(f"输入图像尺寸 {images.shape[-3:]} 与网络 {self.config.image_shape} 不符",
                             'input')

    def outputs(self, observations, h0=None):
        """
        原始输出

        Returns:
            (Y (T, 4)，最终隐状态)；Y 的前三列为归一化的位姿增量，最后一列为夹爪 logit
        """
        p = self.named_params
        images = to_unit_images([o.image for o in observations]).astype(np.float64)
        self._check_images(images)
        forces = np.asarray([o.force.to_list() for o in observations], dtype=np.float64)
        X, _ = self._encode(p, images, forces)
        h0 = self.initial_state() if h0 is None else np.asarray(h0, dtype=np.float64)
        hs, _ = self._core(p, X[None], h0[None])
        Y = hs[0] @ p['head.W'] + p['head.b']
        h_final = hs[0, -1] if self.config.recurrent else h0
        return Y, h_final

    def to_action(self, y):
        delta = y[:3] * self.action_scale
        return Action(Pose(float(delta[0]), float(delta[1]), float(delta[2])), int(y[3] > 0.0))

    def forward(self, observations, h0=None):
        """每个输入观测输出一个动作，返回 (动作列表, 最终隐状态)"""
        Y, h_final = self.outputs(observations, h0)
        return [self.to_action(y) for y in Y], h_final

    def step(self, observation, h):
        actions, h = self.forward([observation], h)
        return actions[0], h

    def loss_and_grad(self, batch, need_grad=True):
        """
        批损失：有效步上 (位姿增量平方误差 + 夹爪 BCE) 的平均

        Args:
            batch: collate 的输出（图像为 [0, 1] 强度，力为原始读数）

        Returns:
            (损失, 梯度向量或 None)
        """
        p = self.named_params
        mask = batch['mask']
        B, T = mask.shape
        images = batch['images']
        self._check_images(images)
        X, enc_cache = self._encode(p, images.reshape((B * T,) + images.shape[2:]),
                                    batch['forces'].reshape(B * T, 3))
        X = X.reshape(B, T, -1)
        hs, core_cache = self._core(p, X, np.zeros((B, self.config.hidden)))
        Y = hs @ p['head.W'] + p['head.b']

        n_valid = max(mask.sum(), 1.0)
        diff = Y[..., :3] - batch['targets']
        logit = Y[..., 3]
        bce = np.maximum(logit, 0.0) - logit * batch['gripper'] + np.log1p(np.exp(-np.abs(logit)))
        loss = float((((diff ** 2).sum(axis=-1) + bce) * mask).sum() / n_valid)
        if not need_grad:
            return loss, None

        grad = np.zeros_like(self.params)
        g = self._views(grad)
        w = mask / n_valid
        dY = np.empty_like(Y)
        dY[..., :3] = 2.0 * diff * w[..., None]
        dY[..., 3] = (sigmoid(logit) - batch['gripper']) * w
        H = self.config.hidden
        g['head.W'][...] = hs.reshape(-1, H).T @ dY.reshape(-1, 4)
        g['head.b'][...] = dY.sum(axis=(0, 1))
        dX = self._core_backward(p, g, dY @ p['head.W'].T, core_cache)
        self._encode_backward(p, g, dX.reshape(B * T, -1), enc_cache)
        return loss, grad


def forward(net, obs_seq, h0=None):
    return net.forward(obs_seq, h0)


def loss(net, batch):
    return net.loss_and_grad(batch, need_grad=False)[0]


def grad(net, batch, clip_norm=None):
    _, g = net.loss_and_grad(batch)
    if clip_norm is not None:
        g, _ = clip_gradient(g, clip_norm)
    return g


def clip_gradient(g, max_norm):
    """按全局范数裁剪，返回 (裁剪后梯度, 原范数)"""
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        g = g * (max_norm / norm)
    return g, norm


class SGDMomentum:
    name = 'sgd-momentum'

    def __init__(self, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = None

    def step(self, params, g):
        if self.velocity is None:
            self.velocity = np.zeros_like(params)
        self.velocity = self.momentum * self.velocity + g
        params -= self.lr * self.velocity


class Adam:
    name = 'adam'

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, g):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = {'adam': Adam, 'sgd-momentum': SGDMomentum}


def make_optimizer(name, lr, momentum=0.9):
    if name not in OPTIMIZERS:
        raise ConfigError(f"未知优化器: {name}（可选: {', '.join(OPTIMIZERS)}）", 'train.optimizer')
    if name == 'sgd-momentum':
        return SGDMomentum(lr, momentum)
    return Adam(lr)


def layer_shapes(config) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(name, tuple(shape)) for name, shape in param_specs(config)]
