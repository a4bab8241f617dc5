#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""策略网络测试：反向传播用中心差分核对"""

import math

import numpy as np
import pytest

from core.errors import ConfigError, ShapeError
from core.network import (
    NetworkConfig, InputNorm, PolicyNet, param_specs, collate, sequence_arrays, clip_gradient,
    make_optimizer, layer_shapes, keypoint_grid, Adam, SGDMomentum,
)
from core.demo import Action, Observation
from core.geometry import Pose
from core.simenv import ForceReading


def _random_batch(config, lengths, seed=0):
    rng = np.random.default_rng(seed)
    B, T = len(lengths), max(lengths)
    h, w, _ = config.image_shape
    mask = np.zeros((B, T))
    for i, L in enumerate(lengths):
        mask[i, :L] = 1.0
    return {
        'images': rng.uniform(0.0, 1.0, size=(B, T, h, w, 3)),
        'forces': rng.normal(0.0, 1.0, size=(B, T, 3)),
        'targets': rng.normal(0.0, 1.0, size=(B, T, 3)),
        'gripper': rng.integers(0, 2, size=(B, T)).astype(float),
        'mask': mask,
    }


def _numeric_gradient(net, batch, eps=1e-5):
    numeric = np.zeros_like(net.params)
    for i in range(net.n_params):
        original = net.params[i]
        net.params[i] = original + eps
        plus, _ = net.loss_and_grad(batch, need_grad=False)
        net.params[i] = original - eps
        minus, _ = net.loss_and_grad(batch, need_grad=False)
        net.params[i] = original
        numeric[i] = (plus - minus) / (2.0 * eps)
    return numeric


@pytest.mark.parametrize('recurrent, modalities', [(True, 'both'), (False, 'both'), (True, 'vision')])
def test_gradient_matches_central_differences(recurrent, modalities):
    config = NetworkConfig.tiny(recurrent=recurrent, modalities=modalities)
    norm = InputNorm((0.4, 0.5, 0.6), (0.3, 0.2, 0.25), (2.0, 0.5, 1.0))
    net = PolicyNet(config, seed=3, input_norm=norm)
    # 放大输出头，让梯度不至于过小
    net.named_params['head.W'][...] *= 10.0
    batch = _random_batch(config, [3, 2])

    _, analytic = net.loss_and_grad(batch)
    numeric = _numeric_gradient(net, batch)
    error = np.linalg.norm(analytic - numeric) / (np.linalg.norm(analytic) + np.linalg.norm(numeric))
    assert error < 1e-4


def test_padding_does_not_change_the_loss():
    config = NetworkConfig.tiny()
    net = PolicyNet(config, seed=1)
    batch = _random_batch(config, [2, 2], seed=5)
    loss, _ = net.loss_and_grad(batch, need_grad=False)

    padded = {key: np.concatenate([value, np.zeros_like(value[:, :1])], axis=1)
              for key, value in batch.items()}
    padded['images'][:, -1] = 0.3
    padded['targets'][:, -1] = 7.0
    padded_loss, _ = net.loss_and_grad(padded, need_grad=False)
    assert padded_loss == pytest.approx(loss, rel=1e-12)


def test_parameter_layout():
    config = NetworkConfig.tiny()
    net = PolicyNet(config)
    assert net.n_params == sum(int(np.prod(shape)) for _, shape in param_specs(config))
    names = [name for name, _ in layer_shapes(config)]
    assert 'gru.Wh' in names and 'ff.W' not in names
    names = [name for name, _ in layer_shapes(NetworkConfig.tiny(recurrent=False))]
    assert 'ff.W' in names and 'gru.Wh' not in names
    assert not PolicyNet(config, zeros=True).params.any()
    with pytest.raises(ShapeError):
        PolicyNet(config, params=np.zeros(net.n_params + 1))


def test_network_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(image_shape=(30, 30, 3))
    with pytest.raises(ConfigError) as info:
        NetworkConfig(image_shape=(8, 8, 3), kernels=(4, 2), hidden=0)
    assert info.value.key_path == 'network.hidden'
    config = NetworkConfig.tiny()
    assert NetworkConfig.from_dict(config.to_dict()) == config


def _observation(value, shape=(8, 8, 3)):
    return Observation(np.full(shape, value, dtype=np.uint8), ForceReading(0.0, 0.0, 0.0))


def test_forward_is_sequence_consistent():
    net = PolicyNet(NetworkConfig.tiny(), seed=2)
    observations = [_observation(v) for v in (10, 120, 240)]
    actions, h_all = net.forward(observations)

    h = net.initial_state()
    stepped = []
    for obs in observations:
        action, h = net.step(obs, h)
        stepped.append(action)
    for a, b in zip(actions, stepped):
        assert np.allclose(a.delta.to_list(), b.delta.to_list(), atol=1e-12)
        assert a.gripper == b.gripper
    assert np.allclose(h, h_all)


def test_feedforward_ignores_history():
    net = PolicyNet(NetworkConfig.tiny(recurrent=False), seed=2)
    alone, _ = net.forward([_observation(50)])
    after, _ = net.forward([_observation(200), _observation(50)])
    assert np.allclose(alone[0].delta.to_list(), after[1].delta.to_list())


def test_wrong_image_shape_is_rejected():
    net = PolicyNet(NetworkConfig.tiny())
    with pytest.raises(ShapeError) as info:
        net.forward([_observation(0, shape=(16, 16, 3))])
    assert info.value.layer == 'input'


def test_action_scale_applies_to_outputs():
    net = PolicyNet(NetworkConfig.tiny(), seed=4, action_scale=[1.0, 1.0, 1.0])
    scaled = PolicyNet(NetworkConfig.tiny(), params=net.params, action_scale=[2.0, 3.0, 4.0])
    obs = [_observation(90)]
    a, _ = net.forward(obs)
    b, _ = scaled.forward(obs)
    assert np.allclose(np.array(b[0].delta.to_list()), np.array(a[0].delta.to_list()) * [2.0, 3.0, 4.0])


def test_sequence_arrays_and_collate():
    observations = [_observation(255), _observation(0)]
    actions = [Action(Pose(0.01, -0.02, 0.0), 1), Action.hold()]
    arrays = sequence_arrays(observations, actions, np.array([0.01, 0.01, 0.1]))
    assert np.allclose(arrays.targets[0], [1.0, -2.0, 0.0])
    assert arrays.images.max() == pytest.approx(1.0) and arrays.images.min() == 0.0
    batch = collate([arrays, sequence_arrays(observations[:1], actions[:1], 1.0)])
    assert batch['mask'].tolist() == [[1.0, 1.0], [1.0, 0.0]]
    assert batch['images'].shape == (2, 2, 8, 8, 3)


def _forced(value, force):
    return Observation(np.full((8, 8, 3), value, dtype=np.uint8), ForceReading(*force))


def _spot(row, col, force=(0.0, 0.0, 0.0)):
    """暗背景上一块 4x4 亮斑（左上角在 row, col）"""
    image = np.full((8, 8, 3), 30, dtype=np.uint8)
    image[row:row + 4, col:col + 4] = 230
    return Observation(image, ForceReading(*force))


def test_input_norm_fit_standardizes_the_training_inputs():
    observations = [_forced(0, (0.0, 0.0, 0.0)), _forced(255, (3.0, -4.0, 0.0))]
    arrays = sequence_arrays(observations, [Action.hold(), Action.hold()], 1.0)
    norm = InputNorm.fit([arrays])
    assert norm.image_mean == pytest.approx((0.5, 0.5, 0.5))
    assert norm.image_std == pytest.approx((0.5, 0.5, 0.5))
    # 均方根：sqrt(9/2)、sqrt(16/2)；全零分量取下限
    assert norm.force_scale == pytest.approx((math.sqrt(4.5), math.sqrt(8.0), 0.1))
    assert InputNorm.from_dict(norm.to_dict()) == norm
    with pytest.raises(ConfigError):
        InputNorm(image_std=(1.0, 0.0, 1.0))


def test_input_norm_changes_what_the_network_sees():
    config = NetworkConfig.tiny()
    net = PolicyNet(config, seed=6)
    shifted = PolicyNet(config, params=net.params, input_norm=InputNorm(force_scale=(0.1, 1.0, 1.0)))
    obs = [_spot(0, 4, (1.0, 0.0, 0.0))]
    assert not np.allclose(net.outputs(obs)[0], shifted.outputs(obs)[0])


def test_keypoint_grid_is_row_major_with_y_up():
    xs, ys = keypoint_grid((2, 3))
    assert np.allclose(xs, [-2 / 3, 0.0, 2 / 3] * 2)
    assert np.allclose(ys, [0.5, 0.5, 0.5, -0.5, -0.5, -0.5])


def test_keypoints_follow_a_bright_spot():
    config = NetworkConfig(image_shape=(16, 16, 3), kernels=(2, 2), channels=(1, 1), image_embed=2,
                           force_hidden=2, force_embed=2, hidden=2)
    net = PolicyNet(config, zeros=True)
    p = net.named_params
    # 亮度越高 logit 越大
    p['conv1.W'][...] = 1.0
    p['conv2.W'][...] = 20.0
    image = np.zeros((1, 16, 16, 3))
    image[0, 0:4, 12:16] = 1.0
    _, cache = net._encode(p, image, np.zeros((1, 3)))
    kx, ky = cache[4][0]
    assert kx > 0.5 and ky > 0.5


@pytest.mark.parametrize('modalities, ignored', [('vision', 'force'), ('force', 'image')])
def test_single_modality_ignores_the_other_branch(modalities, ignored):
    net = PolicyNet(NetworkConfig.tiny(modalities=modalities), seed=8)
    base = [_spot(0, 0, (0.5, -0.2, 0.01)), _spot(4, 4, (1.5, 0.3, -0.02))]
    if ignored == 'force':
        changed = [_spot(0, 0, (9.0, 9.0, 9.0)), _spot(4, 4, (-7.0, 2.0, 0.5))]
    else:
        changed = [_spot(4, 0, (0.5, -0.2, 0.01)), _spot(0, 4, (1.5, 0.3, -0.02))]
    assert np.allclose(net.outputs(base)[0], net.outputs(changed)[0], atol=1e-12)

    both = PolicyNet(NetworkConfig.tiny(), params=net.params)
    assert not np.allclose(both.outputs(base)[0], both.outputs(changed)[0])


def test_vision_only_leaves_the_force_branch_untrained():
    config = NetworkConfig.tiny(modalities='vision')
    net = PolicyNet(config, seed=2)
    _, g = net.loss_and_grad(_random_batch(config, [3, 2]))
    views = net._views(g)
    for name in ('force1.W', 'force1.b', 'force2.W', 'force2.b'):
        assert not views[name].any()
    assert views['conv1.W'].any()


def test_unknown_modality_is_rejected():
    with pytest.raises(ConfigError) as info:
        NetworkConfig.tiny(modalities='touch')
    assert info.value.key_path == 'network.modalities'


def test_clip_gradient():
    g = np.array([3.0, 4.0])
    clipped, norm = clip_gradient(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(clipped) == pytest.approx(1.0)
    same, _ = clip_gradient(g, 10.0)
    assert np.array_equal(same, g)


@pytest.mark.parametrize('name, cls', [('adam', Adam), ('sgd-momentum', SGDMomentum)])
def test_optimizers_descend_a_quadratic(name, cls):
    optimizer = make_optimizer(name, 0.05)
    assert isinstance(optimizer, cls)
    params = np.array([1.0, -2.0])
    for _ in range(200):
        optimizer.step(params, 2.0 * params)
    assert np.linalg.norm(params) < 0.1


def test_unknown_optimizer():
    with pytest.raises(ConfigError) as info:
        make_optimizer('rmsprop', 0.1)
    assert info.value.key_path == 'train.optimizer'
