#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试公共夹具

小分辨率相机和小网络让单元测试在几秒内跑完；示教和采集结果按会话缓存。
"""

import math

import pytest

from core.renderer import CameraConfig
from core.disturbance import PatchDescriptorExtractor
from core.network import NetworkConfig
from core.collector import CollectorConfig, collect
from core.fusion import fuse
from core.simenv import reset
from core.harness import make_demo

SMALL_CAMERA = CameraConfig(resolution=32, fov=0.24, supersample=1)


def small_network_config(recurrent=True):
    return NetworkConfig(image_shape=(32, 32, 3), kernels=(4, 4), channels=(4, 8), image_embed=16,
                         force_hidden=8, force_embed=8, hidden=16, recurrent=recurrent)


def small_collector_config(**kwargs):
    settings = dict(Z=2, trans_range=0.02, rot_range=math.radians(2.0), max_attempts_per_waypoint=10)
    settings.update(kwargs)
    return CollectorConfig(**settings)


@pytest.fixture(scope='session')
def small_camera():
    return SMALL_CAMERA


@pytest.fixture(scope='session')
def small_extractor():
    return PatchDescriptorExtractor(patch_size=8)


@pytest.fixture(scope='session')
def reach_demo(small_camera):
    return make_demo('reach', 0, small_camera)


@pytest.fixture(scope='session')
def reach_collection(reach_demo, small_camera, small_extractor):
    world = reset('reach', 0)
    return collect(world, reach_demo, small_collector_config(), small_camera, small_extractor)


@pytest.fixture(scope='session')
def reach_fused(reach_collection, reach_demo):
    return fuse(reach_collection, reach_demo)
