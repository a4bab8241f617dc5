#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
DemoLoop 核心模块

从单条示教出发的自监督数据增强与行为克隆：
- 平面仿真环境、腕部相机渲染、场景定义
- 示教录制与重放
- 增强轨迹采集（可达性检查、环境扰动检测）
- 数据融合、策略网络训练、闭环部署
- 评估、基线与消融实验
- 配置管理
"""

from .errors import (
    DemoLoopError, ConfigError, ValidationError, MissingInputError, RecordFormatError,
    VersionError, ChecksumError, ShapeError, IntegrityError, UnknownScenarioError,
    ScriptUnreachableError, TaskFailedError, UnrecoverableStateError, TrainingError,
)
from .geometry import Pose, PoseTolerance, compose, inverse, relative, approx_eq
from .scenarios import RandomizationSpec, list_scenarios, load_scenario
from .simenv import World, ForceReading, reset, step, read_force, is_success, translate_scene
from .renderer import CameraConfig, render
from .demo import Observation, Action, Demonstration, record_demo, save_demo, load_demo
from .disturbance import PatchDescriptorExtractor, check_env_disturbance, calibrate_theta
from .collector import CollectorConfig, AugTrajectory, CollectionResult, collect
from .fusion import FusedDataset, fuse
from .network import NetworkConfig, PolicyNet
from .policy import TrainConfig, Policy, train, save_policy, load_policy
from .deploy import DeployConfig, EpisodeResult, deploy
from .harness import EvalSpec, Report, evaluate, run_ablation
from .config import Config, RunConfig

__version__ = "1.0.0"
__author__ = "DemoLoop Team"

__all__ = [
    'DemoLoopError', 'ConfigError', 'ValidationError', 'MissingInputError', 'RecordFormatError',
    'VersionError', 'ChecksumError', 'ShapeError', 'IntegrityError', 'UnknownScenarioError',
    'ScriptUnreachableError', 'TaskFailedError', 'UnrecoverableStateError', 'TrainingError',
    'Pose', 'PoseTolerance', 'compose', 'inverse', 'relative', 'approx_eq',
    'RandomizationSpec', 'list_scenarios', 'load_scenario',
    'World', 'ForceReading', 'reset', 'step', 'read_force', 'is_success', 'translate_scene',
    'CameraConfig', 'render',
    'Observation', 'Action', 'Demonstration', 'record_demo', 'save_demo', 'load_demo',
    'PatchDescriptorExtractor', 'check_env_disturbance', 'calibrate_theta',
    'CollectorConfig', 'AugTrajectory', 'CollectionResult', 'collect',
    'FusedDataset', 'fuse',
    'NetworkConfig', 'PolicyNet',
    'TrainConfig', 'Policy', 'train', 'save_policy', 'load_policy',
    'DeployConfig', 'EpisodeResult', 'deploy',
    'EvalSpec', 'Report', 'evaluate', 'run_ablation',
    'Config', 'RunConfig',
]
