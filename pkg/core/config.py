#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置管理模块

单个 JSON 配置文件覆盖默认配置；文件中出现默认配置里没有的键会被拒绝。
角度在配置文件中以度为单位（键名带 _deg），转换成各模块的参数对象时换算为弧度。
"""

import os
import copy
import json
import math
from dataclasses import dataclass, asdict

from .errors import ConfigError
from .geometry import PoseTolerance
from .records import write_json, sha256_json
from .renderer import CameraConfig
from .disturbance import PatchDescriptorExtractor
from .collector import CollectorConfig
from .network import NetworkConfig
from .policy import TrainConfig
from .deploy import DeployConfig
from .harness import EvalSpec

VERBOSE_ENV = 'DEMOLOOP_VERBOSE'


def env_verbosity(default=1):
    """
    读取环境变量 DEMOLOOP_VERBOSE

    0 安静，1 阶段横幅（默认），2 逐项细节；无法解析时按默认处理
    """
    value = os.environ.get(VERBOSE_ENV)
    if value is None or not value.strip():
        return default
    try:
        return max(0, min(2, int(value)))
    except ValueError:
        return default


# 默认值为 None 的键可以接受任意类型的值
DEFAULT_CONFIG = {
    'scenario': 'reach',
    'seed': 0,
    'camera': {
        'resolution': 64,
        'fov': 0.24,
        'supersample': 2,
        'noise_sigma': 0.0,
    },
    'collector': {
        'Z': 10,
        'trans_range': 0.04,
        'rot_range_deg': 4.0,
        'theta': 0.94,
        'pose_tol_trans': 0.001,
        'pose_tol_rot_deg': 0.5,
        'max_ticks_per_traj': 60,
        'step_trans': 0.008,
        'step_rot_deg': 2.0,
        'settle_ticks': 4,
        'max_attempts_per_waypoint': 50,
        'force_limit': None,
        'sequential': True,
        'check_reachability': True,
        'check_disturbance': True,
        'scripted_nudge': None,
    },
    'disturbance': {
        'patch_size': 8,
        'use_calibrated': False,
        'calibration_scenarios': ['reach', 'peg', 'push-block', 'lid'],
        'calibration_pairs': 100,
        'displacements': [0, 2, 4, 8, 16],
        'min_disturbed_px': 8,
    },
    'network': {
        'kernels': [2, 2],
        'channels': [8, 16],
        'image_embed': 64,
        'force_hidden': 32,
        'force_embed': 100,
        'hidden': 64,
        'recurrent': True,
        'modalities': 'both',
    },
    'train': {
        'lr': 0.002,
        'batch_size': 4,
        'epochs': 150,
        'clip_norm': 1.0,
        'optimizer': 'adam',
        'momentum': 0.9,
        'augment': False,
        'loss_window': 5,
        'lr_schedule': 'cosine',
        'lr_final_fraction': 0.1,
    },
    'deploy': {
        'identity_eps_trans': 0.0005,
        'identity_eps_rot_deg': 0.25,
        'identity_consecutive': 3,
        'timeout_seconds': 20.0,
        'tick_rate': 10.0,
        'settle_ticks': 4,
        'save_traces': True,
    },
    'eval': {
        'trials': 20,
        'trans_range': 0.04,
        'rot_range_deg': 4.0,
        'shape': 'box',
        'seed_base': 1000,
        'workers': 1,
        'baselines': True,
        'pose_residual': 0.0,
    },
    'ablation': {
        'modes': ['full', 'no-sequence', 'no-disturbance', 'no-reachability', 'no-memory', 'data-fraction',
                  'vision-only', 'force-only'],
        'fractions': [0.25, 0.5, 0.75, 1.0],
        'scenarios': None,
        'seeds': None,
    },
    'report': {
        'excel': True,
        'markdown': True,
    },
    'paths': {
        'output_dir': 'runs',
    },
}


# 只影响产物存放位置，不计入配置哈希
HASH_EXCLUDED_SECTIONS = ('paths',)


def load_default_config():
    """返回默认配置的副本"""
    return copy.deepcopy(DEFAULT_CONFIG)


def _type_name(value):
    return type(value).__name__


def check_value(path, default, value):
    """
    按默认值的类型检查一个覆盖值，返回规范化后的值

    - 默认为 None：任意值
    - 默认为 bool：只接受 bool
    - 默认为 int：接受 int 和整数值的 float（转为 int），拒绝 bool
    - 默认为 float：接受 int / float（转为 float），拒绝 bool
    - 默认为 str：只接受 str
    - 默认为 list：只接受 list，元素按默认列表首元素的类型逐个检查

    Raises:
        ConfigError: 类型不符（key_path 为出错的键路径）
    """
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"配置项 {path} 必须是布尔值，得到 {_type_name(value)}: {value!r}", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"配置项 {path} 必须是整数，得到 {_type_name(value)}: {value!r}", path)
        if isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"配置项 {path} 必须是整数，得到非整数值 {value!r}", path)
            return int(value)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"配置项 {path} 必须是数值，得到 {_type_name(value)}: {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"配置项 {path} 必须是字符串，得到 {_type_name(value)}: {value!r}", path)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"配置项 {path} 必须是列表，得到 {_type_name(value)}: {value!r}", path)
        if not default:
            return list(value)
        return [check_value(f"{path}[{i}]", default[0], item) for i, item in enumerate(value)]
    return value


@dataclass(frozen=True)
class RunConfig:
    """一次完整运行的全部参数"""

    scenario: str
    seed: int
    camera: CameraConfig
    collector: CollectorConfig
    network: NetworkConfig
    train: TrainConfig
    deploy: DeployConfig
    eval: EvalSpec
    output_dir: str = 'runs'

    def to_dict(self):
        data = asdict(self)
        data['collector'] = self.collector.to_dict()
        return data

    def config_hash(self, **extra):
        """影响结果的参数的哈希（不含 output_dir）"""
        data = self.to_dict()
        data.pop('output_dir')
        return sha256_json({'run': data, **extra})


class Config:
    """配置管理类"""

    def __init__(self, config_file=None, overrides=None):
        """
        初始化配置

        Args:
            config_file: 配置文件路径；给定但不存在时报错
            overrides: 额外覆盖的配置字典
        """
        self.config_file = config_file
        self.config = load_default_config()

        if config_file:
            self.load_config(config_file)
        if overrides:
            self.merge_config(overrides)

    def load_config(self, config_file):
        """从文件加载配置"""
        if not os.path.exists(config_file):
            raise ConfigError(f"配置文件不存在: {config_file}")
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                file_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件不是合法 JSON: {e}") from e
        if not isinstance(file_config, dict):
            raise ConfigError("配置文件顶层必须是对象")
        self.merge_config(file_config)

    def merge_config(self, new_config):
        """合并配置，拒绝未知键和与默认值类型不符的值"""
        def merge_dict(base, defaults, new, prefix):
            for key, value in new.items():
                path = f"{prefix}{key}"
                if key not in base:
                    raise ConfigError(f"未知配置项: {path}", path)
                if isinstance(base[key], dict):
                    if not isinstance(value, dict):
                        raise ConfigError(f"配置项 {path} 必须是对象", path)
                    merge_dict(base[key], defaults[key], value, path + '.')
                else:
                    base[key] = check_value(path, defaults[key], value)

        merge_dict(self.config, DEFAULT_CONFIG, new_config, '')

    def get(self, key, default=None):
        """获取配置值"""
        value = self.config
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key, value):
        """设置配置值（键必须已存在）"""
        keys = key.split('.')
        config = self.config
        defaults = DEFAULT_CONFIG
        for k in keys[:-1]:
            if not isinstance(config.get(k), dict):
                raise ConfigError(f"未知配置项: {key}", key)
            config = config[k]
            defaults = defaults[k]
        if keys[-1] not in config or isinstance(config[keys[-1]], dict):
            raise ConfigError(f"未知配置项: {key}", key)
        config[keys[-1]] = check_value(key, defaults[keys[-1]], value)

    # ------------------------------------------------------------------
    # 类型化视图
    # ------------------------------------------------------------------

    def _build(self, section, factory):
        try:
            return factory()
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"配置段 {section} 无效: {e}", section) from e

    def camera_config(self):
        c = self.config['camera']
        return self._build('camera', lambda: CameraConfig(int(c['resolution']), float(c['fov']),
                                                          int(c['supersample']), float(c['noise_sigma'])))

    def collector_config(self, theta=None):
        c = self.config['collector']

        def factory():
            nudge = c['scripted_nudge']
            return CollectorConfig(
                Z=int(c['Z']),
                trans_range=float(c['trans_range']),
                rot_range=math.radians(c['rot_range_deg']),
                theta=float(c['theta'] if theta is None else theta),
                pose_tol=PoseTolerance(float(c['pose_tol_trans']), math.radians(c['pose_tol_rot_deg'])),
                max_ticks_per_traj=int(c['max_ticks_per_traj']),
                step_trans=float(c['step_trans']),
                step_rot=math.radians(c['step_rot_deg']),
                settle_ticks=int(c['settle_ticks']),
                max_attempts_per_waypoint=int(c['max_attempts_per_waypoint']),
                force_limit=None if c['force_limit'] is None else float(c['force_limit']),
                sequential=bool(c['sequential']),
                check_reachability=bool(c['check_reachability']),
                check_disturbance=bool(c['check_disturbance']),
                seed=int(self.config['seed']),
                scripted_nudge=None if nudge is None else (int(nudge[0]), int(nudge[1]),
                                                           float(nudge[2]), float(nudge[3])),
            )

        return self._build('collector', factory)

    def network_config(self, image_shape=None):
        c = self.config['network']
        resolution = int(self.config['camera']['resolution'])
        shape = tuple(image_shape) if image_shape else (resolution, resolution, 3)
        return self._build('network', lambda: NetworkConfig(
            image_shape=shape, kernels=tuple(c['kernels']), channels=tuple(c['channels']),
            image_embed=int(c['image_embed']), force_hidden=int(c['force_hidden']),
            force_embed=int(c['force_embed']), hidden=int(c['hidden']),
            recurrent=bool(c['recurrent']), modalities=c['modalities']))

    def train_config(self):
        c = self.config['train']
        return self._build('train', lambda: TrainConfig(
            lr=float(c['lr']), batch_size=int(c['batch_size']), epochs=int(c['epochs']),
            clip_norm=float(c['clip_norm']), seed=int(self.config['seed']), optimizer=c['optimizer'],
            momentum=float(c['momentum']), augment=bool(c['augment']), loss_window=int(c['loss_window']),
            lr_schedule=c['lr_schedule'], lr_final_fraction=float(c['lr_final_fraction'])))

    def deploy_config(self):
        c = self.config['deploy']
        return self._build('deploy', lambda: DeployConfig.for_timeout_seconds(
            float(c['timeout_seconds']), float(c['tick_rate']),
            identity_eps_trans=float(c['identity_eps_trans']),
            identity_eps_rot=math.radians(c['identity_eps_rot_deg']),
            identity_consecutive=int(c['identity_consecutive']),
            settle_ticks=int(c['settle_ticks'])))

    def eval_spec(self):
        c = self.config['eval']
        return self._build('eval', lambda: EvalSpec(
            scenario=self.config['scenario'], trials=int(c['trials']), trans_range=float(c['trans_range']),
            rot_range=math.radians(c['rot_range_deg']), shape=c['shape'], seed_base=int(c['seed_base']),
            workers=int(c['workers'])))

    def extractor(self):
        patch_size = self.config['disturbance']['patch_size']
        return self._build('disturbance', lambda: PatchDescriptorExtractor(int(patch_size)))

    def calibration_settings(self):
        """calibrate_theta 的关键字参数"""
        c = self.config['disturbance']
        return {
            'scenarios': list(c['calibration_scenarios']),
            'displacements': tuple(int(d) for d in c['displacements']),
            'pairs': int(c['calibration_pairs']),
            'min_disturbed_px': int(c['min_disturbed_px']),
            'seed': int(self.config['seed']),
        }

    def run_config(self, theta=None):
        return RunConfig(
            scenario=self.config['scenario'],
            seed=int(self.config['seed']),
            camera=self.camera_config(),
            collector=self.collector_config(theta),
            network=self.network_config(),
            train=self.train_config(),
            deploy=self.deploy_config(),
            eval=self.eval_spec(),
            output_dir=self.get('paths.output_dir', 'runs'),
        )

    # ------------------------------------------------------------------
    # 路径
    # ------------------------------------------------------------------

    def get_run_dir(self, scenario=None, seed=None):
        scenario = scenario or self.config['scenario']
        seed = self.config['seed'] if seed is None else seed
        return os.path.join(self.get('paths.output_dir', 'runs'), scenario, f"seed-{seed}")

    def get_run_paths(self, scenario=None, seed=None):
        """获取一次运行的各产物路径"""
        run_dir = self.get_run_dir(scenario, seed)
        return {
            'run_dir': run_dir,
            'demo': os.path.join(run_dir, 'demo.jsonl'),
            'dataset': os.path.join(run_dir, 'dataset.jsonl'),
            'manifest': os.path.join(run_dir, 'manifest.json'),
            'fused': os.path.join(run_dir, 'fused.jsonl'),
            'sidecar': os.path.join(run_dir, 'fused.waypoints.json'),
            'policy': os.path.join(run_dir, 'policy.bin'),
            'loss_csv': os.path.join(run_dir, 'loss_curve.csv'),
            'calibration_csv': os.path.join(run_dir, 'calibration.csv'),
            'summary_dir': os.path.join(run_dir, 'summary'),
            'report_dir': os.path.join(run_dir, 'reports'),
            'comparison_csv': os.path.join(run_dir, 'reports', 'comparison.csv'),
            'traces_dir': os.path.join(run_dir, 'traces'),
            'state': os.path.join(run_dir, 'pipeline_state.json'),
        }

    def create_run_directories(self, scenario=None, seed=None):
        paths = self.get_run_paths(scenario, seed)
        for key in ('run_dir', 'summary_dir', 'report_dir', 'traces_dir'):
            os.makedirs(paths[key], exist_ok=True)
        return paths

    def save_config(self, config_file=None):
        """保存当前配置（原子写入）"""
        config_file = config_file or self.config_file
        if config_file:
            write_json(config_file, self.config)
        return config_file

    def config_hash(self):
        """影响结果的配置内容的哈希（不含 paths 段）"""
        return sha256_json({key: value for key, value in self.config.items()
                            if key not in HASH_EXCLUDED_SECTIONS})
