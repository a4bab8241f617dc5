#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
评估与消融实验模块

- evaluate: 在随机化的起始条件下多次部署策略，统计成功率
- baseline_demo_replay: 直接重放示教动作
- baseline_pose_replay: 用图像最近邻估计起始偏移，移动到示教起点后重放整条示教
- run_ablation: 按消融模式重新采集/训练并评估
"""

import re
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError
from .geometry import Pose, compose, inverse, relative, clip_delta
from .scenarios import RandomizationSpec, load_scenario
from .simenv import reset, drive_to, is_success
from .demo import Action, observe, record_demo, replay_actions
from .collector import collect
from .fusion import fuse, relabel_nearest_waypoint, subsample
from .policy import train
from .deploy import DeployConfig, EpisodeResult, deploy

ABLATION_MODES = ('full', 'no-sequence', 'no-disturbance', 'no-reachability', 'no-memory', 'data-fraction',
                  'vision-only', 'force-only')
# 输入模态消融：未使用分支的嵌入置零
MODALITY_ABLATIONS = {'vision-only': 'vision', 'force-only': 'force'}
DATA_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class EvalSpec:
    """评估设置：试验次数与起始随机化范围"""

    scenario: str = 'reach'
    trials: int = 20
    trans_range: float = 0.04
    rot_range: float = math.radians(4.0)
    shape: str = 'box'
    seed_base: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"试验次数必须 ≥ 1: {self.trials}", 'eval.trials')
        if self.workers < 1:
            raise ConfigError(f"并行数必须 ≥ 1: {self.workers}", 'eval.workers')

    @property
    def randomization(self):
        return RandomizationSpec(self.trans_range, self.rot_range, self.shape)

    def trial_seed(self, index):
        return self.seed_base + index


@dataclass
class TrialResult:
    index: int
    seed: int
    success: bool
    ticks: int = 0
    switched_by: str = 'n/a'
    episode: Optional[EpisodeResult] = None


@dataclass
class Report:
    """一种方法在一个场景上的评估结果"""

    method: str
    scenario: str
    trials: List[TrialResult]
    config_hash: str = ''
    extra: Dict = field(default_factory=dict)

    @property
    def n_trials(self):
        return len(self.trials)

    @property
    def successes(self):
        return sum(1 for t in self.trials if t.success)

    @property
    def rate(self):
        return self.successes / self.n_trials if self.trials else 0.0

    @property
    def mean_ticks(self):
        return float(np.mean([t.ticks for t in self.trials])) if self.trials else 0.0

    def to_row(self):
        return {
            'method': self.method,
            'scenario': self.scenario,
            'trials': self.n_trials,
            'successes': self.successes,
            'rate': self.rate,
            'mean_ticks': self.mean_ticks,
            'config_hash': self.config_hash,
        }


# ---------------------------------------------------------------------------
# 对照控制器
# ---------------------------------------------------------------------------

class ImageIndex:
    """图像 L2 最近邻索引"""

    def __init__(self, images, labels):
        if len(images) == 0:
            raise ValueError("最近邻索引不能为空")
        self.images = np.stack([np.asarray(img, dtype=np.float32).ravel() for img in images])
        self.labels = list(labels)

    def distances(self, image):
        query = np.asarray(image, dtype=np.float32).ravel()
        return np.sum((self.images - query) ** 2, axis=1)

    def nearest_index(self, image, allowed=None):
        """最近条目的下标；allowed 为布尔掩码时只在其为真的条目中找"""
        distances = self.distances(image)
        if allowed is not None:
            distances = np.where(allowed, distances, np.inf)
        return int(np.argmin(distances))

    def nearest(self, image):
        return self.labels[self.nearest_index(image)]


def frame_phases(sequence, R):
    """
    融合序列每一帧的动作所指向的示教路点序号

    增强段的帧指向 w_k；示教片段第 n 帧的动作 a_n 指向 w_{n+1}；末尾保持帧指向 w_R。
    """
    start = sequence.k if sequence.k is not None else 1
    segment = [min(n + 1, R) for n in range(start, R + 1)]
    n_aug = max(0, len(sequence) - len(segment))
    return [start] * n_aug + segment[:len(sequence) - n_aug]


NO_RESET = 2 ** 31 - 1


class NearestNeighborPolicy:
    """
    查表策略：输出最近数据集观测所记录的动作

    monotone 为真时带一个整数记忆：已到达的示教阶段（匹配帧所指向路点序号的最大值）。
    每步只在阶段不低于记忆的帧中查找，因此不会被返回较早路点的增强帧拉回去；
    记忆不随部署的隐状态重置而清零。monotone 为假时是无记忆的逐帧查表。
    """

    def __init__(self, fused, monotone=True):
        images, actions, phases = [], [], []
        for seq in fused.sequences:
            images.extend(obs.image for obs in seq.observations)
            actions.extend(seq.actions)
            phases.extend(frame_phases(seq, fused.R))
        self.index = ImageIndex(images, actions)
        self.phases = np.asarray(phases, dtype=np.int64)
        self.monotone = monotone
        self.zeta_remaining = list(fused.zeta_remaining)
        self.R = fused.R
        self.N = fused.N
        self.hidden_reset_interval = NO_RESET if monotone else 2 * max(fused.collected_waypoints, 1)

    def initial_state(self):
        return 0

    def act(self, observation, h):
        if not self.monotone:
            return self.index.nearest(observation.image), h
        i = self.index.nearest_index(observation.image, self.phases >= h)
        return self.index.labels[i], max(h, int(self.phases[i]))


class OracleController:
    """
    特权控制器：直接读取世界中锚点物体的位姿，把末端送到示教终点的对应位置

    只用于评估流程的上界检查。
    """

    def __init__(self, demo, anchor=None, max_step_trans=0.01, max_step_rot=math.radians(5.0)):
        scenario = load_scenario(demo.scenario_id)
        anchor = anchor or scenario.success.get('object')
        nominal = next(o for o in scenario.objects if o.name == anchor)
        self.anchor = anchor
        self.nominal = nominal.pose
        self.final = demo.waypoint(demo.N)
        self.max_step_trans = max_step_trans
        self.max_step_rot = max_step_rot
        self.zeta_remaining = []
        self.R = self.N = demo.N
        self.hidden_reset_interval = 2 * demo.N
        self._goal = self.final
        self._pose = None

    def observe_world(self, world):
        shift = compose(world.object_named(self.anchor).pose, inverse(self.nominal))
        self._goal = compose(shift, self.final)
        self._pose = world.ee_pose

    def initial_state(self):
        return None

    def act(self, observation, h):
        if self._pose is None:
            return Action.hold(), h
        delta = clip_delta(relative(self._pose, self._goal), self.max_step_trans, self.max_step_rot)
        return Action(delta, 0), h


# ---------------------------------------------------------------------------
# 评估
# ---------------------------------------------------------------------------

def _policy_trial(args):
    pi, spec, index, deploy_cfg, camera, keep = args
    seed = spec.trial_seed(index)
    world = reset(spec.scenario, seed, spec.randomization)
    episode = deploy(pi, world, deploy_cfg, camera)
    return TrialResult(index, seed, episode.success, episode.ticks_closed_loop, episode.switched_by,
                       episode if keep else None)


def _run_trials(fn, payloads, workers, progress_callback=None):
    results = []

    def collect_result(trial):
        results.append(trial)
        if progress_callback is not None:
            progress_callback(len(results), len(payloads), trial.success)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for trial in pool.map(fn, payloads):
                collect_result(trial)
    else:
        for p in payloads:
            collect_result(fn(p))
    return sorted(results, key=lambda t: t.index)


def evaluate(pi, spec, deploy_cfg=None, camera=None, method='demoloop', config_hash='',
             keep_episodes=False, verbose=False, progress_callback=None):
    """
    在 spec.trials 个随机起始条件下部署策略

    keep_episodes 为真时每个 TrialResult 附带完整回合记录（用于保存逐拍轨迹）；
    progress_callback(已完成, 总数, 本次是否成功) 在每次试验结束后调用

    Returns:
        Report
    """
    deploy_cfg = deploy_cfg or DeployConfig()
    payloads = [(pi, spec, i, deploy_cfg, camera, keep_episodes) for i in range(spec.trials)]
    trials = _run_trials(_policy_trial, payloads, spec.workers, progress_callback)
    report = Report(method, spec.scenario, trials, config_hash)
    if verbose:
        print(f"📈 {method} @ {spec.scenario}: {report.successes}/{report.n_trials} "
              f"({report.rate * 100:.1f}%)")
    return report


def _demo_replay_trial(args):
    demo, spec, index, settle_ticks = args
    seed = spec.trial_seed(index)
    world = reset(spec.scenario, seed, spec.randomization)
    world, _ = replay_actions(world, demo.actions[:-1], settle_ticks)
    return TrialResult(index, seed, is_success(world), demo.N - 1, 'n/a')


def baseline_demo_replay(demo, spec, settle_ticks=4, verbose=False):
    """从每个随机化起点直接重放 a_1..a_N"""
    payloads = [(demo, spec, i, settle_ticks) for i in range(spec.trials)]
    report = Report('demo-replay', spec.scenario, _run_trials(_demo_replay_trial, payloads, spec.workers))
    if verbose:
        print(f"📈 示教重放 @ {spec.scenario}: {report.successes}/{report.n_trials}")
    return report


def pose_index(result, demo):
    """数据集观测 -> 相对示教起点的位姿标签（在观测时末端坐标系下）"""
    home = demo.waypoint(1)
    images, labels = [], []
    for n in range(1, demo.N + 1):
        images.append(demo.observation(n).image)
        labels.append(relative(demo.waypoint(n), home))
    for traj in result.dataset:
        for s in traj.steps:
            images.append(s.obs.image)
            labels.append(relative(s.waypoint, home))
    return ImageIndex(images, labels)


def _pose_replay_trial(args):
    index_, demo, spec, index, residual, step_trans, step_rot, settle_ticks, camera = args
    seed = spec.trial_seed(index)
    world = reset(spec.scenario, seed, spec.randomization)
    estimate = index_.nearest(observe(world, camera).image)
    if residual:
        estimate = compose(estimate, Pose(residual, 0.0, 0.0))
    goal = compose(world.ee_pose, estimate)
    world, _ = drive_to(world, goal, step_trans, step_rot, settle_ticks)
    world, _ = replay_actions(world, demo.actions[:-1], settle_ticks)
    return TrialResult(index, seed, is_success(world), demo.N - 1, 'n/a')


def baseline_pose_replay(result, demo, spec, residual=0.0, step_trans=0.008,
                         step_rot=math.radians(2.0), settle_ticks=4, camera=None, verbose=False):
    """
    位姿估计 + 重放基线

    用同一份增强数据建立图像最近邻索引，估计当前相对示教起点的偏移，
    移动过去后重放整条示教。residual 为人为注入的估计误差（米，沿末端 x 轴）。
    """
    index_ = pose_index(result, demo)
    payloads = [(index_, demo, spec, i, residual, step_trans, step_rot, settle_ticks, camera)
                for i in range(spec.trials)]
    report = Report('pose-replay', spec.scenario, _run_trials(_pose_replay_trial, payloads, spec.workers),
                    extra={'residual': residual})
    if verbose:
        print(f"📈 位姿估计重放 @ {spec.scenario}: {report.successes}/{report.n_trials}")
    return report


# ---------------------------------------------------------------------------
# 消融
# ---------------------------------------------------------------------------

def parse_ablation_mode(mode, fraction=None):
    """
    解析消融模式，支持 'data-fraction(0.5)' 写法

    Returns:
        (模式名, 数据比例)
    """
    match = re.fullmatch(r'data-fraction\(([0-9.]+)\)', mode.strip())
    if match:
        mode, fraction = 'data-fraction', float(match.group(1))
    if mode not in ABLATION_MODES:
        raise ConfigError(f"未知消融模式: {mode}（可选: {', '.join(ABLATION_MODES)}）", 'ablation.mode')
    if mode == 'data-fraction':
        if fraction is None or not any(abs(fraction - f) < 1e-9 for f in DATA_FRACTIONS):
            raise ConfigError(f"数据比例必须是 {DATA_FRACTIONS} 之一: {fraction}", 'ablation.fraction')
    else:
        fraction = 1.0
    return mode, fraction


def apply_ablation(run, mode):
    """按消融模式修改运行配置"""
    if mode == 'no-sequence':
        return replace(run, collector=replace(run.collector, sequential=False))
    if mode == 'no-disturbance':
        return replace(run, collector=replace(run.collector, check_disturbance=False))
    if mode == 'no-reachability':
        return replace(run, collector=replace(run.collector, check_reachability=False))
    if mode == 'no-memory':
        return replace(run, network=replace(run.network, recurrent=False))
    if mode in MODALITY_ABLATIONS:
        return replace(run, network=replace(run.network, modalities=MODALITY_ABLATIONS[mode]))
    return run


def make_demo(scenario_id, seed=0, camera=None, settle_ticks=4):
    world = reset(scenario_id, seed)
    return record_demo(world, load_scenario(scenario_id).script, camera, settle_ticks)


def run_ablation(mode, run, fraction=None, verbose=False):
    """
    以给定消融模式跑完整流程（示教 -> 采集 -> 融合 -> 训练 -> 评估）

    Args:
        mode: 消融模式名，或 'data-fraction(f)'
        run: RunConfig

    Returns:
        Report
    """
    mode, fraction = parse_ablation_mode(mode, fraction)
    settings = apply_ablation(run, mode)
    if verbose:
        print(f"\n🔬 消融实验: {mode}" + (f" ({fraction})" if mode == 'data-fraction' else '')
              + f" @ {settings.scenario}, seed={settings.seed}")

    demo = make_demo(settings.scenario, settings.seed, settings.camera, settings.collector.settle_ticks)
    world = reset(settings.scenario, settings.seed)
    result = collect(world, demo, settings.collector, settings.camera, verbose=verbose)
    if mode == 'no-reachability':
        fused = relabel_nearest_waypoint(result, demo, world.physics.max_step_trans, world.physics.max_step_rot)
    else:
        fused = fuse(result, demo)
    fused = subsample(fused, fraction, settings.seed)
    policy = train(fused, settings.train, settings.network, verbose=verbose)

    label = mode if mode != 'data-fraction' else f"data-fraction({fraction})"
    spec = replace(settings.eval, scenario=settings.scenario)
    report = evaluate(policy, spec, settings.deploy, settings.camera, method=label,
                      config_hash=settings.config_hash(mode=label), verbose=verbose)
    report.extra.update({'R': result.R, 'stop_reason': result.stop_reason,
                         'n_trajectories': len(result.dataset), 'n_sequences': len(fused),
                         'seed': settings.seed, 'fraction': fraction})
    return report


def expand_ablation_modes(modes, fractions=()):
    """模式列表中的 'data-fraction' 展开为每个比例一项"""
    expanded = []
    for mode in modes:
        if mode == 'data-fraction':
            expanded.extend(f"data-fraction({f})" for f in fractions)
        else:
            expanded.append(mode)
    return expanded


def run_ablation_grid(modes, run, scenarios=None, seeds=None, verbose=False, progress_callback=None):
    """
    在 场景 x 种子 x 模式 网格上运行消融，返回 Report 列表

    progress_callback(已完成, 总数, report) 在每个格点结束后调用
    """
    scenarios = scenarios or [run.scenario]
    seeds = seeds or [run.seed]
    total = len(scenarios) * len(seeds) * len(modes)
    reports = []
    for scenario in scenarios:
        for seed in seeds:
            for mode in modes:
                reports.append(run_ablation(mode, replace(run, scenario=scenario, seed=seed), verbose=verbose))
                if progress_callback is not None:
                    progress_callback(len(reports), total, reports[-1])
    return reports
