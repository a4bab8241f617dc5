#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
完整流程脚本：示教 -> (阈值标定) -> 采集 -> 融合 -> 训练 -> 评估

每个阶段的输出与其输入哈希一起记录在 pipeline_state.json 中，
再次运行时输入未变且输出文件完好的阶段会被跳过。
"""

import os
import sys
import argparse
from dataclasses import asdict

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core import Config, reset, save_demo, load_demo, calibrate_theta, collect, fuse, train, save_policy, load_policy
from core.config import env_verbosity
from core.records import read_json, write_json, sha256_file, sha256_json
from core.collector import build_manifest, save_dataset, load_dataset, save_manifest
from core.fusion import save_fused, load_fused
from core.policy import policy_summary
from core.deploy import save_trace
from core.harness import make_demo, evaluate, baseline_demo_replay, baseline_pose_replay
from utils import DataProcessor, ReportGenerator

STAGES = ('demo', 'calibrate', 'collect', 'fuse', 'train', 'eval')


def _bar(current, total, length=30):
    filled = int(length * current // total) if total else length
    return '█' * filled + '-' * (length - filled)


class DemoLoopProcessor:
    """单个 (场景, 种子) 的流程处理器"""

    def __init__(self, config_file=None, overrides=None, verbosity=None, force=False):
        """
        初始化处理器

        Args:
            config_file: 配置文件路径
            overrides: 覆盖配置（例如命令行给出的场景、种子、输出目录）
            verbosity: 0 安静，1 阶段横幅，2 逐项细节；None 时读取环境变量
            force: 忽略已有的阶段记录，全部重跑
        """
        self.config = Config(config_file, overrides)
        self.verbosity = env_verbosity() if verbosity is None else verbosity
        self.force = force
        self.scenario = self.config.get('scenario')
        self.seed = int(self.config.get('seed'))
        self.paths = self.config.create_run_directories()
        self.camera = self.config.camera_config()
        self.data_processor = DataProcessor()
        self.report_generator = ReportGenerator()
        self.state = self._load_state()

    # ------------------------------------------------------------------
    # 阶段记录
    # ------------------------------------------------------------------

    def _load_state(self):
        if self.force or not os.path.exists(self.paths['state']):
            return {'stages': {}}
        state = read_json(self.paths['state'])
        state.setdefault('stages', {})
        return state

    def _is_fresh(self, stage, inputs):
        """阶段输入哈希一致且记录的输出文件都存在、内容未变"""
        entry = self.state['stages'].get(stage)
        if not entry or entry.get('inputs') != inputs:
            return False
        for key, digest in entry.get('outputs', {}).items():
            path = self.paths[key]
            if not os.path.exists(path) or sha256_file(path) != digest:
                return False
        return True

    def _mark(self, stage, inputs, output_keys, extra=None):
        self.state['stages'][stage] = {
            'inputs': inputs,
            'outputs': {key: sha256_file(self.paths[key]) for key in output_keys},
            'extra': extra or {},
        }
        write_json(self.paths['state'], self.state)

    def _banner(self, title):
        if self.verbosity >= 1:
            print("\n" + "-" * 50)
            print(title)
            print("-" * 50)

    def _say(self, message):
        if self.verbosity >= 1:
            print(message)

    @property
    def detail(self):
        return self.verbosity >= 2

    # ------------------------------------------------------------------
    # 各阶段
    # ------------------------------------------------------------------

    def process_demo(self):
        """录制脚本示教"""
        self._banner("🎬 第一步：录制示教")
        settle_ticks = int(self.config.get('collector.settle_ticks'))
        inputs = sha256_json({'scenario': self.scenario, 'seed': self.seed,
                              'camera': asdict(self.camera), 'settle_ticks': settle_ticks})
        if self._is_fresh('demo', inputs):
            demo = load_demo(self.paths['demo'])
            self._say(f"⏭️ 示教未变化，直接加载: {self.paths['demo']}")
            return demo

        demo = make_demo(self.scenario, self.seed, self.camera, settle_ticks)
        save_demo(demo, self.paths['demo'])
        self._mark('demo', inputs, ['demo'])
        self._say(f"✅ 示教录制完成: {self.scenario}, N={demo.N}, 已保存到 {self.paths['demo']}")
        return demo

    def process_calibration(self):
        """
        标定扰动阈值 θ

        Returns:
            标定得到的 θ；配置未启用标定时返回 None
        """
        if not self.config.get('disturbance.use_calibrated'):
            return None
        self._banner("🎯 第二步：标定扰动阈值")
        settings = self.config.calibration_settings()
        extractor = self.config.extractor()
        inputs = sha256_json({'camera': asdict(self.camera), 'patch_size': extractor.patch_size, **settings})
        if self._is_fresh('calibrate', inputs):
            theta = float(self.state['stages']['calibrate']['extra']['theta'])
            self._say(f"⏭️ 沿用已有标定结果: θ = {theta:.4f}")
            return theta

        calibration = calibrate_theta(camera=self.camera, extractor=extractor, verbose=self.detail, **settings)
        self.data_processor.save_calibration(calibration, self.paths['calibration_csv'])
        if not calibration.separated:
            self._say(f"⚠️ 扰动与未扰动相似度存在重叠，θ 取最小未扰动相似度 {calibration.theta:.4f}")
        self._mark('calibrate', inputs, ['calibration_csv'],
                   {'theta': calibration.theta, 'margin': calibration.margin,
                    'separated': calibration.separated})
        self._say(f"✅ 标定完成: θ = {calibration.theta:.4f}（间隔 {calibration.margin:.4f}）")
        return calibration.theta

    def process_collect(self, demo, theta=None):
        """自监督采集增强轨迹"""
        self._banner("🤖 第三步：采集增强轨迹")
        collector_config = self.config.collector_config(theta)
        extractor = self.config.extractor()
        demo_hash = sha256_file(self.paths['demo'])
        inputs = sha256_json({'demo': demo_hash, 'collector': collector_config.to_dict(),
                              'camera': asdict(self.camera), 'patch_size': extractor.patch_size})
        if self._is_fresh('collect', inputs):
            result = load_dataset(self.paths['dataset'])
            self._say(f"⏭️ 数据集未变化，直接加载: {len(result.dataset)} 条轨迹, R={result.R}")
            return result

        total = demo.N * collector_config.Z

        def progress_callback(current, total_, k, valid):
            if self.verbosity != 1:
                return
            print(f"\r🔍 进度: [{_bar(current, total_)}] {current / total_ * 100:.1f}% | 路点 {k} | "
                  f"有效 {valid}/{collector_config.Z}", end="", flush=True)

        self._say(f"📊 示教长度 N={demo.N}, 每个路点 {collector_config.Z} 条，最多 {total} 条")
        world = reset(self.scenario, self.seed)
        result = collect(world, demo, collector_config, self.camera, extractor,
                         progress_callback=progress_callback, verbose=self.detail)
        if self.verbosity == 1:
            print()

        save_dataset(result, self.paths['dataset'], demo_hash)
        manifest = build_manifest(result, demo_hash, sha256_file(self.paths['dataset']))
        save_manifest(manifest, self.paths['manifest'])
        self._mark('collect', inputs, ['dataset', 'manifest'])

        self.data_processor.save_dataset_summary(result, self.paths['summary_dir'], demo_length=demo.N)
        if result.exhausted:
            self._say(f"⚠️ 以下路点的尝试次数已用完: {result.exhausted}")
        self._say(f"✅ 采集完成: {len(result.dataset)} 条轨迹, R={result.R}, 停止原因: {result.stop_reason}")
        return result

    def process_fuse(self, demo, result):
        """融合增强轨迹与示教片段"""
        self._banner("🧩 第四步：数据融合")
        demo_hash = sha256_file(self.paths['demo'])
        manifest_hash = sha256_file(self.paths['manifest'])
        inputs = sha256_json({'demo': demo_hash, 'dataset': sha256_file(self.paths['dataset']),
                              'manifest': manifest_hash})
        if self._is_fresh('fuse', inputs):
            fused = load_fused(self.paths['fused'], self.paths['sidecar'])
            self._say(f"⏭️ 融合数据未变化，直接加载: {len(fused)} 条序列")
            return fused

        fused = fuse(result, demo, demo_hash, manifest_hash)
        save_fused(fused, self.paths['fused'], self.paths['sidecar'])
        self._mark('fuse', inputs, ['fused', 'sidecar'])

        summary = self.data_processor.dataset_summary(result, fused, demo.N)
        self.data_processor.save_summary_json(summary, os.path.join(self.paths['summary_dir'],
                                                                    'dataset_summary.json'))
        if self.verbosity >= 1:
            self.data_processor.print_summary(summary)
        self._say(f"✅ 融合完成: {len(fused)} 条序列（含截断到 R={fused.R} 的示教）")
        return fused

    def process_train(self, fused):
        """训练策略"""
        self._banner("🧠 第五步：训练策略")
        train_config = self.config.train_config()
        network_config = self.config.network_config(fused.image_shape)
        inputs = sha256_json({'fused': sha256_file(self.paths['fused']), 'train': train_config.to_dict(),
                              'network': network_config.to_dict()})
        if self._is_fresh('train', inputs):
            policy = load_policy(self.paths['policy'])
            self._say(f"⏭️ 策略未变化，直接加载: {self.paths['policy']}")
            return policy

        def progress_callback(epoch, epochs, loss):
            if self.verbosity != 1:
                return
            print(f"\r📈 训练: [{_bar(epoch, epochs)}] 第 {epoch}/{epochs} 轮 | 损失 {loss:.5f}",
                  end="", flush=True)
            if epoch == epochs:
                print()

        policy = train(fused, train_config, network_config, verbose=self.detail,
                       progress_callback=progress_callback)
        save_policy(policy, self.paths['policy'])
        self.data_processor.save_loss_curve(policy.loss_curve, self.paths['loss_csv'])
        self._mark('train', inputs, ['policy', 'loss_csv'])
        self._say(f"✅ 训练完成: 最终损失 {policy.loss_curve[-1]:.5f}, 已保存到 {self.paths['policy']}")
        return policy

    def process_eval(self, policy, demo, result):
        """
        评估策略与基线

        Returns:
            评估结果汇总表 (DataFrame)
        """
        self._banner("📊 第六步：评估")
        spec = self.config.eval_spec()
        deploy_config = self.config.deploy_config()
        with_baselines = bool(self.config.get('eval.baselines'))
        residual = float(self.config.get('eval.pose_residual'))
        save_traces = bool(self.config.get('deploy.save_traces'))

        inputs = sha256_json({'policy': sha256_file(self.paths['policy']), 'demo': sha256_file(self.paths['demo']),
                              'dataset': sha256_file(self.paths['dataset']), 'eval': asdict(spec),
                              'deploy': deploy_config.to_dict(), 'baselines': with_baselines,
                              'residual': residual, 'save_traces': save_traces})
        if self._is_fresh('eval', inputs):
            self._say("⏭️ 评估结果未变化，直接读取")
            return self.report_generator.load_report_csv(self.paths['comparison_csv'])

        excel = bool(self.config.get('report.excel'))
        markdown = bool(self.config.get('report.markdown'))
        config_hash = self.config.config_hash()
        reports = [evaluate(policy, spec, deploy_config, self.camera, 'demoloop', config_hash,
                            keep_episodes=save_traces, verbose=self.detail)]
        if with_baselines:
            settle_ticks = deploy_config.settle_ticks
            reports.append(baseline_demo_replay(demo, spec, settle_ticks, verbose=self.detail))
            collector_config = self.config.collector_config()
            reports.append(baseline_pose_replay(result, demo, spec, residual, collector_config.step_trans,
                                                collector_config.step_rot, settle_ticks, self.camera,
                                                verbose=self.detail))
        for report in reports:
            report.config_hash = config_hash
            self.report_generator.save_report(report, self.paths['report_dir'], excel, markdown)
        self.report_generator.save_comparison(reports, self.paths['report_dir'], 'comparison', excel)

        if save_traces:
            for trial in reports[0].trials:
                path = os.path.join(self.paths['traces_dir'], f"trial-{trial.index:03d}.jsonl")
                save_trace(trial.episode, path, {'seed': trial.seed, 'method': reports[0].method})

        self._mark('eval', inputs, ['comparison_csv'])
        if self.verbosity >= 1:
            self.report_generator.print_report_summary(reports)
        return self.report_generator.summary_frame(reports)

    def process_all(self):
        """
        依次执行全部阶段

        Returns:
            Dict: 各阶段的结果
        """
        if self.verbosity >= 1:
            print("=" * 60)
            print(f"🚀 DemoLoop 流程: 场景 {self.scenario}, 种子 {self.seed}")
            print("=" * 60)

        self.config.save_config(os.path.join(self.paths['run_dir'], 'config.json'))
        demo = self.process_demo()
        theta = self.process_calibration()
        result = self.process_collect(demo, theta)
        fused = self.process_fuse(demo, result)
        policy = self.process_train(fused)
        summary = self.process_eval(policy, demo, result)

        pipeline_summary = {
            'scenario': self.scenario,
            'seed': self.seed,
            'config_hash': self.config.config_hash(),
            'theta': theta,
            'R': result.R,
            'N': result.N,
            'stop_reason': result.stop_reason,
            'n_trajectories': len(result.dataset),
            'n_sequences': len(fused),
            'policy': policy_summary(policy),
            'results': summary.to_dict(orient='records'),
        }
        self.data_processor.save_summary_json(pipeline_summary,
                                              os.path.join(self.paths['summary_dir'], 'pipeline_summary.json'))

        if self.verbosity >= 1:
            print("\n" + "=" * 60)
            print("🎉 所有处理步骤完成！")
            print("=" * 60)
            print(f"📁 结果已保存到: {self.paths['run_dir']}")

        return {
            'demo': demo,
            'theta': theta,
            'result': result,
            'fused': fused,
            'policy': policy,
            'summary': summary,
        }

    def get_run_status(self):
        """各阶段是否已完成"""
        stages = self.state['stages']
        return {
            'scenario': self.scenario,
            'seed': self.seed,
            'run_dir': self.paths['run_dir'],
            'stages': {stage: stage in stages for stage in STAGES},
        }


def main():
    """主函数"""
    parser = argparse.ArgumentParser(description='DemoLoop 完整流程')
    parser.add_argument('--config', help='配置文件路径')
    parser.add_argument('--scenario', help='场景ID')
    parser.add_argument('--seed', type=int, help='随机种子')
    parser.add_argument('--out', help='输出目录')
    parser.add_argument('--force', action='store_true', help='忽略已有结果，全部重跑')
    parser.add_argument('--status', action='store_true', help='查看运行状态')
    args = parser.parse_args()

    overrides = {}
    if args.scenario:
        overrides['scenario'] = args.scenario
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.out:
        overrides['paths'] = {'output_dir': args.out}

    processor = DemoLoopProcessor(args.config, overrides, force=args.force)

    if args.status:
        status = processor.get_run_status()
        print(f"场景: {status['scenario']}, 种子: {status['seed']}")
        print(f"运行目录: {status['run_dir']}")
        for stage, done in status['stages'].items():
            print(f"  {stage:<10} {'已完成' if done else '未完成'}")
        return

    processor.process_all()


if __name__ == '__main__':
    main()
