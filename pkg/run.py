#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
DemoLoop - 单示教自监督数据增强与行为克隆
命令行入口脚本

退出码: 0 成功，2 配置错误，3 输入文件校验错误，4 运行失败
"""

import os
import sys
import argparse
from dataclasses import replace

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core import (
    Config, ConfigError, ValidationError, DemoLoopError, UnknownScenarioError,
    load_scenario, reset, save_demo, load_demo, calibrate_theta, collect, fuse, train,
    save_policy, load_policy,
)
from core.config import env_verbosity
from core.records import sha256_file
from core.collector import build_manifest, save_dataset, load_dataset, save_manifest
from core.fusion import save_fused, load_fused
from core.harness import make_demo, evaluate, expand_ablation_modes, run_ablation_grid
from scripts.run_pipeline import DemoLoopProcessor
from utils import DataProcessor, ReportGenerator

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

DEFAULT_CONFIG_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config.json')


class DemoLoopApp:
    """DemoLoop应用程序主类"""

    def __init__(self, args):
        """
        初始化应用程序

        Args:
            args: argparse 解析结果
        """
        self.args = args
        self.verbosity = env_verbosity()
        self.config = self.load_config()
        self.data_processor = DataProcessor()
        self.report_generator = ReportGenerator()
        if self.verbosity >= 1:
            print("\n✨ DemoLoop - 单示教自监督数据增强 ✨")
            print("=" * 50)

    def load_config(self):
        """加载配置文件并应用命令行覆盖；场景ID无效也按配置错误处理"""
        config_file = self.args.config
        if config_file is None and os.path.exists(DEFAULT_CONFIG_FILE):
            config_file = DEFAULT_CONFIG_FILE
        config = Config(config_file, self.overrides())
        try:
            load_scenario(config.get('scenario'))
        except UnknownScenarioError as e:
            raise ConfigError(str(e), 'scenario') from e
        return config

    def overrides(self):
        overrides = {}
        if getattr(self.args, 'scenario', None):
            overrides['scenario'] = self.args.scenario
        if getattr(self.args, 'seed', None) is not None:
            overrides['seed'] = self.args.seed
        if getattr(self.args, 'out', None):
            overrides['paths'] = {'output_dir': self.args.out}
        return overrides

    @property
    def detail(self):
        return self.verbosity >= 2

    def _say(self, message):
        if self.verbosity >= 1:
            print(message)

    # ------------------------------------------------------------------
    # 子命令
    # ------------------------------------------------------------------

    def cmd_demo(self):
        """录制并保存脚本示教"""
        paths = self.config.create_run_directories()
        scenario = self.config.get('scenario')
        demo = make_demo(scenario, int(self.config.get('seed')), self.config.camera_config(),
                         int(self.config.get('collector.settle_ticks')))
        save_demo(demo, paths['demo'])
        self._say(f"✅ 示教已保存: {paths['demo']}（{scenario}, N={demo.N}）")
        return paths['demo']

    def cmd_collect(self):
        """运行采集，写出数据集和采集清单"""
        paths = self.config.create_run_directories()
        demo_path = self.args.demo or paths['demo']
        demo = load_demo(demo_path)
        demo_hash = sha256_file(demo_path)
        collector_config = self.config.collector_config(self.args.theta)

        world = reset(demo.scenario_id, demo.seed)
        result = collect(world, demo, collector_config, self.config.camera_config(), self.config.extractor(),
                         verbose=self.verbosity >= 1)
        save_dataset(result, paths['dataset'], demo_hash)
        save_manifest(build_manifest(result, demo_hash, sha256_file(paths['dataset'])), paths['manifest'])
        self.data_processor.save_dataset_summary(result, paths['summary_dir'], demo_length=demo.N)
        self._say(f"✅ 采集完成: {len(result.dataset)} 条轨迹, R={result.R}, 停止原因: {result.stop_reason}")
        self._say(f"📁 数据集: {paths['dataset']}")
        return paths['dataset']

    def cmd_fuse(self):
        """融合数据集与示教"""
        paths = self.config.create_run_directories()
        demo_path = self.args.demo or paths['demo']
        dataset_path = self.args.dataset or paths['dataset']
        manifest_path = os.path.join(os.path.dirname(os.path.abspath(dataset_path)), 'manifest.json')
        manifest_hash = sha256_file(manifest_path) if os.path.exists(manifest_path) else None

        demo = load_demo(demo_path)
        result = load_dataset(dataset_path)
        fused = fuse(result, demo, sha256_file(demo_path), manifest_hash)
        save_fused(fused, paths['fused'], paths['sidecar'])
        self._say(f"✅ 融合完成: {len(fused)} 条序列, R={fused.R}, 已保存到 {paths['fused']}")
        return paths['fused']

    def cmd_train(self):
        """训练策略，写出策略文件和损失曲线"""
        paths = self.config.create_run_directories()
        fused = load_fused(self.args.fused or paths['fused'])
        policy = train(fused, self.config.train_config(), self.config.network_config(fused.image_shape),
                       verbose=self.verbosity >= 1)
        save_policy(policy, paths['policy'])
        self.data_processor.save_loss_curve(policy.loss_curve, paths['loss_csv'])
        self._say(f"✅ 策略已保存: {paths['policy']}")
        return paths['policy']

    def cmd_eval(self):
        """评估策略文件"""
        paths = self.config.create_run_directories()
        policy = load_policy(self.args.policy or paths['policy'])
        spec = self.config.eval_spec()
        if policy.scenario_id:
            spec = replace(spec, scenario=policy.scenario_id)
        report = evaluate(policy, spec, self.config.deploy_config(), self.config.camera_config(),
                          config_hash=self.config.config_hash(), verbose=self.detail)
        files = self.report_generator.save_report(report, paths['report_dir'],
                                                  bool(self.config.get('report.excel')),
                                                  bool(self.config.get('report.markdown')))
        if self.verbosity >= 1:
            self.report_generator.print_report_summary([report])
        self._say(f"📁 报告: {files['csv']}")
        return report

    def cmd_calibrate(self):
        """标定扰动阈值"""
        paths = self.config.create_run_directories()
        calibration = calibrate_theta(camera=self.config.camera_config(), extractor=self.config.extractor(),
                                      verbose=self.verbosity >= 1, **self.config.calibration_settings())
        self.data_processor.save_calibration(calibration, paths['calibration_csv'])
        self._say(f"📁 标定表: {paths['calibration_csv']}")
        return calibration

    def cmd_ablate(self):
        """运行消融网格，写出对比表"""
        if self.args.mode:
            modes = [self.args.mode]
        else:
            modes = expand_ablation_modes(self.config.get('ablation.modes'), self.config.get('ablation.fractions'))
        scenarios = self.config.get('ablation.scenarios')
        seeds = self.config.get('ablation.seeds')
        if self.args.scenario:
            scenarios = [self.args.scenario]
        if self.args.seed is not None:
            seeds = [self.args.seed]

        def progress_callback(done, total, report):
            if self.verbosity != 1:
                return
            filled = int(30 * done // total)
            print(f"\r🔬 消融: [{'█' * filled}{'-' * (30 - filled)}] {done}/{total} | "
                  f"{report.method} @ {report.scenario}: {report.rate * 100:.0f}%", end="", flush=True)
            if done == total:
                print()

        reports = run_ablation_grid(modes, self.config.run_config(), scenarios, seeds, verbose=self.detail,
                                    progress_callback=progress_callback)
        output_dir = os.path.join(self.config.get('paths.output_dir'), 'ablation')
        files = self.report_generator.save_comparison(reports, output_dir, 'ablation',
                                                      bool(self.config.get('report.excel')))
        if self.verbosity >= 1:
            self.report_generator.print_report_summary(reports)
        self._say(f"📁 消融对比表: {files['markdown']}")
        return reports

    def cmd_pipeline(self):
        """完整流程"""
        processor = DemoLoopProcessor(overrides=self.config.config, verbosity=self.verbosity,
                                      force=self.args.force)
        return processor.process_all()

    def run(self):
        """执行子命令，返回退出码"""
        handler = getattr(self, f"cmd_{self.args.command}")
        handler()
        return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='配置文件路径（默认使用项目根目录的 config.json）')
    common.add_argument('--scenario', help='场景ID')
    common.add_argument('--seed', type=int, help='随机种子')
    common.add_argument('--out', help='输出目录')

    parser = argparse.ArgumentParser(description='DemoLoop 命令行工具')
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('demo', parents=[common], help='录制脚本示教')

    p = sub.add_parser('collect', parents=[common], help='自监督采集增强轨迹')
    p.add_argument('--demo', help='示教文件路径')
    p.add_argument('--theta', type=float, help='扰动阈值（覆盖配置）')

    p = sub.add_parser('fuse', parents=[common], help='融合数据')
    p.add_argument('--demo', help='示教文件路径')
    p.add_argument('--dataset', help='增强数据集路径')

    p = sub.add_parser('train', parents=[common], help='训练策略')
    p.add_argument('--fused', help='融合数据路径')

    p = sub.add_parser('eval', parents=[common], help='评估策略')
    p.add_argument('--policy', help='策略文件路径')

    sub.add_parser('calibrate', parents=[common], help='标定扰动阈值')

    p = sub.add_parser('ablate', parents=[common], help='消融实验')
    p.add_argument('--mode', help="消融模式，例如 no-sequence 或 'data-fraction(0.5)'；默认跑配置中的全部模式")

    p = sub.add_parser('pipeline', parents=[common], help='完整流程（可断点续跑）')
    p.add_argument('--force', action='store_true', help='忽略已有结果，全部重跑')

    return parser


def main(argv=None):
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        return DemoLoopApp(args).run()
    except ConfigError as e:
        print(f"❌ 配置错误: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as e:
        print(f"❌ 输入文件无效: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DemoLoopError as e:
        print(f"❌ 运行失败: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("\n\n👋 用户中断操作", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        print(f"❌ 发生错误: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
