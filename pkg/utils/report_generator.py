#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
报告生成器工具
"""

import os
import json
from typing import Dict, List

import pandas as pd

from core.records import atomic_write_text

REPORT_COLUMNS = ['method', 'scenario', 'trials', 'successes', 'rate', 'mean_ticks', 'config_hash']


def markdown_table(df: pd.DataFrame, float_format='{:.2f}') -> str:
    """DataFrame -> markdown 表格"""
    def fmt(value):
        if isinstance(value, float):
            return float_format.format(value)
        return str(value)

    lines = ['| ' + ' | '.join(str(c) for c in df.columns) + ' |',
             '|' + '|'.join(' --- ' for _ in df.columns) + '|']
    for record in df.itertuples(index=False):
        lines.append('| ' + ' | '.join(fmt(v) for v in record) + ' |')
    return '\n'.join(lines) + '\n'


class ReportGenerator:
    """报告生成器类，负责生成和保存评估报告"""

    def trials_frame(self, report) -> pd.DataFrame:
        return pd.DataFrame([{
            'method': report.method,
            'scenario': report.scenario,
            'trial': t.index,
            'seed': t.seed,
            'success': bool(t.success),
            'ticks': t.ticks,
            'switched_by': t.switched_by,
        } for t in report.trials])

    def summary_frame(self, reports) -> pd.DataFrame:
        return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)

    def save_report(self, report, output_dir: str, excel=True, markdown=True) -> Dict[str, str]:
        """
        保存单个评估报告

        Args:
            report: harness.Report
            output_dir: 输出目录

        Returns:
            Dict: 生成的文件路径
        """
        os.makedirs(output_dir, exist_ok=True)
        name = f"{report.scenario}_{report.method}".replace('(', '_').replace(')', '')
        files = {}

        trials_csv = os.path.join(output_dir, f"{name}_trials.csv")
        atomic_write_text(trials_csv, self.trials_frame(report).to_csv(index=False))
        files['trials_csv'] = trials_csv

        summary = self.summary_frame([report])
        summary_csv = os.path.join(output_dir, f"{name}.csv")
        atomic_write_text(summary_csv, summary.to_csv(index=False))
        files['csv'] = summary_csv

        summary_json = os.path.join(output_dir, f"{name}.json")
        payload = {**report.to_row(), 'extra': report.extra}
        atomic_write_text(summary_json, json.dumps(payload, ensure_ascii=False, indent=2) + '\n')
        files['json'] = summary_json

        if markdown:
            md_path = os.path.join(output_dir, f"{name}.md")
            atomic_write_text(md_path, markdown_table(summary.drop(columns=['config_hash'])))
            files['markdown'] = md_path

        if excel:
            excel_path = os.path.join(output_dir, f"{name}.xlsx")
            with pd.ExcelWriter(excel_path, engine='openpyxl') as writer:
                summary.to_excel(writer, sheet_name='统计摘要', index=False)
                self.trials_frame(report).to_excel(writer, sheet_name='逐次试验', index=False)
            files['excel'] = excel_path

        return files

    def comparison_table(self, reports) -> pd.DataFrame:
        """
        方法 x 场景 的成功率表（多个种子取平均）

        Returns:
            DataFrame，行为方法，列为场景
        """
        frame = self.summary_frame(reports)
        grouped = frame.groupby(['method', 'scenario'], sort=False)['rate'].mean().reset_index()
        table = grouped.pivot(index='method', columns='scenario', values='rate')
        methods = list(dict.fromkeys(frame['method']))
        return table.reindex(methods).reset_index()

    def save_comparison(self, reports, output_dir: str, name='comparison', excel=True) -> Dict[str, str]:
        """保存多方法对比：逐行 CSV + 按种子平均的 markdown 表"""
        os.makedirs(output_dir, exist_ok=True)
        files = {}
        rows_csv = os.path.join(output_dir, f"{name}.csv")
        atomic_write_text(rows_csv, self.summary_frame(reports).to_csv(index=False))
        files['csv'] = rows_csv

        table = self.comparison_table(reports)
        md_path = os.path.join(output_dir, f"{name}.md")
        atomic_write_text(md_path, markdown_table(table))
        files['markdown'] = md_path

        if excel:
            excel_path = os.path.join(output_dir, f"{name}.xlsx")
            with pd.ExcelWriter(excel_path, engine='openpyxl') as writer:
                table.to_excel(writer, sheet_name='成功率', index=False)
                self.summary_frame(reports).to_excel(writer, sheet_name='明细', index=False)
            files['excel'] = excel_path
        return files

    def load_report_csv(self, path: str) -> pd.DataFrame:
        return pd.read_csv(path)

    def print_report_summary(self, reports: List):
        """
        打印评估结果

        Args:
            reports: Report 列表
        """
        print("\n=== 评估结果 ===")
        for r in reports:
            print(f"📊 {r.method:<24} {r.scenario:<12} {r.successes:>3}/{r.n_trials:<3} "
                  f"成功率 {r.rate * 100:5.1f}%  平均闭环拍数 {r.mean_ticks:.1f}")
