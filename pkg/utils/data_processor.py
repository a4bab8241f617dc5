#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据处理工具

采集结果、融合数据、训练曲线和阈值标定结果的统计与导出（CSV / JSON / Excel）。
"""

import os
import json

import numpy as np
import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Font, Alignment, PatternFill

from core.records import atomic_write_text

HEADER_FILL = PatternFill(start_color='B0C4DE', end_color='B0C4DE', fill_type='solid')


class DataProcessor:
    """数据处理工具类"""

    def waypoint_frame(self, result):
        """
        每个示教路点的采集统计

        Args:
            result: CollectionResult

        Returns:
            DataFrame，每行一个路点
        """
        rows = []
        for k in range(1, result.N + 1):
            trajs = [t for t in result.dataset if t.k == k]
            stats = result.waypoint_stats.get(k, {})
            rows.append({
                'k': k,
                'valid': len(trajs),
                'unreachable': stats.get('unreachable', 0),
                'timed_out': stats.get('timed_out', 0),
                'attempts': stats.get('attempts', 0),
                'mean_length': float(np.mean([t.M for t in trajs])) if trajs else 0.0,
                'min_similarity': min((t.similarity for t in trajs), default=np.nan),
                'peak_force': max((t.peak_force for t in trajs), default=0.0),
                'collected': k <= result.R and bool(trajs),
            })
        return pd.DataFrame(rows)

    def action_statistics(self, fused):
        """融合数据中动作各分量的均值和标准差"""
        deltas = np.asarray([a.delta.to_list() for s in fused.sequences for a in s.actions])
        gripper = np.asarray([a.gripper for s in fused.sequences for a in s.actions])
        stats = {}
        for i, name in enumerate(('dx', 'dy', 'dtheta')):
            stats[name] = {'mean': float(deltas[:, i].mean()), 'std': float(deltas[:, i].std()),
                           'abs_max': float(np.abs(deltas[:, i]).max())}
        stats['gripper_closed_ratio'] = float(gripper.mean())
        return stats

    def dataset_summary(self, result, fused=None, demo_length=None):
        """
        生成数据集摘要

        Args:
            result: CollectionResult
            fused: 可选 FusedDataset
            demo_length: 示教长度 N（默认取 result.N）
        """
        summary = {
            'scenario': result.scenario_id,
            'seed': result.seed,
            'demo_length': demo_length or result.N,
            'R': result.R,
            'stop_reason': result.stop_reason,
            'n_trajectories': len(result.dataset),
            'collected_waypoints': result.collected_waypoints,
            'exhausted_waypoints': list(result.exhausted),
            'mean_trajectory_length': float(np.mean([t.M for t in result.dataset])) if result.dataset else 0.0,
        }
        if fused is not None:
            lengths = [len(s) for s in fused.sequences]
            summary.update({
                'n_sequences': len(fused),
                'sequence_length': {'min': int(min(lengths)), 'max': int(max(lengths)),
                                    'mean': float(np.mean(lengths))},
                'actions': self.action_statistics(fused),
            })
        return summary

    def save_dataset_summary(self, result, output_dir, fused=None, demo_length=None):
        """保存每路点统计 CSV、摘要 JSON 和 Excel 工作簿"""
        os.makedirs(output_dir, exist_ok=True)
        frame = self.waypoint_frame(result)
        summary = self.dataset_summary(result, fused, demo_length)

        csv_path = os.path.join(output_dir, 'waypoints.csv')
        frame.to_csv(csv_path, index=False, encoding='utf-8-sig')
        json_path = os.path.join(output_dir, 'dataset_summary.json')
        self.save_summary_json(summary, json_path)
        excel_path = os.path.join(output_dir, 'dataset_summary.xlsx')
        self.create_collection_excel(frame, summary, excel_path)
        return {'csv': csv_path, 'json': json_path, 'excel': excel_path}

    def create_collection_excel(self, frame, summary, output_file):
        """
        创建采集结果 Excel 文件

        Args:
            frame: waypoint_frame 的输出
            summary: dataset_summary 的输出
            output_file: 输出文件路径
        """
        wb = Workbook()
        wb.remove(wb.active)

        ws = wb.create_sheet("路点统计", 0)
        headers = list(frame.columns)
        for col, header in enumerate(headers, 1):
            cell = ws.cell(row=1, column=col, value=header)
            cell.font = Font(bold=True)
            cell.alignment = Alignment(horizontal='center')
            cell.fill = HEADER_FILL
        for row, record in enumerate(frame.itertuples(index=False), 2):
            for col, value in enumerate(record, 1):
                if isinstance(value, float) and np.isnan(value):
                    value = None
                elif isinstance(value, (np.bool_, bool)):
                    value = '是' if value else '否'
                ws.cell(row=row, column=col, value=value)
        for col in range(1, len(headers) + 1):
            ws.column_dimensions[ws.cell(row=1, column=col).column_letter].width = 15

        ws = wb.create_sheet("采集摘要", 1)
        ws.cell(row=1, column=1, value="采集摘要")
        ws.cell(row=1, column=1).font = Font(bold=True, size=14)
        ws.merge_cells('A1:C1')
        row = 3
        for key in ('scenario', 'seed', 'demo_length', 'R', 'stop_reason', 'n_trajectories',
                    'collected_waypoints', 'mean_trajectory_length'):
            ws.cell(row=row, column=1, value=key)
            ws.cell(row=row, column=2, value=summary[key])
            row += 1
        ws.cell(row=row, column=1, value='exhausted_waypoints')
        ws.cell(row=row, column=2, value=', '.join(str(k) for k in summary['exhausted_waypoints']) or '-')
        ws.column_dimensions['A'].width = 24
        ws.column_dimensions['B'].width = 18

        os.makedirs(os.path.dirname(os.path.abspath(output_file)), exist_ok=True)
        wb.save(output_file)

    def loss_curve_frame(self, curve):
        return pd.DataFrame({'epoch': np.arange(len(curve)), 'loss': np.asarray(curve, dtype=float)})

    def save_loss_curve(self, curve, output_file):
        atomic_write_text(output_file, self.loss_curve_frame(curve).to_csv(index=False))
        return output_file

    def calibration_frame(self, calibration):
        return pd.DataFrame(calibration.rows, columns=['scenario', 'displacement', 'similarity'])

    def save_calibration(self, calibration, output_file):
        """保存 (场景, 位移像素, 相似度) 表，另附按位移的均值表"""
        frame = self.calibration_frame(calibration)
        atomic_write_text(output_file, frame.to_csv(index=False))
        means = frame.groupby(['scenario', 'displacement'], as_index=False)['similarity'].mean()
        root, ext = os.path.splitext(output_file)
        atomic_write_text(f"{root}_mean{ext}", means.to_csv(index=False))
        return output_file

    def save_summary_json(self, summary, output_file):
        """保存统计摘要为 JSON 文件"""
        atomic_write_text(output_file, json.dumps(summary, ensure_ascii=False, indent=2) + '\n')

    def print_summary(self, summary):
        """打印数据集摘要"""
        print("\n=== 数据集摘要 ===")
        print(f"场景: {summary['scenario']} (seed={summary['seed']}), 示教长度 N={summary['demo_length']}")
        print(f"R={summary['R']}, 停止原因: {summary['stop_reason']}")
        print(f"增强轨迹: {summary['n_trajectories']} 条, 覆盖 {summary['collected_waypoints']} 个路点, "
              f"平均长度 {summary['mean_trajectory_length']:.1f}")
        if summary['exhausted_waypoints']:
            print(f"⚠️ 未采满的路点: {summary['exhausted_waypoints']}")
        if 'n_sequences' in summary:
            lengths = summary['sequence_length']
            print(f"融合序列: {summary['n_sequences']} 条, 长度 {lengths['min']}-{lengths['max']}"
                  f" (平均 {lengths['mean']:.1f})")
