#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
工具模块
"""

from .data_processor import DataProcessor
from .report_generator import ReportGenerator, markdown_table

__all__ = ['DataProcessor', 'ReportGenerator', 'markdown_table']
