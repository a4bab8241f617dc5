#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义模块

命令行入口按异常类别映射退出码：
- ConfigError      -> 2
- ValidationError  -> 3
- 其它 DemoLoopError -> 4
"""


class DemoLoopError(Exception):
    """所有业务异常的基类"""


class ConfigError(DemoLoopError, ValueError):
    """配置错误（未知键、类型不符、取值越界）"""

    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class ValidationError(DemoLoopError):
    """输入文件或数据校验失败"""


class MissingInputError(ValidationError, FileNotFoundError):
    """输入文件不存在"""


class RecordFormatError(ValidationError):
    """JSON-lines 记录格式错误，带记录序号和字段名"""

    def __init__(self, message, record_index=None, field=None, path=None):
        self.record_index = record_index
        self.field = field
        self.path = path
        where = []
        if path:
            where.append(str(path))
        if record_index is not None:
            where.append(f"record {record_index}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class VersionError(ValidationError):
    """文件版本不受支持"""


class ChecksumError(ValidationError):
    """策略文件校验和不匹配"""


class ShapeError(ValidationError):
    """参数形状与网络配置不一致，带层名"""

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer:
            message = f"layer '{layer}': {message}"
        super().__init__(message)


class IntegrityError(ValidationError):
    """融合数据完整性错误"""


class UnknownScenarioError(DemoLoopError, KeyError):
    """未注册的场景"""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown scenario"


class ScriptUnreachableError(DemoLoopError):
    """示教脚本的某个路点无法到达"""

    def __init__(self, message, waypoint_index=None):
        self.waypoint_index = waypoint_index
        super().__init__(message)


class TaskFailedError(DemoLoopError):
    """示教结束时任务判定为失败"""


class UnrecoverableStateError(DemoLoopError):
    """重放示教后仍无法回到目标路点"""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class TrainingError(DemoLoopError):
    """训练过程出现非有限损失"""

    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)
