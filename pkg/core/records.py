#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
JSON-lines 记录读写工具

示教、增强数据集、融合数据集共用同一套行格式：
第一行是头记录，之后每行一条记录。这里提供：
- 原子写入（临时文件 + 重命名）
- 逐行解析并给出带记录序号的错误
- 图像 base64 编解码
- 文件与对象哈希
"""

import os
import json
import base64
import hashlib
import tempfile

import numpy as np

from .errors import RecordFormatError, VersionError, MissingInputError

FORMAT_VERSION = 1


def dumps(record):
    """确定性的单行 JSON"""
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(',', ':'))


def _atomic_write(path, data, mode):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path, text):
    _atomic_write(path, text.encode('utf-8'), 'wb')


def atomic_write_bytes(path, data):
    _atomic_write(path, data, 'wb')


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + '\n')


def read_json(path):
    if not os.path.exists(path):
        raise MissingInputError(f"文件不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise RecordFormatError(f"JSON 解析失败: {e}", path=path) from e


def write_jsonl(path, records):
    """原子写入 JSON-lines 文件"""
    atomic_write_text(path, ''.join(dumps(r) + '\n' for r in records))


def read_jsonl(path):
    """
    读取 JSON-lines 文件

    Returns:
        记录列表（第 0 条为头记录）

    Raises:
        RecordFormatError: 某一行不是完整的 JSON 对象（例如文件被截断）
    """
    if not os.path.exists(path):
        raise MissingInputError(f"文件不存在: {path}")
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for index, line in enumerate(f):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordFormatError(f"记录不是合法 JSON: {e.msg}", index, path=path) from e
            if not isinstance(record, dict):
                raise RecordFormatError("记录必须是 JSON 对象", index, path=path)
            records.append(record)
    if not records:
        raise RecordFormatError("文件为空，缺少头记录", 0, path=path)
    return records


def check_header(header, kind, path=None):
    """校验头记录的类型和版本"""
    if header.get('type') != 'header':
        raise RecordFormatError("第一条记录必须是头记录", 0, 'type', path)
    version = header.get('version')
    if version != FORMAT_VERSION:
        raise VersionError(f"不支持的文件版本 {version}（期望 {FORMAT_VERSION}）: {path}")
    if header.get('kind') != kind:
        raise RecordFormatError(f"文件类型为 {header.get('kind')}，期望 {kind}", 0, 'kind', path)


def require(record, field, index, path=None):
    if field not in record:
        raise RecordFormatError("缺少字段", index, field, path)
    return record[field]


def encode_image(image):
    """uint8 图像 -> base64 字符串（行优先原始字节）"""
    return base64.b64encode(np.ascontiguousarray(image, dtype=np.uint8).tobytes()).decode('ascii')


def decode_image(text, shape, index=None, path=None):
    try:
        raw = base64.b64decode(text.encode('ascii'), validate=True)
    except (ValueError, AttributeError) as e:
        raise RecordFormatError(f"图像 base64 无效: {e}", index, 'img', path) from e
    expected = int(np.prod(shape))
    if len(raw) != expected:
        raise RecordFormatError(f"图像字节数 {len(raw)} 与尺寸 {tuple(shape)} 不符", index, 'img', path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape).copy()


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    if not os.path.exists(path):
        raise MissingInputError(f"文件不存在: {path}")
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_json(obj):
    """对象的规范化哈希（键排序）"""
    return sha256_bytes(dumps(obj).encode('utf-8'))
