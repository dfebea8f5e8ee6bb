#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
结果文件读写
后验样本为JSON-lines（首行为头信息），接受统计为旁路JSON，表格结果为带'#'注释头的CSV
输出中不写时间戳，相同种子的两次运行产生逐字节相同的文件
"""

import os
import json
import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .. import __version__
from .ppmodel import RateFunction
from .sampler import AcceptanceStats, ChainOptions, PosteriorSamples
from ..utils.errors import DataError, SamplesFormatError

logger = logging.getLogger(__name__)

SAMPLES_FORMAT = "datesdata-samples"
SAMPLES_VERSION = 1


def acceptance_path(samples_path: str) -> str:
    """samples.jsonl → samples.acceptance.json"""
    root, _ = os.path.splitext(samples_path)
    return f"{root}.acceptance.json"


def save_samples(samples: PosteriorSamples, path: str) -> str:
    """
    保存后验样本（JSON-lines）及接受统计旁路文件

    Args:
        samples: 后验样本
        path: 输出路径

    Returns:
        接受统计文件路径
    """
    grid = samples.options.grid
    header = {
        "format": SAMPLES_FORMAT,
        "version": SAMPLES_VERSION,
        "generator": __version__,
        "options": samples.options.model_dump(mode="json"),
        "bounds": [grid.start, grid.end],
        "determination_ids": list(samples.determination_ids),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(header, ensure_ascii=False) + "\n")
        for iteration, rate, ages in zip(samples.iterations, samples.rates, samples.ages):
            record = {"iter": iteration, "k": rate.k, "s": rate.changepoints.tolist(),
                      "h": rate.heights.tolist(), "theta": ages.tolist()}
            f.write(json.dumps(record) + "\n")

    sidecar = acceptance_path(path)
    with open(sidecar, 'w', encoding='utf-8') as f:
        json.dump(samples.acceptance_stats.to_dict(), f, ensure_ascii=False, indent=2)
    logger.info(f"后验样本已保存到: {path}（{len(samples)}条），接受统计: {sidecar}")
    return sidecar


def load_samples(path: str) -> PosteriorSamples:
    """
    读取save_samples写出的后验样本

    Raises:
        SamplesFormatError: 格式或版本不匹配
        DataError: 文件缺失或记录无效
    """
    if not os.path.exists(path):
        raise DataError(f"后验样本文件不存在: {path}")

    with open(path, 'r', encoding='utf-8') as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise SamplesFormatError("后验样本文件为空", path=path)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise SamplesFormatError("后验样本文件缺少头信息", line=1, path=path)
    if not isinstance(header, dict) or header.get("format") != SAMPLES_FORMAT:
        raise SamplesFormatError(f"不是后验样本文件（format={header.get('format') if isinstance(header, dict) else None}）",
                                 line=1, path=path)
    if header.get("version") != SAMPLES_VERSION:
        raise SamplesFormatError(f"不支持的样本文件版本 {header.get('version')}（需要 {SAMPLES_VERSION}）",
                                 line=1, path=path)

    options = ChainOptions.model_validate(header["options"])
    t_a, t_b = header["bounds"]
    ids = list(header.get("determination_ids", []))

    iterations: List[int] = []
    rates: List[RateFunction] = []
    ages: List[List[float]] = []
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
            rate = RateFunction(t_a, t_b, record["s"], record["h"])
            if rate.k != record["k"]:
                raise ValueError(f"k={record['k']}与变点个数{rate.k}不一致")
            theta = record["theta"]
            if len(theta) != len(ids):
                raise ValueError(f"theta个数{len(theta)}与测年数据个数{len(ids)}不一致")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"后验样本记录无效: {e}", line=line_number, path=path)
        iterations.append(int(record["iter"]))
        rates.append(rate)
        ages.append(theta)

    stats = AcceptanceStats()
    sidecar = acceptance_path(path)
    if os.path.exists(sidecar):
        with open(sidecar, 'r', encoding='utf-8') as f:
            stats = AcceptanceStats.from_dict(json.load(f))
    else:
        logger.warning(f"未找到接受统计文件: {sidecar}")

    matrix = np.array(ages, dtype=float) if ages else np.empty((0, len(ids)))
    logger.info(f"读取后验样本 {len(rates)} 条: {path}")
    return PosteriorSamples(iterations, rates, matrix, options, stats, ids)


def write_csv(df: pd.DataFrame, path: str, header: Optional[Dict[str, Any]] = None) -> str:
    """
    写CSV，文件开头为'#'注释行（版本号及配置回显）

    Args:
        df: 表格
        path: 输出路径
        header: 需要回显的配置（按键名排序写出）
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f"# datesdata {__version__}\n")
        for key in sorted(header or {}):
            f.write(f"# {key}: {json.dumps(header[key], ensure_ascii=False)}\n")
        df.to_csv(f, index=False, float_format="%.10g", lineterminator="\n")
    logger.info(f"结果已保存到: {path}")
    return path


def read_csv(path: str) -> pd.DataFrame:
    """读取带'#'注释头的CSV"""
    if not os.path.exists(path):
        raise DataError(f"文件不存在: {path}")
    try:
        return pd.read_csv(path, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"CSV解析失败: {e}", path=path)


def write_json(data: Dict[str, Any], path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2)
    logger.info(f"结果已保存到: {path}")
    return path
