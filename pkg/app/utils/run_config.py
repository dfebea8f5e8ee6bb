#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
运行配置
命令行参数、可选的JSON配置文件和环境变量合并为一个RunConfig
"""

import os
import json
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field

from .errors import DataError

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
DEFAULT_CURVE_FILE = "intcal20.14c"

DEFAULT_ENV_KEYS = {
    'curve_dir': 'DATESKIT_CURVE_DIR',
}


class RunConfig(BaseModel):
    """所有子命令共享的配置"""
    model_config = ConfigDict(frozen=True)

    curve: Optional[str] = None
    outdir: str = "."
    log_level: str = Field(default="INFO", pattern="^(DEBUG|INFO|WARNING|ERROR)$")
    seed: Optional[int] = Field(default=None, ge=0)

    def resolve_curve(self) -> str:
        """显式给出的曲线优先，其次是环境变量目录下的intcal20.14c"""
        if self.curve:
            return self.curve
        path = default_curve_path()
        if path is None:
            raise DataError(f"未指定校准曲线：请使用 --curve 或设置环境变量 {DEFAULT_ENV_KEYS['curve_dir']}")
        return path

    def output_path(self, filename: str) -> str:
        os.makedirs(self.outdir, exist_ok=True)
        return os.path.join(self.outdir, filename)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValueError("随机命令必须指定 --seed")
        return self.seed


def default_curve_path() -> Optional[str]:
    curve_dir = os.environ.get(DEFAULT_ENV_KEYS['curve_dir'])
    if not curve_dir:
        return None
    return os.path.join(curve_dir, DEFAULT_CURVE_FILE)


def load_config_file(path: str) -> Dict[str, Any]:
    """
    读取JSON配置文件，键名与命令行参数一致（短横线和下划线均可）

    Returns:
        以下划线命名的字典，可直接作为argparse的默认值
    """
    if not os.path.exists(path):
        raise DataError(f"配置文件不存在: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"配置文件不是有效的JSON: {e.msg}", line=e.lineno, path=path)
    if not isinstance(data, dict):
        raise DataError("配置文件顶层必须是对象", path=path)
    return {key.lstrip('-').replace('-', '_'): value for key, value in data.items()}


# 工厂函数
def create_run_config(curve: str = None, outdir: str = ".", log_level: str = "INFO", seed: int = None) -> RunConfig:
    """创建运行配置的工厂函数"""
    return RunConfig(curve=curve, outdir=outdir or ".", log_level=(log_level or "INFO").upper(), seed=seed)
