#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义
数据/解析类错误继承ValueError，数值类错误继承ArithmeticError，CLI据此映射退出码
"""

from typing import Any, Dict, Optional


class DatesKitError(Exception):
    """所有工具异常的基类"""


class DataError(DatesKitError, ValueError):
    """数据错误：文件缺失、解析失败、输入不满足前置条件"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        if line is not None:
            location = f"{path}:{line}" if path else f"第{line}行"
            message = f"{message} ({location})"
        super().__init__(message)


class CurveRangeError(DataError):
    """查询的日历年龄或网格超出校准曲线范围"""


class NoRealisationsError(DataError):
    """按k条件筛选后没有任何后验样本"""


class SamplesFormatError(DataError):
    """后验样本文件格式或版本不匹配"""


class NumericalError(DatesKitError, ArithmeticError):
    """数值失败：下溢、非有限的似然等"""

    def __init__(self, message: str, state: Optional[Dict[str, Any]] = None):
        self.state = state
        super().__init__(message)


# 退出码
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
