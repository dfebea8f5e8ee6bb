#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
工具模块
"""

from .errors import (DatesKitError, DataError, CurveRangeError, NoRealisationsError, SamplesFormatError,
                     NumericalError, EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL)
from .run_config import RunConfig, create_run_config, load_config_file, DEFAULT_ENV_KEYS

__all__ = ['DatesKitError', 'DataError', 'CurveRangeError', 'NoRealisationsError', 'SamplesFormatError',
           'NumericalError', 'EXIT_OK', 'EXIT_USAGE', 'EXIT_DATA', 'EXIT_NUMERICAL',
           'RunConfig', 'create_run_config', 'load_config_file', 'DEFAULT_ENV_KEYS']
