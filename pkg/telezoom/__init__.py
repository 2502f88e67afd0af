# -*- coding: utf-8 -*-
"""
Telezoom Package
"""

__version__ = "1.0.0"
__author__ = "Telezoom Team"
__description__ = "Fine-grained telemetry imputation from coarse network measurements"

from telezoom.config import RunConfig, config
from telezoom.errors import TelezoomError

__all__ = ['config', 'RunConfig', 'TelezoomError', '__version__']
