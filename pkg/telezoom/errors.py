# -*- coding: utf-8 -*-
"""
🚨 Error Types
Every failure raised by telezoom derives from TelezoomError
"""


class TelezoomError(Exception):
    """Base class for all telezoom failures"""

    exit_code = 1


class ConfigError(TelezoomError):
    """Invalid run configuration, preset, or command-line usage"""

    exit_code = 1


class ConstraintError(TelezoomError):
    """Malformed constraint or unresolved measurement reference"""

    exit_code = 1


class DataError(TelezoomError):
    """Bad input data: negative values, ragged rows, empty files"""

    exit_code = 2


class ShapeError(DataError, ValueError):
    """Series length does not fit the requested window/zoom"""


class LayoutError(ShapeError):
    """Coarse input layout does not match the checkpoint layout"""


class CheckpointError(DataError):
    """Checkpoint missing, stale, foreign, or not trained"""


class SolverError(TelezoomError):
    """Constraint enforcement could not produce a repair"""

    exit_code = 3


class TrainingError(TelezoomError):
    """Training diverged or could not start"""

    exit_code = 3

    def __init__(self, message: str, outer_iter: int | None = None):
        super().__init__(message)
        self.outer_iter = outer_iter
