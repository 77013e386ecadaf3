"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
bad or inconsistent data (3) and algorithmic failures during a run (4).
"""

from __future__ import annotations

from typing import Any, Dict, Optional


class ConfigError(ValueError):
    """Invalid hyperparameters or generator settings."""


class DataError(ValueError):
    """Malformed input files or datasets that violate their invariants."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetTooSmallError(DataError):
    pass


class AlgorithmError(RuntimeError):
    pass


class ZeroDenominatorError(ArithmeticError):
    """A trajectory shares no cell with any of its reference trajectories."""


class EmptyANTError(AlgorithmError):
    """No stage-1 score fell inside [-phi, phi]."""

    def __init__(self, message: str, summary: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.summary = summary or {}
