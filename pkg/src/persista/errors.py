"""
Error taxonomy for persista. Every error carries a ``category`` string which the CLI prints
next to the message, so callers can tell a malformed file from a degenerate feature without
parsing text.
"""
from typing import Optional


class PersistaError(Exception):
    category = "error"

    def with_context(self, context: str) -> "PersistaError":
        """Returns a copy of this error with ``context`` prefixed to the message."""
        clone = type(self).__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.args = (f"{context}: {self.args[0] if self.args else ''}",) + tuple(self.args[1:])
        return clone


class DomainError(PersistaError, ValueError):
    category = "domain"


class InsufficientSubjectsError(PersistaError, ValueError):
    category = "insufficient-subjects"


class DegenerateFeatureError(PersistaError, ValueError):
    category = "degenerate-feature"

    def __init__(self, message: str, feature: Optional[str] = None):
        super().__init__(message)
        self.feature = feature


class BalanceError(PersistaError, ValueError):
    category = "balance"


class DegenerateVectorError(PersistaError, ValueError):
    category = "degenerate-vector"


class DegenerateScalingError(PersistaError, ValueError):
    category = "degenerate-scaling"


class EmptyDistributionError(PersistaError, ValueError):
    category = "empty-distribution"


class RankDeficiencyError(PersistaError, ValueError):
    category = "rank-deficiency"

    def __init__(self, message: str, deficient_dimensions: int = 0):
        super().__init__(message)
        self.deficient_dimensions = deficient_dimensions


class DecompositionError(PersistaError, ValueError):
    category = "decomposition"


class DatasetFormatError(PersistaError, ValueError):
    category = "format"


class DatasetParseError(PersistaError, ValueError):
    category = "parse"

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(PersistaError, ValueError):
    category = "config"
