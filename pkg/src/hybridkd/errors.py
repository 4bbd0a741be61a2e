"""Exception hierarchy shared by every subpackage.

Each class carries a short ``category`` used by the CLI when it prints the
single-line error summary to stderr.
"""


class KDError(Exception):
    category = "error"


class ConfigError(KDError, ValueError):
    category = "config"


class DimensionError(KDError, ValueError):
    category = "dimension"


class NumericError(KDError, ArithmeticError):
    category = "numeric"


class DataError(KDError, ValueError):
    category = "data"


class TrainingError(KDError, RuntimeError):
    category = "training"


class FormatError(KDError, ValueError):
    category = "format"
