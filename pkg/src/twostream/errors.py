"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
ConfigError -> 1, DataError -> 2, NumericError -> 3.
"""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """A run configuration is malformed, incomplete, or contradictory."""


class DataError(ValueError):
    """On-disk data (clips, manifests, flow files, checkpoints) is invalid."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values and cannot continue."""
