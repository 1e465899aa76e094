"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: UsageError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class UsageError(Exception):
    """Caller violated an API or CLI contract (bad arguments, mismatched shapes)."""


class DataError(Exception):
    """Input files are missing, malformed, or inconsistent with their manifest."""


class NumericalError(Exception):
    """The computation produced values outside its numeric contract."""


class BehindCameraError(UsageError):
    """A point with non-positive camera-space depth reached a projection routine."""


class DegenerateRotationError(NumericalError):
    """A rotation quaternion polynomial collapsed below the normalizable threshold."""
