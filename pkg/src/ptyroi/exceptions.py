"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`PtyRoiError` and carries
the process exit code the command line front end reports for it.
"""


class PtyRoiError(Exception):
    exit_code = 2


class FormatError(PtyRoiError, ValueError):
    """Stack or table file does not follow the expected layout."""


class TruncationError(FormatError):
    """File length disagrees with the dimensions declared in its header."""


class GeometryError(PtyRoiError, ValueError):
    """Scan grid, window or array shapes are inconsistent."""


class DataError(PtyRoiError, ValueError):
    """Values violate a physical constraint (negative or non-finite intensity)."""


class SizeError(PtyRoiError, ValueError):
    """Too few samples or an array dimension below its minimum."""


class NumericalError(PtyRoiError, ArithmeticError):
    exit_code = 3


class DegenerateInputError(NumericalError):
    """Input has no spread to cluster or standardize."""


class EmptySelectionError(NumericalError):
    """An operation would leave zero selected frames."""


class UndefinedCenterOfMassError(NumericalError):
    """Center of mass requested for a pattern with zero total intensity."""


class DomainError(NumericalError):
    """Argument outside the domain of a transform (e.g. log of a non-positive value)."""
