"""Exception hierarchy shared across the toolkit.

``InputError`` covers malformed data and contract violations on inputs
(CLI exit code 2); ``NumericalError`` covers failures of iterative
numerics (CLI exit code 1).
"""


class BrachyFuseError(Exception):
    """Base class for all toolkit errors."""


class InputError(BrachyFuseError, ValueError):
    """Invalid input data, file, or argument."""


class InvalidContourError(InputError):
    """Contour violates its invariants (too few vertices, self-intersecting...)."""


class FrameMismatchError(InputError):
    """Operands live in different coordinate frames."""


class GridCoverageError(InputError):
    """A grid does not cover the geometry it must enclose."""


class ManifestError(InputError):
    """Patient-case manifest is missing or malformed."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericalError(BrachyFuseError, RuntimeError):
    """An iterative numerical procedure failed."""


class InversionError(NumericalError):
    """Point inversion of a transfer function did not converge."""

    def __init__(self, message, best_point=None, best_residual=None):
        super().__init__(message)
        self.best_point = best_point
        self.best_residual = best_residual


class MappingError(NumericalError):
    """Cross-frame contour mapping failed on too many vertices."""

    def __init__(self, message, failed_vertices=()):
        super().__init__(message)
        self.failed_vertices = list(failed_vertices)
