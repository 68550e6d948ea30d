"""Exception hierarchy.

Every error raised by the package derives from :class:`ArtifactError` and
carries an exit code used by the command line entry point.
"""


class ArtifactError(Exception):
    exit_code = 1

    def __init__(self, message, module=None):
        self.module = module
        prefix = f"[{module}] " if module else ""
        super().__init__(prefix + message)


class UsageError(ArtifactError):
    """Bad configuration or command line usage."""

    exit_code = 1


class DataError(ArtifactError):
    """Input data is missing, malformed or too short."""

    exit_code = 2


class NumericError(ArtifactError):
    """Shape mismatch, non-finite values or divergence."""

    exit_code = 3


class ShapeMismatch(NumericError):
    def __init__(self, op, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: expected extents {expected}, got {actual}", "autodiff")
