"""Exception hierarchy shared by all modules.

The CLI maps these onto stable exit codes (see ``insulshape.cli``).
"""


class InsulShapeError(Exception):
    """Base class for every error raised by the package."""


class ParseError(InsulShapeError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshQualityFailure(InsulShapeError):
    pass


class DimensionMismatch(InsulShapeError):
    pass


class NoConvergence(InsulShapeError):
    pass


class NonDescent(InsulShapeError):
    pass


class IncompatibleData(InsulShapeError):
    pass


class NegativeTrace(InsulShapeError):
    pass


class ZeroTrace(InsulShapeError):
    pass


class MassOutOfRange(InsulShapeError):
    pass


class UnsupportedDimension(InsulShapeError):
    pass


class StallDetected(InsulShapeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


class FrameMismatch(InsulShapeError):
    pass


class ResolutionTooCoarse(InsulShapeError):
    pass


class InsufficientRange(InsulShapeError):
    pass


class DisconnectedDomain(InsulShapeError):
    pass


class BracketInvalid(InsulShapeError):
    pass
