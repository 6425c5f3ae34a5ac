"""Exception hierarchy.

``ValidationError`` subclasses describe bad inputs (CLI exit code 1); every
other ``ReflectObsError`` is a runtime failure (exit code 2).
"""


class ReflectObsError(Exception):
    pass


class ValidationError(ReflectObsError, ValueError):
    pass


# geometry
class DegenerateConfiguration(ReflectObsError):
    pass


class NoPhysicalSolution(ReflectObsError):
    def __init__(self, message, degenerate_motion=False):
        super().__init__(message)
        self.degenerate_motion = degenerate_motion


class DegenerateMotion(ReflectObsError):
    pass


class EpipoleCoincidesWithPoint(ReflectObsError):
    pass


# flow
class SizeMismatch(ValidationError):
    pass


# model
class InsufficientData(ReflectObsError):
    pass


class DimensionMismatch(ValidationError):
    pass


class MaskMismatch(ValidationError):
    pass


# eval
class EmptyGroundTruth(ReflectObsError):
    pass


# io
class MissingFile(ValidationError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class CountMismatch(ValidationError):
    pass


class InsufficientMotion(ReflectObsError):
    pass
