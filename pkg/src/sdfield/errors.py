"""Exception types shared across the toolkit.

Every error raised by the library derives from SdfieldError so callers can
catch the whole family; the CLI maps parse errors to exit code 2, validation
errors to 3 and numeric failures to 4.
"""


class SdfieldError(Exception):
    """Base class for all library errors."""


class ParseError(SdfieldError):
    """A file could not be parsed. Carries an optional line number."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.path = path
        self.line = line


class ValidationError(SdfieldError):
    """Input violates a documented precondition."""


class NumericError(SdfieldError):
    """A computation failed numerically."""


class InvalidMesh(ValidationError):
    pass


class InvalidResolution(ValidationError):
    pass


class InvalidCount(ValidationError):
    pass


class InvalidPose(ValidationError):
    pass


class DegenerateRotation(ValidationError):
    pass


class InvalidRotation(ValidationError):
    pass


class BehindCamera(ValidationError):
    pass


class CorrespondenceMismatch(ValidationError):
    pass


class DegenerateCloud(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class EmptyCloud(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class DegenerateMesh(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class UnreliableOccupancy(UserWarning):
    """More than the tolerated fraction of voxels had an uncertain inside test."""
