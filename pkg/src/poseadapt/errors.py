"""Exception hierarchy shared by all poseadapt modules."""

from __future__ import annotations


class PoseAdaptError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PoseAdaptError):
    """A domain value violates one of its invariants.

    ``field`` names the offending attribute, ``rule`` the violated invariant and
    ``line`` is set when the value came from a file.
    """

    def __init__(self, message: str, field: str | None = None, rule: str | None = None,
                 line: int | None = None):
        self.field = field
        self.rule = rule
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class InvalidKeypointCount(ValidationError):
    pass


class NonMonotoneFrames(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class BadROI(ValidationError):
    pass


class ParseError(PoseAdaptError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingFile(PoseAdaptError):
    pass


class DegenerateSplit(PoseAdaptError):
    pass


class ConfigError(PoseAdaptError):
    pass


class AllMissingChannel(PoseAdaptError):
    pass


class DegenerateTorso(PoseAdaptError):
    pass


class TooFewSamples(PoseAdaptError):
    pass


class DimensionMismatch(PoseAdaptError):
    pass


class ChecksumMismatch(PoseAdaptError):
    pass


class MissingLabel(PoseAdaptError):
    pass


class SingleClass(PoseAdaptError):
    pass


class NoPositives(PoseAdaptError):
    pass


class EmptyAbnormalPool(PoseAdaptError):
    pass


class MismatchedSlices(PoseAdaptError):
    pass
