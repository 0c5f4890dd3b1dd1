"""Exception hierarchy. Each class carries the CLI exit code for its failure class."""


class SprintError(Exception):
    exit_code = 1


class ParseError(SprintError, ValueError):
    """Malformed input file (bad header, non-binary cell, bad JSON)."""

    exit_code = 3


class AlignmentError(SprintError, ValueError):
    """Inputs disagree on shape, row count or question ids."""

    exit_code = 4


class DimensionError(AlignmentError):
    pass


class NumericError(SprintError, ArithmeticError):
    exit_code = 5


class DivergenceError(NumericError):
    pass


class ArtifactIOError(SprintError, OSError):
    exit_code = 6


class ChecksumError(ArtifactIOError):
    pass


class FormatVersionError(ArtifactIOError):
    pass
