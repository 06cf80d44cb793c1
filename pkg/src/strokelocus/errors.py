"""Exception hierarchy shared by all stages of the pipeline.

Each class carries the process exit code the CLI maps it to.
"""


class StrokeLocusError(Exception):
    exit_code = 1


class InputError(StrokeLocusError):
    """Bad input data or file format (exit code 2)."""

    exit_code = 2


class NiftiError(InputError):
    pass


class BadMagic(NiftiError):
    pass


class BadHeader(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class TruncatedData(NiftiError):
    pass


class IoFailure(InputError, OSError):
    pass


class InvalidVolume(InputError, ValueError):
    pass


class SingularAffine(InputError, ValueError):
    pass


class GridMismatch(InputError, ValueError):
    pass


class ShapeMismatch(InputError, ValueError):
    pass


class TooSmall(InputError, ValueError):
    pass


class EmptyInput(InputError, ValueError):
    pass


class DegenerateRange(InputError, ValueError):
    pass


class NoSlicesSelected(InputError, ValueError):
    pass


class DegenerateOverlap(StrokeLocusError):
    """Too little overlap, or no intensity variance, to score an alignment."""

    exit_code = 3


class EmptyLesion(StrokeLocusError):
    exit_code = 4


class NoProgressWarning(UserWarning):
    """The optimizer could not improve on its starting transform at any level."""
