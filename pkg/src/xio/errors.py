"""Exception types shared across the package.

Each class corresponds to one named failure mode of the public API; callers
that need to distinguish numerical failures from bad inputs can catch the
base classes.
"""


class XioError(Exception):
    """Base class for all package-specific errors."""


class MalformedInput(XioError, ValueError):
    """Input data or configuration that cannot be parsed or is inconsistent."""


class NumericalError(XioError, ArithmeticError):
    """A numerically ill-posed operation (singular / non-PD matrices)."""


class MissingArtifact(XioError, FileNotFoundError):
    """A referenced checkpoint, expert, or file does not exist."""


# -- geometry ---------------------------------------------------------------

class NearPiRotation(NumericalError):
    """Rotation angle within tolerance of pi: the log map's axis is ambiguous."""


# -- state estimator --------------------------------------------------------

class NonPDInitialCovariance(NumericalError):
    pass


class NonPDMeasurementCovariance(NumericalError):
    pass


class SingularInnovation(NumericalError):
    """Innovation matrix condition number exceeds the invertibility budget."""


class NonFiniteInput(MalformedInput):
    pass


# -- network ----------------------------------------------------------------

class ShapeMismatch(MalformedInput):
    pass


class OddSegmentCount(MalformedInput):
    pass


# -- training ---------------------------------------------------------------

class NonPDCovariance(NumericalError):
    pass


class InsufficientData(MalformedInput):
    pass


# -- router -----------------------------------------------------------------

class InputTooShort(MalformedInput):
    pass


class MissingExpert(MissingArtifact):
    pass


# -- dataset I/O ------------------------------------------------------------

class MalformedFile(MalformedInput):
    """Unparseable dataset file; message carries the offending line number."""


# -- evaluation -------------------------------------------------------------

class NoOverlap(MalformedInput):
    pass


class LengthMismatch(MalformedInput):
    pass


class SequenceTooShort(MalformedInput):
    pass
