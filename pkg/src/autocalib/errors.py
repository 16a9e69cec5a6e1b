"""Exception types shared across the package."""


class AutocalibError(Exception):
    """Base class for all package errors."""


class ZeroPolynomial(AutocalibError):
    """A polynomial whose roots were requested is identically zero."""


class OutOfRange(AutocalibError):
    """A point cannot be mapped through the distortion model."""


class Degenerate(AutocalibError):
    """Generic degenerate geometric configuration."""


class DegenerateSample(Degenerate):
    """A minimal sample does not constrain the solver's unknowns."""


class IdenticalLines(DegenerateSample):
    """Two lines used to construct a vanishing point coincide."""


class DegeneratePC(DegenerateSample):
    """A point correspondence joins a point to itself."""


class DegenerateGeometry(DegenerateSample):
    """Parameterization of the second-stage Manhattan solver breaks down."""


class NoRealRoot(AutocalibError):
    """A solver produced no admissible real root."""


class ImaginaryFocal(AutocalibError):
    """The squared focal length recovered from vanishing points is not positive."""


class IdealPoint(AutocalibError):
    """A finite point was required but an ideal point was given."""


class NotOrthogonal(AutocalibError):
    """Vanishing points are not orthogonal under the given focal length."""


class MissingRotation(AutocalibError):
    """A calibration lacks the rotation needed for metric rectification."""


class IdealJoin(AutocalibError):
    """The join of two points is numerically undefined."""


class InsufficientFeatures(AutocalibError):
    """A feature set cannot supply the sample a solver needs."""


class NoModel(AutocalibError):
    """Robust estimation never produced a surviving hypothesis."""


class ParseError(AutocalibError):
    """A feature, config or calibration file is malformed."""


class SchemaVersionMismatch(ParseError):
    """A feature file declares an unsupported schema version."""


class Unprojectable(AutocalibError):
    """Synthetic geometry could not be placed in front of the camera."""
