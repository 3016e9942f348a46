"""Exception types shared across the package."""


class OpfcertError(Exception):
    """Base class for all package-specific errors."""


# case parsing / conversion

class MalformedTable(OpfcertError):
    """A data table has inconsistent row lengths or unsupported content."""


class MissingSection(OpfcertError):
    """A required case section (bus, gen, branch, baseMVA) is absent."""


class NonNumericField(OpfcertError):
    """A table cell could not be parsed as a number."""


class NoReferenceBus(OpfcertError):
    """The case declares no reference (type 3) bus."""


class MultipleReferenceBuses(OpfcertError):
    """The case declares more than one reference bus."""


class ZeroImpedanceBranch(OpfcertError):
    """A branch has r == x == 0 and admits no admittance model."""


class IslandedBus(OpfcertError):
    """A bus is not touched by any in-service branch."""


class IoFailure(OpfcertError):
    """Reading or writing a report file failed."""


# numerical operations

class DimensionMismatch(OpfcertError):
    """Vector dimensions do not match the case they are used with."""


class NoConvergence(OpfcertError):
    """Newton iteration hit its cap or a singular Jacobian."""


class BoundsOutOfRange(OpfcertError):
    """Angle bounds fall outside the (-pi/2, pi/2) window."""


class InvalidBounds(OpfcertError):
    """A VariableBounds object violates its invariants."""


class BackendFailure(OpfcertError):
    """The conic backend broke down numerically."""


# certification

class LambdaOutOfRange(OpfcertError):
    """Segment parameter outside [0, 1]."""


class DegeneratePoints(OpfcertError):
    """Points A and B coincide; no hyperplane normal exists."""


class InvalidAxis(OpfcertError):
    """Rotation axis is not a valid setpoint coordinate."""


class PointsNotSeparated(OpfcertError):
    """A and B lie on the same side of the candidate hyperplane."""


class InfeasibleInput(OpfcertError):
    """A point supplied as feasible fails the constraint check."""


class NotFound(OpfcertError):
    """Search exhausted its trial budget without a certified candidate."""


class CaseTooLarge(OpfcertError):
    """Operation is restricted to desk-scale cases."""
