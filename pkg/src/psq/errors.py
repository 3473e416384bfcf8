"""Exception hierarchy for psq."""


class PSQError(Exception):
    """Base class for all library errors."""


class NotHermitian(PSQError):
    pass


class NotPositive(PSQError):
    pass


class TraceDrift(PSQError):
    pass


class NegativeWeight(PSQError):
    pass


class WeightSumDrift(PSQError):
    pass


class TruncationLoss(PSQError):
    pass


class DimMismatch(PSQError):
    pass


class UnitarityLoss(PSQError):
    pass


class QuadratureUnderflow(PSQError):
    """Node-doubling estimate of the cell quadrature error exceeds the bound."""


class WrongGridKind(PSQError):
    pass


class MisalignedShift(PSQError):
    pass


class MisalignedAngle(PSQError):
    pass


class NotDiagonal(PSQError):
    pass


class TailMassExceeded(PSQError):
    """Probability carried by the tail effect exceeds the configured bound."""


class DomainDiagnosticFailed(PSQError):
    pass


class ConfigError(PSQError):
    pass


class ExperimentFailed(PSQError):
    pass
