"""Exception types shared across the package."""


class DetFusionError(Exception):
    """Base class for all errors raised by detfusion."""


class ZeroAgreement(DetFusionError, ArithmeticError):
    """The evidence has no pairwise overlap, so the agreement measure is 0/0."""


class TooManyInputs(DetFusionError, ValueError):
    pass


class PermutationMismatch(DetFusionError, ValueError):
    """A chain's permutation does not sort the integrand in descending order."""


class EmptyInput(DetFusionError, ValueError):
    pass


class EmptyGroup(DetFusionError, ValueError):
    pass


class Underdetermined(DetFusionError, ValueError):
    """Fewer detections were pooled than clusters requested."""


class UnsupportedSpec(DetFusionError, ValueError):
    pass


class DetectorError(DetFusionError):
    pass


class DetectorTimeout(DetectorError, TimeoutError):
    pass


class DetectorProtocolError(DetectorError):
    """The detector emitted output that does not follow the wire protocol."""


class MissingReplayEntry(DetectorError, KeyError):
    pass


class NoRecords(DetFusionError, ValueError):
    pass


class ClassMismatch(DetFusionError, ValueError):
    pass


class SchemaError(DetFusionError, ValueError):
    """Input JSON does not follow the expected document layout."""
