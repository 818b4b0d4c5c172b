"""Exception types raised across the package."""


class AcfError(ValueError):
    """Base class for all domain errors."""


class RoiOutOfImage(AcfError):
    pass


class NonPositiveDepth(AcfError):
    pass


class EmptyMask(AcfError):
    pass


class NoValidSeeds(AcfError):
    pass


class DegenerateAxis(AcfError):
    pass


class RansacFailure(AcfError):
    pass


class DegenerateDirection(AcfError):
    pass


class DegenerateFrame(AcfError):
    pass


class PreconditionViolation(AcfError):
    pass


class ZeroVector(AcfError):
    pass


class InvalidSpec(AcfError):
    pass


class SchemaError(AcfError):
    """Input document does not match the expected file format."""


class DivisionByZero(AcfError, ZeroDivisionError):
    pass
