"""Exception types shared across the package."""


class BladedeskError(Exception):
    """Base class for all package-specific errors."""


# geometry
class InvalidParams(BladedeskError):
    pass


class DegenerateProfile(BladedeskError):
    pass


class UnsupportedFormat(BladedeskError):
    pass


# neural core
class ShapeMismatch(BladedeskError):
    pass


class NonFiniteValue(BladedeskError):
    pass


class NoForwardRecord(BladedeskError):
    pass


class OddDim(BladedeskError):
    pass


# diffusion / surrogate
class InvalidRange(BladedeskError):
    pass


class StepOutOfRange(BladedeskError):
    pass


class UntrainedNet(BladedeskError):
    pass


class UnfittedStats(BladedeskError):
    pass


class DatasetTooSmall(BladedeskError):
    pass


class EmptySet(BladedeskError):
    pass


# optimizer
class UnknownMetricName(BladedeskError):
    pass


class MalformedReply(BladedeskError):
    pass


class ClientError(BladedeskError):
    pass


# oracle
class OutOfBounds(BladedeskError):
    pass


class InvalidMaterial(BladedeskError):
    pass


class UnconvergedBase(BladedeskError):
    pass


# data pipeline
class OracleError(BladedeskError):
    pass


class DegenerateColumn(BladedeskError):
    pass


class ConstantTruth(BladedeskError):
    pass


class IoError(BladedeskError):
    pass


class SchemaVersionMismatch(BladedeskError):
    pass


# orchestrator / gateway
class UnparseableRequest(BladedeskError):
    pass


class ConflictingTasks(BladedeskError):
    pass


class NodeFailure(BladedeskError):
    pass


class GuardUndefined(BladedeskError):
    pass


class NoEnabledEdge(BladedeskError):
    pass
