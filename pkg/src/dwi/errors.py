"""Exception types raised across the package."""


class DWIError(Exception):
    """Base class for all package errors."""


class IncompatibleWeights(DWIError):
    pass


class InvalidFactor(DWIError):
    pass


class EmptyInput(DWIError):
    pass


class DimensionMismatch(DWIError):
    pass


class SingularCovariance(DWIError):
    pass


class InvalidTemperature(DWIError):
    pass


class BadShape(DWIError):
    pass


class EmptyVocabulary(DWIError):
    pass


class LabelOutOfRange(DWIError):
    pass


class InvalidSpec(DWIError):
    pass


class CorruptFile(DWIError):
    pass


class UnsupportedVersion(DWIError):
    pass


class MissingArtifact(DWIError):
    pass


class ConfigError(DWIError):
    pass
