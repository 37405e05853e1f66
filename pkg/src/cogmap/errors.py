"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class CogmapError(Exception):
    exit_code = 1


class ConfigurationError(CogmapError):
    """Bad hyperparameters, mismatched layer shapes, unknown config keys."""

    exit_code = 2


class DimensionError(ConfigurationError, ValueError):
    """Operand shapes do not agree."""


class FormatError(CogmapError):
    exit_code = 3


class BadMagicError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class DimensionOverflowError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass


class ContractError(CogmapError):
    """A documented precondition was violated by the caller."""

    exit_code = 4


class NoConfidentGeometryError(ContractError):
    """Every token sits at or below the confidence threshold."""


class GenerationError(ContractError):
    pass


class VerificationError(CogmapError):
    exit_code = 5
