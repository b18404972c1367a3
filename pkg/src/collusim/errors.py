class CollusimError(Exception):
    pass


class InputDomainError(CollusimError, ValueError):
    pass


class NumericInputError(CollusimError, ValueError):
    pass


class UnsupportedMarketSizeError(InputDomainError):
    pass


class ConfigurationError(CollusimError, ValueError):
    pass


class PairingError(CollusimError, ValueError):
    pass


class DegenerateSampleError(CollusimError, ValueError):
    pass


class InsufficientDataError(CollusimError, ValueError):
    pass


class CompletenessError(CollusimError, ValueError):
    pass


class FormatError(CollusimError, ValueError):
    pass
