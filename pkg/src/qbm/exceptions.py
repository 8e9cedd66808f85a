"""Exception hierarchy shared by every qbm module."""


class QBMError(Exception):
    """Base class for all errors raised by qbm."""


class DimensionError(QBMError, ValueError):
    pass


class ConfigurationError(QBMError, ValueError):
    pass


class EmptyPoolError(QBMError, ValueError):
    """A masked reduction had no valid position to reduce over."""


class DegenerateInputError(QBMError, ValueError):
    """An encoded text or bag has no valid token / question."""


class InvalidInstanceError(QBMError, ValueError):
    pass


class LabelError(QBMError, ValueError):
    pass


class ContractError(QBMError, RuntimeError):
    pass


class ParseError(QBMError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetTooSmallError(QBMError, ValueError):
    pass


class SizingError(QBMError, ValueError):
    pass


class CheckpointError(QBMError, IOError):
    pass


class IncompatibleVersionError(CheckpointError):
    pass


class CapabilityError(QBMError, TypeError):
    """The model variant does not have the requested component."""


class NumericError(QBMError, ArithmeticError):
    pass
