# Error definitions

class QbesimError(Exception):
    """Base class for every error raised by qbesim."""


class ConfigurationError(QbesimError):
    pass


class ModelError(QbesimError):
    pass


class ParseError(ModelError):
    """Config text could not be parsed; message carries line/column or field path."""


class ValidationError(ModelError):
    """A model or config invariant is violated; message names the invariant."""


class ShapeError(QbesimError):
    pass


class CapacityError(QbesimError):
    pass


class ContractError(QbesimError):
    pass


class NumericError(QbesimError):
    pass


class DegeneracyError(NumericError):
    pass


class SingularBoundError(NumericError):
    pass


class UndefinedAmplitudeError(NumericError):
    pass


class InsufficientSweepError(ValidationError):
    pass


class ProtocolError(QbesimError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"protocol stage '{stage}' failed: {message}")
        self.stage = stage


class OutputExistsError(QbesimError):
    pass
