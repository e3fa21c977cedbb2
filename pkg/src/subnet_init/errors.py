"""Exception hierarchy shared by all modules."""


class SubnetInitError(ValueError):
    """Base class for all errors raised by this package."""


class SchemaError(SubnetInitError):
    pass


class ParseError(SubnetInitError):
    pass


class DimensionError(SubnetInitError):
    pass


class DegenerateChannelError(SubnetInitError):
    pass


class SplitError(SubnetInitError):
    pass


class StabilityError(SubnetInitError):
    pass


class CalibrationError(SubnetInitError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class IdentifiabilityError(SubnetInitError):
    pass


class OrderError(IdentifiabilityError):
    pass


class InvertibilityError(SubnetInitError):
    pass


class ObservabilityError(SubnetInitError):
    pass


class ConfigurationError(SubnetInitError):
    pass


class LagMismatchError(ConfigurationError):
    pass


class NumericError(SubnetInitError, ArithmeticError):
    pass


class RolloutDivergence(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingDivergence(NumericError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
