"""Exception hierarchy shared by every engine.

The CLI maps these onto exit codes: ``ConfigError`` -> 2,
``NumericalError`` (and subclasses) -> 3, ``ValidationFailure`` -> 4.
"""


class StatHedgeError(Exception):
    pass


class ConfigError(StatHedgeError):
    pass


class NumericalError(StatHedgeError):
    pass


class InvalidArgument(StatHedgeError, ValueError):
    pass


class RedundantInstrumentError(NumericalError):
    pass


class EllipticityError(NumericalError):
    pass


class UnsupportedOrderError(NumericalError):
    pass


class UnsupportedModelError(StatHedgeError):
    pass


class DomainError(NumericalError):
    pass


class ContourError(NumericalError):
    pass


class InversionError(NumericalError):
    pass


class StateMismatchError(StatHedgeError, KeyError):
    pass


class SimulationError(NumericalError):
    pass


class GridError(NumericalError):
    pass


class DegenerateSystemError(NumericalError):
    pass


class ConditioningError(NumericalError):
    pass


class ValidationFailure(StatHedgeError):
    pass
