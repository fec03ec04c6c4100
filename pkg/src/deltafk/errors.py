"""Exception hierarchy.

Validation problems (bad parameters, bad configs) derive from
:class:`ValidationError`; failures of a numerical scheme to certify its own
accuracy derive from :class:`NumericalFailure`.  The CLI maps the two
families to different exit codes.
"""


class DeltaFKError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DeltaFKError, ValueError):
    pass


class NumericalFailure(DeltaFKError, ArithmeticError):
    pass


class InvalidModel(ValidationError):
    pass


class InvalidLambda(ValidationError):
    pass


class InvalidMu(ValidationError):
    pass


class LambdaAtEigenvalue(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class QuadratureDivergence(NumericalFailure):
    pass


class BracketFailure(NumericalFailure):
    pass


class SpectrumTooHeavy(NumericalFailure):
    pass


class ContourTailTooFat(NumericalFailure):
    pass


class HorizonTooShort(NumericalFailure):
    pass


class DegenerateWeights(NumericalFailure):
    pass


class GridTooNarrow(NumericalFailure):
    pass
