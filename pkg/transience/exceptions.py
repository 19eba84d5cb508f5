# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Exception hierarchy.

``ValidationError`` covers bad arguments and configuration (CLI exit code 1);
``NumericalError`` covers failures of the numerics themselves (exit code 2).
"""


class TransienceError(Exception):
    pass


class ValidationError(TransienceError):
    pass


class ConfigError(ValidationError):
    pass


class NumericalError(TransienceError):
    pass


class NotPSDError(NumericalError):
    pass


class IllConditionedBatchError(NumericalError):
    pass


class NonFiniteError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
