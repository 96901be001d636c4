"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid physical or scheduling parameters."""


class CriterionError(ConfigurationError):
    """Window width outside the 2..4 pulse-width range for a compliant plan."""


class NumericRangeError(ArithmeticError):
    """A closed-form evaluation produced a non-finite or out-of-range value."""


class PrecisionError(ArithmeticError):
    """Series truncation could not reach the requested tail bound.

    The partial sum and the tail bound reached so far are kept on the
    exception so callers can still report them.
    """

    def __init__(self, message: str, partial_sum: float, tail_bound: float, terms: int):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.tail_bound = tail_bound
        self.terms = terms
