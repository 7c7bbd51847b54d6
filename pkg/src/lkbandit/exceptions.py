"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Input data violates a structural invariant (shape, symmetry, sign)."""


class ParameterError(ValueError):
    """A scalar hyperparameter is outside its admissible range."""


class ProtocolError(RuntimeError):
    """The bandit round protocol was violated (e.g. arm not offered)."""


class NumericalError(ArithmeticError):
    """A factorization or update failed even after jitter."""
