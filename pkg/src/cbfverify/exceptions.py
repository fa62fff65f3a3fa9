"""Exception types raised across the toolkit."""


class SpecificationError(ValueError):
    """Inputs with inconsistent shapes or invalid box specifications."""


class SchemaError(ValueError):
    """A model, scenario or results document does not match its schema."""


class DomainError(ValueError):
    """A state or control lies outside the declared domain of a model."""


class NonDifferentiableError(ArithmeticError):
    """The network gradient was requested at (or too close to) a ReLU kink."""


class NumericError(ArithmeticError):
    """A bound computation produced a non-finite value."""
