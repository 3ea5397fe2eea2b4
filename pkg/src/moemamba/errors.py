"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ParameterError(ValueError):
    """A scalar or structural argument is outside its valid range."""


class ConfigurationError(ValueError):
    """A model/training configuration violates its invariants."""


class NumericError(FloatingPointError):
    """A primitive produced (or was fed) NaN or Inf."""


class ContractError(RuntimeError):
    """An API was used outside its calling contract."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or does not match the model."""
