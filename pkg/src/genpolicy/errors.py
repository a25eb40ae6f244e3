"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: config errors -> 2, io/format
errors -> 3, numeric divergence -> 4.
"""


class ConfigError(ValueError):
    """Bad or missing configuration (unknown key, unparseable value)."""


class DataFormatError(ValueError):
    """Malformed dataset or checkpoint file."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a tensor operation or gradient."""


class NumericDomainError(ValueError):
    """A schedule or conversion was evaluated outside its valid domain."""


class UnsupportedKindError(ValueError):
    """Operation not defined for this path-schedule kind."""


class IntegrationDivergedError(NonFiniteError):
    """ODE state became non-finite; carries the offending step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


class TrainingDivergedError(NonFiniteError):
    """A training loss became non-finite."""
