"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: input/config problems
exit 2, numerical failures exit 3.
"""


class EscfrError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(EscfrError, ValueError):
    """Array dimensions do not agree with the operation's contract."""


class ConfigError(EscfrError, ValueError):
    """A configuration value is out of its admissible range."""


class InfeasibleInputError(EscfrError, ValueError):
    """Inputs violate a feasibility precondition (e.g. mass mismatch)."""


class NumericalFailureError(EscfrError, RuntimeError):
    """A numerical routine produced non-finite intermediates."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class LossSpecError(EscfrError, ValueError):
    """A loss description references unsupported primitives."""


class SchemaError(EscfrError, ValueError):
    """A file does not match the expected column schema."""


class DataParseError(EscfrError, ValueError):
    """A cell in a data file could not be parsed."""


class DataValidationError(EscfrError, ValueError):
    """Parsed data violates a dataset invariant."""


class StratificationError(EscfrError, ValueError):
    """Stratified batching is impossible (a treatment group is missing)."""


class SplitError(EscfrError, ValueError):
    """A treatment group is too small to stratify across all splits."""


class MetricError(EscfrError, ValueError):
    """A metric's preconditions are not met (e.g. single-group input)."""


class GenerationError(EscfrError, RuntimeError):
    """Synthetic data generation repeatedly produced degenerate draws."""
