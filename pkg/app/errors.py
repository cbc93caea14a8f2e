"""
ERRORS - WHAT CAN GO WRONG?
===========================
Every failure the library raises on purpose comes from this file.

Think of it like:
- Data problems (bad files, wrong ids) -> DataValidationError family
- Math problems (shapes, NaNs, broken gradients) -> NumericError family
- Settings that do not fit together -> ConfigurationError

The CLI turns these families into exit codes (see app/main.py).
"""


class AffordanceError(Exception):
    """Base class for all errors raised by this package."""


# ===========================
# DATA
# ===========================

class DataValidationError(AffordanceError):
    """Input files or in-memory records violate the data contract."""


class SchemaError(DataValidationError):
    """A file does not follow the documented v1 format."""


class EmptySceneError(DataValidationError):
    """An instance map without a single labeled instance."""


class IncompleteSceneError(DataValidationError):
    """A node of the scene graph has no input (class or feature)."""


class UnknownClassError(DataValidationError):
    """A class id or class name outside the dataset's class table."""


class VocabularyError(DataValidationError):
    """Token ids outside the vocabulary, or nothing to build one from."""


class InfeasibleSplitError(DataValidationError):
    """Requested split sizes cannot be drawn from the available scenes."""


# ===========================
# NUMERIC
# ===========================

class NumericError(AffordanceError):
    """Failures of the differentiable compute layer."""


class DimensionError(NumericError):
    """Operands with shapes that do not conform."""


class TrainingDivergenceError(NumericError):
    """A NaN or Inf showed up in a gradient or loss during training."""

    def __init__(self, message: str, parameter: str | None = None) -> None:
        super().__init__(message)
        self.parameter = parameter


class ContractError(NumericError):
    """A caller broke a documented precondition (e.g. non-deterministic closure)."""


# ===========================
# CONFIGURATION
# ===========================

class ConfigurationError(AffordanceError):
    """Settings that contradict each other or the checkpoint being used."""
