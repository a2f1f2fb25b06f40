"""Exception types raised across the package."""


class DwitrError(Exception):
    """Base class for all package errors."""


class DataValidationError(DwitrError):
    """A dataset or CSV row violates the counting-process contract.

    ``row`` is the 1-based data row number when the failure is localized.
    """

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SchemaError(DwitrError):
    """A file, column mapping, or model-spec document does not match its schema."""


class SingularDesignError(DwitrError):
    """A (weighted) design matrix is numerically rank deficient."""

    def __init__(self, message, columns=()):
        if columns:
            message = f"{message} (offending columns: {', '.join(map(str, columns))})"
        super().__init__(message)
        self.columns = tuple(columns)


class DivergenceError(DwitrError):
    """Newton iterates left the trust region (parameter sup-norm above 1e6)."""


class SeparationError(DwitrError):
    """Perfect separation: the logistic treatment model is not identifiable."""


class MonotoneLikelihoodError(DwitrError):
    """The visit-model partial likelihood has no interior maximizer."""


class PositivityError(DwitrError):
    """Fitted treatment probabilities reached 0 or 1; weights are undefined."""


class SingleArmError(DwitrError):
    """All analysis rows received the same treatment."""


class BootstrapError(DwitrError):
    """Too many bootstrap replicates failed to produce estimates."""


class SimulationError(DwitrError):
    """Too many simulation replications failed to fit."""
