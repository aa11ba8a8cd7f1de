class TwoPartError(Exception):
    """Base class for errors raised by the estimation pipeline."""

    exit_code = 1
    default_message = "Estimation failed."

    def __init__(self, message: str | None = None) -> None:
        super().__init__(message if message else self.default_message)


class ConfigError(TwoPartError):
    """Exception raised when flags, policy strings or learner specs are invalid."""

    exit_code = 2
    default_message = "Invalid configuration."


class DataError(TwoPartError):
    """Exception raised when the input data cannot be used."""

    exit_code = 3
    default_message = "Invalid input data."


class MissingColumnError(DataError):
    """Exception raised when a requested column is absent from a CSV file."""

    def __init__(
        self,
        message: str | None = None,
        column: str | None = None,
        available_columns: list[str] | None = None,
    ) -> None:
        message = (
            (f"Column '{column}' not found." if column else "Column not found.")
            if not message
            else message
        )
        if available_columns:
            message += " Available columns: %s." % available_columns
        super().__init__(message)


class NoPositiveOutcomesError(DataError):
    """Exception raised when the outcome has no strictly positive value."""

    default_message = "No positive outcomes: the intensity component cannot be fitted."


class NumericalError(TwoPartError):
    """Exception raised when a fit or a solver fails."""

    exit_code = 4
    default_message = "Numerical failure."


class ConvergenceError(NumericalError):
    """Exception raised when a solver does not reach its score tolerance."""

    def __init__(
        self, message: str | None = None, trace: list[float] | None = None
    ) -> None:
        message = message if message else "Solver did not converge."
        self.trace = list(trace) if trace else []
        if self.trace:
            message += " Score trace: %s." % [f"{s:.3e}" for s in self.trace]
        super().__init__(message)


class PositivityError(NumericalError):
    """Exception raised when propensity values sit on the boundary of (0, 1)."""

    default_message = (
        "Positivity violation: propensity values must lie strictly inside (0, 1)."
    )


class FoldError(NumericalError):
    """Exception raised when a cross-fitting training fold cannot be used."""

    def __init__(self, message: str | None = None, fold: int | None = None) -> None:
        message = message if message else "Training fold cannot be fitted."
        if fold is not None:
            message = f"Fold {fold}: {message}"
        self.fold = fold
        super().__init__(message)


class ReportStoreError(ConfigError):
    """Exception raised when no report store matches the environment settings."""

    default_message = (
        "Unable to set proper connector to the report store. "
        "Check the environment settings."
    )
