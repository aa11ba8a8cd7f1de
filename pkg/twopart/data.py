import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .config import DEFAULT_SCALER_PAD
from .exceptions import DataError, MissingColumnError, NoPositiveOutcomesError
from .utils import as_matrix, as_vector, first_non_finite, validate_lengths

logger = logging.getLogger("twopart")


def decompose(y: ArrayLike) -> tuple[NDArray[np.int_], NDArray[np.float64]]:
    """
    Splits a non-negative outcome into its hurdle indicator and positive part.

    Returns `(delta, s)` where `delta[i] = 1` iff `y[i] > 0` and `s` equals `y`
    on those entries and NaN elsewhere.
    """
    y = as_vector(y, "y")
    bad = first_non_finite(y)
    if bad is not None:
        raise DataError(f"Outcome has a non-finite value at index {bad}.")
    negative = np.flatnonzero(y < 0)
    if negative.size:
        raise DataError(
            f"Outcome must be non-negative; negative value at index {negative[0]}."
        )
    delta = (y > 0).astype(int)
    s = np.where(delta == 1, y, np.nan)
    return delta, s


@dataclass(frozen=True, eq=False)
class TwoPartDataset:
    """Immutable observed data O = (X, T, Y) with the derived Y = delta * S split."""

    x: NDArray[np.float64]
    t: NDArray[np.float64]
    y: NDArray[np.float64]
    covariate_names: tuple[str, ...] = ()
    treatment_name: str = "t"
    outcome_name: str = "y"
    delta: NDArray[np.int_] = field(init=False, repr=False)
    s: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        x = as_matrix(self.x, "x")
        t = as_vector(self.t, "t")
        y = as_vector(self.y, "y")
        n = validate_lengths(x=x, t=t, y=y)
        if n < 1:
            raise DataError("Dataset must contain at least one observation.")
        for name, values in (("x", x), ("t", t)):
            bad = first_non_finite(values)
            if bad is not None:
                raise DataError(f"Non-finite value in '{name}' at row {bad}.")
        delta, s = decompose(y)

        names = tuple(self.covariate_names) or tuple(
            f"x{k + 1}" for k in range(x.shape[1])
        )
        if len(names) != x.shape[1]:
            raise ValueError(
                "Number of covariate names does not match the covariate matrix width."
            )

        for array in (x, t, y, delta, s):
            array.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "s", s)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def features(self, t: ArrayLike | None = None) -> NDArray[np.float64]:
        """Design matrix [T, X], optionally with T replaced by shifted values."""
        t = self.t if t is None else as_vector(t, "t")
        return np.column_stack([t, self.x])

    def subset(self, indices: ArrayLike) -> "TwoPartDataset":
        indices = np.asarray(indices, dtype=int)
        return TwoPartDataset(
            x=self.x[indices],
            t=self.t[indices],
            y=self.y[indices],
            covariate_names=self.covariate_names,
            treatment_name=self.treatment_name,
            outcome_name=self.outcome_name,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.x, columns=list(self.covariate_names))
        frame.insert(0, self.treatment_name, self.t)
        frame.insert(0, self.outcome_name, self.y)
        return frame


@dataclass(frozen=True)
class OutcomeScaler:
    """Affine map y -> y / upper onto the unit interval, lower bound fixed at 0."""

    upper: float
    pad: float = DEFAULT_SCALER_PAD
    lower: float = 0.0

    def __post_init__(self) -> None:
        if not self.upper > 0:
            raise ValueError("Scaler upper bound must be positive.")
        if self.lower != 0.0:
            raise ValueError("Scaler lower bound is fixed at 0.")

    def scale(self, y: ArrayLike) -> NDArray[np.float64]:
        y = np.asarray(y, dtype=float)
        above = y > self.upper
        if np.any(above):
            logger.warning(
                "%d value(s) above the scaling bound %.6g were clamped.",
                int(above.sum()),
                self.upper,
            )
            y = np.minimum(y, self.upper)
        return y / self.upper

    def unscale(self, y_scaled: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(y_scaled, dtype=float) * self.upper


def fit_scaler(
    y: ArrayLike, delta: ArrayLike, pad: float = DEFAULT_SCALER_PAD
) -> OutcomeScaler:
    """Fits the (0, 1) scaling bound `upper = max(y) * (1 + pad)`."""
    y = as_vector(y, "y")
    delta = as_vector(delta, "delta")
    if pad <= 0:
        raise ValueError("Scaler pad must be positive.")
    if not np.any(delta == 1):
        raise NoPositiveOutcomesError("No positive outcomes: cannot fit the scaler.")
    upper = float(np.max(y)) * (1.0 + pad)
    logger.debug("Outcome scaler fitted with upper bound %.6g (pad=%g).", upper, pad)
    return OutcomeScaler(upper=upper, pad=pad)


def _read_frame(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path, sep=",", decimal=".", thousands=None, float_precision="round_trip"
        )
    except FileNotFoundError:
        raise DataError("Unable to locate file: %s" % path)
    except pd.errors.EmptyDataError:
        raise DataError("CSV file is empty: %s" % path)
    except pd.errors.ParserError as e:
        raise DataError("Unable to parse CSV file %s: %s" % (path, e))
    if frame.empty:
        raise DataError("CSV file has a header but no rows: %s" % path)
    return frame


def _numeric_column(frame: pd.DataFrame, column: str) -> NDArray[np.float64]:
    if column not in frame.columns:
        raise MissingColumnError(column=column, available_columns=list(frame.columns))
    raw = frame[column]
    missing = np.flatnonzero(raw.isna().to_numpy())
    if missing.size:
        # +2: header row and 1-based line numbers
        raise DataError(
            f"Missing value in column '{column}' at row {missing[0] + 2}."
        )
    values = pd.to_numeric(raw, errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy())
    if bad.size:
        raise DataError(
            f"Non-numeric value {raw.iloc[bad[0]]!r} in column '{column}' "
            f"at row {bad[0] + 2}."
        )
    return values.to_numpy(dtype=float)


def read_csv(
    path: str,
    outcome: str,
    treatment: str,
    covariates: list[str],
) -> TwoPartDataset:
    """
    Reads a dataset from a CSV file with a header row.

    Args:
    - path (str): Path to the CSV file ('.' decimal point, no thousands separators).
    - outcome (str): Name of the non-negative outcome column.
    - treatment (str): Name of the treatment column.
    - covariates (list[str]): Names of the numeric covariate columns.
    """
    if not covariates:
        raise DataError("At least one covariate column is required.")
    frame = _read_frame(path)
    y = _numeric_column(frame, outcome)
    t = _numeric_column(frame, treatment)
    x = np.column_stack([_numeric_column(frame, name) for name in covariates])
    logger.debug("Read %d rows from %s.", len(y), path)
    return TwoPartDataset(
        x=x,
        t=t,
        y=y,
        covariate_names=tuple(covariates),
        treatment_name=treatment,
        outcome_name=outcome,
    )


def read_column(path: str, column: str) -> NDArray[np.float64]:
    return _numeric_column(_read_frame(path), column)


def write_csv(dataset: TwoPartDataset, path: str) -> None:
    dataset.to_frame().to_csv(path, index=False, float_format="%.17g")
