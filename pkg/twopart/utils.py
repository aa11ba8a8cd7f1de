from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, logit

from .config import PROBABILITY_CLIP
from .enums import EstimatorMethod, VarianceMethod


def as_vector(values: ArrayLike, name: str) -> NDArray[np.float64]:
    """Returns a one-dimensional float array, rejecting other shapes."""
    try:
        array = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise TypeError(
            f"Invalid data type for {name} attribute. Required type: numeric array."
        )
    if array.ndim != 1:
        raise ValueError(f"Invalid shape for {name}: expected a 1-d array.")
    return array


def as_matrix(values: ArrayLike, name: str) -> NDArray[np.float64]:
    """Returns a two-dimensional float array; 1-d input becomes a single column."""
    try:
        array = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise TypeError(
            f"Invalid data type for {name} attribute. Required type: numeric matrix."
        )
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise ValueError(f"Invalid shape for {name}: expected a 2-d array.")
    return array


def validate_lengths(**arrays: NDArray) -> int:
    lengths = {name: len(array) for name, array in arrays.items()}
    if len(set(lengths.values())) > 1:
        raise ValueError("Inconsistent lengths: %s." % lengths)
    return next(iter(lengths.values()))


def first_non_finite(values: NDArray) -> int | None:
    """Index of the first NaN/Inf entry (row index for matrices), if any."""
    bad = ~np.isfinite(values)
    if bad.ndim > 1:
        bad = bad.any(axis=1)
    hits = np.flatnonzero(bad)
    return int(hits[0]) if hits.size else None


def clip_probability(values: NDArray, bound: float = PROBABILITY_CLIP) -> NDArray:
    return np.clip(values, bound, 1.0 - bound)


def safe_logit(values: NDArray, bound: float = PROBABILITY_CLIP) -> NDArray:
    return logit(clip_probability(values, bound))


def shift_logit(values: NDArray, eps: float) -> NDArray:
    """expit(eps + logit(values)): the fluctuation used by every tilting step."""
    return expit(eps + safe_logit(values))


def _member_value(value: str | Enum) -> str:
    # str() of a (str, Enum) member is "Class.NAME", not its value
    return value.value if isinstance(value, Enum) else str(value).lower()


def validate_method(method: str | EstimatorMethod) -> EstimatorMethod:
    allowed = [member.value for member in EstimatorMethod]
    try:
        return EstimatorMethod(_member_value(method))
    except ValueError:
        raise ValueError("Invalid estimator. Allowed estimators: %s." % allowed)


def validate_variance_method(method: str | VarianceMethod) -> VarianceMethod:
    allowed = [member.value for member in VarianceMethod]
    try:
        return VarianceMethod(_member_value(method))
    except ValueError:
        raise ValueError("Invalid variance method. Allowed methods: %s." % allowed)
