import numpy as np
import pytest

from twopart.enums import EstimatorMethod, VarianceMethod
from twopart.utils import (
    as_matrix,
    as_vector,
    clip_probability,
    first_non_finite,
    shift_logit,
    validate_lengths,
    validate_method,
    validate_variance_method,
)


def test_as_vector_from_list():
    values = as_vector([1, 2, 3], "t")
    assert values.dtype == float
    assert values.shape == (3,)


def test_as_vector_invalid_type():
    with pytest.raises(TypeError) as exc_info:
        as_vector(["a", "b"], "t")
    assert "Invalid data type for t attribute" in str(exc_info.value)


def test_as_vector_invalid_shape():
    with pytest.raises(ValueError, match="expected a 1-d array"):
        as_vector([[1, 2], [3, 4]], "y")


def test_as_matrix_promotes_vector():
    assert as_matrix([1.0, 2.0], "x").shape == (2, 1)


def test_validate_lengths():
    assert validate_lengths(a=np.zeros(3), b=np.ones(3)) == 3
    with pytest.raises(ValueError, match="Inconsistent lengths"):
        validate_lengths(a=np.zeros(3), b=np.ones(2))


@pytest.mark.parametrize(
    "values, expected",
    [
        (np.array([1.0, 2.0]), None),
        (np.array([1.0, np.nan, np.inf]), 1),
        (np.array([[1.0, 2.0], [3.0, np.inf]]), 1),
    ],
)
def test_first_non_finite(values, expected):
    assert first_non_finite(values) == expected


def test_clip_probability():
    clipped = clip_probability(np.array([0.0, 0.5, 1.0]))
    assert clipped[0] == pytest.approx(1e-5)
    assert clipped[1] == 0.5
    assert clipped[2] == pytest.approx(1 - 1e-5)


def test_shift_logit_zero_is_identity():
    values = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(shift_logit(values, 0.0), values, atol=1e-15)


def test_shift_logit_is_monotone_in_eps():
    values = np.array([0.2, 0.7])
    assert np.all(shift_logit(values, 0.5) > values)
    assert np.all(shift_logit(values, -0.5) < values)


@pytest.mark.parametrize("method", ["htmle", "TMLE", "aipw"])
def test_validate_method(method):
    assert validate_method(method) == EstimatorMethod(method.lower())


def test_validate_method_invalid():
    with pytest.raises(ValueError) as exc_info:
        validate_method("ols")
    assert "Allowed estimators: ['htmle', 'tmle', 'aipw']" in str(exc_info.value)


def test_validate_variance_method():
    assert validate_variance_method("Bootstrap") == VarianceMethod.BOOTSTRAP
    with pytest.raises(ValueError, match="Allowed methods"):
        validate_variance_method("sandwich")


@pytest.mark.parametrize("method", list(EstimatorMethod))
def test_validate_method_accepts_members(method):
    assert validate_method(method) is method


@pytest.mark.parametrize("method", list(VarianceMethod))
def test_validate_variance_method_accepts_members(method):
    assert validate_variance_method(method) is method
