import numpy as np
import pytest
from scipy.special import expit, logit

from twopart.enums import Basis, CvLoss, GlmFamily
from twopart.exceptions import ConfigError, ConvergenceError, DataError
from twopart.learners import (
    FeatureLayout,
    FittedModel,
    GlmSpec,
    cv_select,
    feature_layout,
    fit_glm,
    fit_selected,
    fit_tilt,
    index_layout,
    predict,
)


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(123)


def test_glm_spec_coerces_strings():
    spec = GlmSpec("gaussian-log", "main+squares")
    assert spec.family == GlmFamily.GAUSSIAN_LOG
    assert spec.basis == Basis.SQUARES
    assert spec.describe() == "gaussian-log/main+squares"


@pytest.mark.parametrize(
    "options, message",
    [
        ({"family": "poisson"}, "Invalid learner specification"),
        ({"tol": 0.0}, "tolerance must be positive"),
        ({"max_iter": 0}, "max_iter must be at least 1"),
        ({"ridge": -1.0}, "ridge must be non-negative"),
    ],
)
def test_glm_spec_invalid(options, message):
    with pytest.raises(ConfigError, match=message):
        GlmSpec(**options)


def test_feature_layout_squares_only_non_binary_columns():
    features = np.column_stack([[0, 1, 0, 1], [0.1, 0.5, 2.0, -1.0]])
    layout = feature_layout(features, Basis.SQUARES)
    assert layout.squared == (1,)
    expanded = layout.expand(features)
    assert expanded.shape == (4, 3)
    np.testing.assert_allclose(expanded[:, 2], features[:, 1] ** 2)


def test_feature_layout_intercept_only():
    layout = FeatureLayout(n_features=2, basis=Basis.INTERCEPT)
    assert layout.expand(np.ones((3, 2))).shape == (3, 0)


def test_feature_layout_width_mismatch():
    with pytest.raises(ValueError, match="Feature width mismatch"):
        FeatureLayout(n_features=2, basis=Basis.MAIN).expand(np.ones((3, 1)))


def test_index_layout_adds_clipped_powers():
    features = np.random.default_rng(8).normal(size=(50, 2))
    layout = index_layout(features, [1.0, -1.0])
    raw = features[:, 0] - features[:, 1]
    index = (raw - raw.mean()) / raw.std()
    expanded = layout.expand(features)
    assert expanded.shape == (50, 5)
    np.testing.assert_allclose(expanded[:, 2:], np.column_stack([index**2, index**3, index**4]))
    # out-of-range rows are clipped to the training range of the index
    far = layout.expand(np.array([[100.0, -100.0]]))
    assert far[0, 2] == pytest.approx(index.max() ** 2)


def test_index_layout_width_mismatch():
    with pytest.raises(ValueError, match="Index direction"):
        index_layout(np.ones((4, 2)), [1.0, 2.0, 3.0])


def test_index_basis_fits_single_index_curvature():
    x = np.random.default_rng(9).normal(size=(2000, 3))
    s = x @ np.array([1.0, -0.5, 0.25])
    y = s + s**2
    main = fit_glm(GlmSpec(GlmFamily.GAUSSIAN_IDENTITY, Basis.MAIN), x, y)
    index = fit_glm(GlmSpec(GlmFamily.GAUSSIAN_IDENTITY, Basis.INDEX), x, y)
    assert index.layout.direction is not None
    assert index.coefficients.shape == (1 + 3 + 3,)
    main_mse = np.mean((y - predict(main, x)) ** 2)
    index_mse = np.mean((y - predict(index, x)) ** 2)
    assert index_mse < 0.1 * main_mse


def test_gaussian_identity_recovers_exact_linear_fit(rng):
    x = rng.normal(size=(200, 2))
    y = 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1]
    model = fit_glm(GlmSpec(GlmFamily.GAUSSIAN_IDENTITY, ridge=0.0), x, y)
    assert model.converged
    np.testing.assert_allclose(model.coefficients, [1.0, 2.0, -3.0], atol=1e-8)


def test_binomial_logit_recovers_coefficients(rng):
    x = rng.normal(size=(20000, 2))
    p = expit(-0.5 + 1.0 * x[:, 0] - 0.7 * x[:, 1])
    y = (rng.uniform(size=20000) < p).astype(float)
    model = fit_glm(GlmSpec(GlmFamily.BINOMIAL_LOGIT), x, y)
    assert model.converged
    np.testing.assert_allclose(model.coefficients, [-0.5, 1.0, -0.7], atol=0.1)


def test_gaussian_log_recovers_coefficients(rng):
    x = rng.normal(size=(5000, 1))
    y = np.exp(0.3 + 0.5 * x[:, 0]) + rng.normal(scale=0.1, size=5000)
    model = fit_glm(GlmSpec(GlmFamily.GAUSSIAN_LOG), x, y)
    assert model.converged
    np.testing.assert_allclose(model.coefficients, [0.3, 0.5], atol=0.02)


def test_weighted_fit_with_offset_solves_score(rng):
    x = rng.normal(size=(500, 1))
    y = rng.uniform(size=500)
    w = rng.uniform(0.5, 2.0, size=500)
    o = rng.normal(scale=0.5, size=500)
    model = fit_glm(GlmSpec(GlmFamily.BINOMIAL_LOGIT, ridge=0.0), x, y, w, o)
    mu = predict(model, x, o)
    design = np.column_stack([np.ones(500), x])
    score = design.T @ (w * (y - mu))
    assert np.max(np.abs(score)) / w.sum() < 1e-8


def test_intercept_only_matches_weighted_mean():
    y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    w = np.array([1.0, 2.0, 1.0, 3.0, 1.0])
    model = fit_glm(GlmSpec(basis=Basis.INTERCEPT), np.ones((5, 1)), y, w)
    assert expit(model.coefficients[0]) == pytest.approx(4.0 / 8.0)


def test_predictions_are_clipped():
    model = FittedModel(
        coefficients=np.array([50.0]),
        spec=GlmSpec(basis=Basis.INTERCEPT),
        layout=FeatureLayout(n_features=1, basis=Basis.INTERCEPT),
    )
    assert predict(model, np.ones((2, 1)))[0] == pytest.approx(1 - 1e-5)


@pytest.mark.parametrize(
    "weights, error, message",
    [
        (np.array([1.0, -1.0, 1.0]), DataError, "non-negative"),
        (np.zeros(3), DataError, "Zero total weight"),
        (np.array([1.0, np.nan, 1.0]), DataError, "Non-finite weights entry at row 1"),
    ],
)
def test_fit_glm_invalid_weights(weights, error, message):
    with pytest.raises(error, match=message):
        fit_glm(GlmSpec(), np.ones((3, 1)), [0.0, 1.0, 0.0], weights)


def test_fit_glm_binomial_response_out_of_range():
    with pytest.raises(ValueError, match="must lie in"):
        fit_glm(GlmSpec(), np.ones((3, 1)), [0.0, 2.0, 0.0])


def test_cv_select_prefers_squares_for_quadratic_truth(rng):
    x = rng.normal(size=(600, 1))
    y = x[:, 0] ** 2 + rng.normal(scale=0.2, size=600)
    candidates = [
        GlmSpec(GlmFamily.GAUSSIAN_IDENTITY, Basis.MAIN),
        GlmSpec(GlmFamily.GAUSSIAN_IDENTITY, Basis.SQUARES),
    ]
    chosen = cv_select(candidates, x, y, folds=5, loss=CvLoss.MSE, seed=0)
    assert chosen.basis == Basis.SQUARES


def test_cv_select_single_candidate():
    spec = GlmSpec()
    assert cv_select([spec], np.ones((3, 1)), [0.0, 1.0, 1.0]) is spec


def test_cv_select_requires_candidates():
    with pytest.raises(ConfigError):
        cv_select([], np.ones((3, 1)), [0.0, 1.0, 1.0])


def test_fit_selected_refits_winner(rng):
    x = rng.normal(size=(300, 1))
    y = 2.0 * x[:, 0] + rng.normal(scale=0.1, size=300)
    candidates = [
        GlmSpec(GlmFamily.GAUSSIAN_IDENTITY, Basis.INTERCEPT),
        GlmSpec(GlmFamily.GAUSSIAN_IDENTITY, Basis.MAIN),
    ]
    model = fit_selected(candidates, x, y, folds=3)
    assert model.spec.basis == Basis.MAIN
    assert model.coefficients[1] == pytest.approx(2.0, abs=0.05)


def test_fit_tilt_solves_score(rng):
    y = rng.uniform(size=400)
    o = logit(np.clip(rng.uniform(size=400), 0.05, 0.95))
    w = rng.uniform(0.1, 3.0, size=400)
    result = fit_tilt(y, o, w)
    assert result.converged
    assert result.solver == "irls"
    score = np.sum(w * (y - expit(result.eps + o))) / np.sum(w)
    assert abs(score) < 1e-10


def test_fit_tilt_zero_when_already_solved():
    y = np.array([0.2, 0.4, 0.6])
    result = fit_tilt(y, np.full(3, logit(0.4)), np.ones(3))
    assert result.eps == pytest.approx(0.0, abs=1e-10)


def test_fit_tilt_falls_back_to_bounded_search(monkeypatch):
    def stuck_fit(spec, features, response, weights=None, offset=None):
        return FittedModel(
            coefficients=np.array([5.0]),
            spec=spec,
            layout=FeatureLayout(n_features=0, basis=Basis.INTERCEPT),
            converged=False,
            trace=[1.0],
        )

    monkeypatch.setattr("twopart.learners.fit_glm", stuck_fit)
    result = fit_tilt(np.array([0.2, 0.4, 0.6]), np.zeros(3), np.ones(3))
    assert result.solver == "bounded"
    assert result.eps == pytest.approx(logit(0.4), abs=1e-6)


def test_fit_tilt_raises_with_trace(monkeypatch):
    def stuck_fit(spec, features, response, weights=None, offset=None):
        return FittedModel(
            coefficients=np.array([0.0]),
            spec=spec,
            layout=FeatureLayout(n_features=0, basis=Basis.INTERCEPT),
            converged=False,
            trace=[1.0],
        )

    monkeypatch.setattr("twopart.learners.fit_glm", stuck_fit)
    # the root lies far outside the bounded search interval
    with pytest.raises(ConvergenceError) as exc_info:
        fit_tilt(np.array([0.5, 0.5]), np.full(2, -30.0), np.ones(2))
    assert exc_info.value.trace[0] == 1.0
