"""Weighted GLMs fitted by iteratively reweighted least squares (Fisher scoring),
basis expansion and a cross-validated discrete selector over candidate specs.

All nuisance regressions and the tilting (fluctuation) fits go through
`fit_glm`. The intercept is never penalized, so an intercept-only binomial
fit with offset `o` and weights `w` solves sum w (y - expit(eps + o)) = 0
exactly; that is the score equation of every tilting step.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize_scalar
from scipy.special import expit, xlogy

from .config import (
    DEFAULT_SELECTOR_FOLDS,
    PROBABILITY_CLIP,
    TILT_BOUNDS,
    TILT_SCORE_TOLERANCE,
    TILT_TOLERANCE,
)
from .enums import Basis, CvLoss, GlmFamily
from .exceptions import ConfigError, ConvergenceError, DataError, NumericalError
from .utils import as_matrix, as_vector, clip_probability, first_non_finite

logger = logging.getLogger("twopart")

MAX_STEP_HALVINGS = 30
INDEX_POWERS = (2, 3, 4)


@dataclass(frozen=True)
class GlmSpec:
    """Family, basis and solver controls of one candidate learner."""

    family: GlmFamily = GlmFamily.BINOMIAL_LOGIT
    basis: Basis = Basis.MAIN
    ridge: float = 1e-8
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "family", GlmFamily(self.family))
            object.__setattr__(self, "basis", Basis(self.basis))
        except ValueError as e:
            raise ConfigError(f"Invalid learner specification: {e}")
        if not self.tol > 0:
            raise ConfigError("Learner tolerance must be positive.")
        if self.max_iter < 1:
            raise ConfigError("Learner max_iter must be at least 1.")
        if self.ridge < 0:
            raise ConfigError("Learner ridge must be non-negative.")

    def describe(self) -> str:
        return f"{self.family.value}/{self.basis.value}"


@dataclass(frozen=True, eq=False)
class FeatureLayout:
    """Maps raw features to the expanded basis (intercept excluded)."""

    n_features: int
    basis: Basis
    squared: tuple[int, ...] = ()
    # main+index: pilot direction plus the standardization of its index
    direction: NDArray[np.float64] | None = None
    index_center: float = 0.0
    index_scale: float = 1.0
    index_range: tuple[float, float] = (-np.inf, np.inf)

    def expand(self, features: NDArray) -> NDArray:
        if features.shape[1] != self.n_features:
            raise ValueError(
                f"Feature width mismatch: model expects {self.n_features} "
                f"column(s), got {features.shape[1]}."
            )
        if self.basis == Basis.INTERCEPT:
            return np.empty((features.shape[0], 0))
        columns = [features]
        if self.squared:
            columns.append(features[:, list(self.squared)] ** 2)
        if self.direction is not None:
            index = np.clip(self.index(features), *self.index_range)
            columns.append(np.column_stack([index**p for p in INDEX_POWERS]))
        return np.hstack(columns)

    def index(self, features: NDArray) -> NDArray:
        return (features @ self.direction - self.index_center) / self.index_scale


def feature_layout(features: NDArray, basis: Basis) -> FeatureLayout:
    """Squares are added only for columns with more than two distinct values."""
    squared: tuple[int, ...] = ()
    if basis == Basis.SQUARES:
        squared = tuple(
            k for k in range(features.shape[1]) if np.unique(features[:, k]).size > 2
        )
    return FeatureLayout(n_features=features.shape[1], basis=basis, squared=squared)


def index_layout(features: NDArray, direction: ArrayLike) -> FeatureLayout:
    """
    Layout of the main+index basis: main effects plus powers of the standardized
    index `features @ direction`, clipped to its training range at prediction.
    """
    direction = as_vector(direction, "direction")
    if len(direction) != features.shape[1]:
        raise ValueError("Index direction does not match the feature width.")
    raw = features @ direction
    scale = float(raw.std())
    layout = FeatureLayout(
        n_features=features.shape[1],
        basis=Basis.INDEX,
        direction=direction,
        index_center=float(raw.mean()),
        index_scale=scale if scale > 0 else 1.0,
    )
    index = layout.index(features)
    return replace(layout, index_range=(float(index.min()), float(index.max())))


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Coefficients in the expanded basis: `[intercept, expanded columns...]`."""

    coefficients: NDArray[np.float64]
    spec: GlmSpec
    layout: FeatureLayout
    converged: bool = True
    n_iter: int = 0
    score: float = 0.0
    trace: list[float] = field(default_factory=list, repr=False)


# Family helpers: inverse link, d mu / d eta, variance function
def _inverse_link(family: GlmFamily, eta: NDArray) -> NDArray:
    if family == GlmFamily.BINOMIAL_LOGIT:
        return expit(eta)
    if family == GlmFamily.GAUSSIAN_LOG:
        return np.exp(np.clip(eta, -700, 700))
    return eta


def _mu_eta(family: GlmFamily, mu: NDArray) -> NDArray:
    if family == GlmFamily.BINOMIAL_LOGIT:
        return mu * (1.0 - mu)
    if family == GlmFamily.GAUSSIAN_LOG:
        return mu
    return np.ones_like(mu)


def _variance(family: GlmFamily, mu: NDArray) -> NDArray:
    if family == GlmFamily.BINOMIAL_LOGIT:
        return np.maximum(mu * (1.0 - mu), np.finfo(float).tiny)
    return np.ones_like(mu)


def _deviance(family: GlmFamily, y: NDArray, mu: NDArray, w: NDArray) -> float:
    if family == GlmFamily.BINOMIAL_LOGIT:
        mu = np.clip(mu, 1e-300, 1.0 - 1e-16)
        return float(-2.0 * np.sum(w * (xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu))))
    return float(np.sum(w * (y - mu) ** 2))


def _validate_inputs(
    spec: GlmSpec,
    features: ArrayLike,
    response: ArrayLike,
    weights: ArrayLike | None,
    offset: ArrayLike | None,
) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    x = as_matrix(features, "features")
    y = as_vector(response, "response")
    n = len(y)
    if x.shape[0] != n:
        raise ValueError("Features and response have different numbers of rows.")
    w = np.ones(n) if weights is None else as_vector(weights, "weights")
    o = np.zeros(n) if offset is None else as_vector(offset, "offset")
    if len(w) != n or len(o) != n:
        raise ValueError("Weights and offset must match the response length.")
    for name, values in (("features", x), ("response", y), ("weights", w), ("offset", o)):
        bad = first_non_finite(values)
        if bad is not None:
            raise DataError(f"Non-finite {name} entry at row {bad}.")
    if np.any(w < 0):
        raise DataError("Weights must be non-negative.")
    if not np.sum(w) > 0:
        raise DataError("Zero total weight: nothing to fit.")
    if spec.family == GlmFamily.BINOMIAL_LOGIT and (np.any(y < 0) or np.any(y > 1)):
        raise ValueError("Binomial response must lie in [0, 1].")
    return x, y, w, o


def _solve(information: NDArray, score: NDArray) -> NDArray:
    try:
        return scipy.linalg.solve(information, score, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError):
        return scipy.linalg.lstsq(information, score)[0]


def fit_glm(
    spec: GlmSpec,
    features: ArrayLike,
    response: ArrayLike,
    weights: ArrayLike | None = None,
    offset: ArrayLike | None = None,
) -> FittedModel:
    """
    Fits a weighted GLM with offset by Fisher scoring with step halving.

    Expanded columns are standardized internally; the returned coefficients are
    on the original expanded-basis scale. Convergence is declared when the
    largest score coordinate divided by the total weight falls below
    `spec.tol`; otherwise the model is returned with `converged=False`.
    The main+index basis first fits a main-effects pilot of the same family and
    uses its slopes as the index direction.
    """
    x, y, w, o = _validate_inputs(spec, features, response, weights, offset)
    if spec.basis == Basis.INDEX:
        pilot = fit_glm(replace(spec, basis=Basis.MAIN), x, y, w, o)
        layout = index_layout(x, pilot.coefficients[1:])
    else:
        layout = feature_layout(x, spec.basis)
    expanded = layout.expand(x)
    center = expanded.mean(axis=0)
    scale = expanded.std(axis=0)
    scale[scale == 0] = 1.0
    design = np.column_stack([np.ones(len(y)), (expanded - center) / scale])

    family = spec.family
    total_weight = float(np.sum(w))
    penalty = np.full(design.shape[1], spec.ridge * total_weight)
    penalty[0] = 0.0

    gamma = np.zeros(design.shape[1])
    if family == GlmFamily.GAUSSIAN_LOG:
        # exp(0) would start every mean at 1; start from the weighted mean instead
        gamma[0] = np.log(max(np.sum(w * y) / total_weight, 1e-10))

    def objective(coef: NDArray) -> float:
        mu = _inverse_link(family, design @ coef + o)
        return 0.5 * _deviance(family, y, mu, w) + 0.5 * float(
            np.sum(penalty * coef**2)
        )

    trace: list[float] = []
    converged = False
    n_iter = 0
    current = objective(gamma)
    for n_iter in range(spec.max_iter + 1):
        mu = _inverse_link(family, design @ gamma + o)
        mu_eta = _mu_eta(family, mu)
        variance = _variance(family, mu)
        score = design.T @ (w * (y - mu) * mu_eta / variance) - penalty * gamma
        normalized = float(np.max(np.abs(score))) / total_weight
        trace.append(normalized)
        if not np.isfinite(normalized):
            break
        if normalized < spec.tol:
            converged = True
            break
        if n_iter == spec.max_iter:
            break

        working = w * mu_eta**2 / variance
        information = (design * working[:, None]).T @ design + np.diag(penalty)
        step = _solve(information, score)

        for _ in range(MAX_STEP_HALVINGS):
            candidate = gamma + step
            value = objective(candidate)
            if np.isfinite(value) and value <= current + 1e-12 * abs(current):
                break
            step = step / 2.0
        else:
            logger.debug(
                "Step halving exhausted for %s at iteration %d.", spec.describe(), n_iter
            )
            break
        if np.max(np.abs(step)) < 1e-15 * (1.0 + np.max(np.abs(gamma))):
            # stalled at machine precision
            gamma = candidate
            break
        gamma, current = candidate, value

    if not converged:
        mu = _inverse_link(family, design @ gamma + o)
        score = design.T @ (
            w * (y - mu) * _mu_eta(family, mu) / _variance(family, mu)
        ) - penalty * gamma
        final = float(np.max(np.abs(score))) / total_weight
        converged = bool(final < spec.tol)
        trace.append(final)
        if not converged:
            logger.debug(
                "IRLS for %s stopped after %d iteration(s) with score %.3e.",
                spec.describe(),
                n_iter,
                final,
            )

    slopes = gamma[1:] / scale
    intercept = gamma[0] - float(slopes @ center)
    return FittedModel(
        coefficients=np.concatenate([[intercept], slopes]),
        spec=spec,
        layout=layout,
        converged=converged,
        n_iter=n_iter,
        score=trace[-1],
        trace=trace,
    )


def linear_predictor(
    model: FittedModel, features: ArrayLike, offset: ArrayLike | None = None
) -> NDArray[np.float64]:
    x = as_matrix(features, "features")
    expanded = model.layout.expand(x)
    eta = model.coefficients[0] + expanded @ model.coefficients[1:]
    if offset is not None:
        eta = eta + as_vector(offset, "offset")
    return eta


def predict(
    model: FittedModel, features: ArrayLike, offset: ArrayLike | None = None
) -> NDArray[np.float64]:
    """Predictions on the response scale; binomial output is clipped."""
    mu = _inverse_link(model.spec.family, linear_predictor(model, features, offset))
    if model.spec.family == GlmFamily.BINOMIAL_LOGIT:
        mu = clip_probability(mu, PROBABILITY_CLIP)
    return mu


def _loss(loss: CvLoss, y: NDArray, prediction: NDArray, w: NDArray) -> float:
    if loss == CvLoss.LOGLOSS:
        p = clip_probability(prediction, PROBABILITY_CLIP)
        value = -np.sum(w * (xlogy(y, p) + xlogy(1.0 - y, 1.0 - p)))
    else:
        value = np.sum(w * (y - prediction) ** 2)
    return float(value / np.sum(w))


def kfold_indices(n: int, folds: int, seed: int) -> list[NDArray[np.int_]]:
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.array_split(rng.permutation(n), folds)


def cv_risks(
    candidates: Sequence[GlmSpec],
    features: ArrayLike,
    response: ArrayLike,
    weights: ArrayLike | None = None,
    folds: int = DEFAULT_SELECTOR_FOLDS,
    loss: CvLoss = CvLoss.MSE,
    seed: int = 0,
) -> list[float]:
    """Cross-validated loss of each candidate; `inf` for candidates that fail."""
    x = as_matrix(features, "features")
    y = as_vector(response, "response")
    w = np.ones(len(y)) if weights is None else as_vector(weights, "weights")
    if folds < 2:
        raise ConfigError("The selector needs at least 2 folds.")
    if len(y) < folds:
        raise DataError(f"Cannot split {len(y)} observations into {folds} folds.")
    loss = CvLoss(loss)

    splits = kfold_indices(len(y), folds, seed)
    risks = []
    for spec in candidates:
        total = 0.0
        try:
            for k, valid in enumerate(splits):
                train = np.concatenate([s for j, s in enumerate(splits) if j != k])
                model = fit_glm(spec, x[train], y[train], w[train])
                prediction = predict(model, x[valid])
                if first_non_finite(prediction) is not None:
                    raise NumericalError("Non-finite predictions.")
                total += _loss(loss, y[valid], prediction, w[valid]) * len(valid)
            risks.append(total / len(y))
        except (NumericalError, DataError, ValueError, scipy.linalg.LinAlgError) as e:
            logger.warning("Candidate %s failed during selection: %s", spec.describe(), e)
            risks.append(float("inf"))
    return risks


def cv_select(
    candidates: Sequence[GlmSpec],
    features: ArrayLike,
    response: ArrayLike,
    weights: ArrayLike | None = None,
    folds: int = DEFAULT_SELECTOR_FOLDS,
    loss: CvLoss = CvLoss.MSE,
    seed: int = 0,
) -> GlmSpec:
    """Returns the candidate with the smallest cross-validated loss (first on ties)."""
    if not candidates:
        raise ConfigError("At least one candidate learner is required.")
    if len(candidates) == 1:
        return candidates[0]
    risks = cv_risks(candidates, features, response, weights, folds, loss, seed)
    if not np.any(np.isfinite(risks)):
        raise NumericalError("All candidate learners failed during selection.")
    best = int(np.argmin(risks))
    logger.debug(
        "Selected %s (cv risks: %s).",
        candidates[best].describe(),
        {c.describe(): round(r, 6) for c, r in zip(candidates, risks)},
    )
    return candidates[best]


def fit_selected(
    candidates: Sequence[GlmSpec],
    features: ArrayLike,
    response: ArrayLike,
    weights: ArrayLike | None = None,
    folds: int = DEFAULT_SELECTOR_FOLDS,
    loss: CvLoss = CvLoss.MSE,
    seed: int = 0,
) -> FittedModel:
    """Discrete super learner: select by cross-validation, then refit the winner."""
    spec = cv_select(candidates, features, response, weights, folds, loss, seed)
    return fit_glm(spec, features, response, weights)


@dataclass(frozen=True)
class TiltResult:
    eps: float
    score: float
    converged: bool
    solver: str
    trace: list[float] = field(default_factory=list, repr=False)


def _tilt_score(eps: float, y: NDArray, o: NDArray, w: NDArray) -> float:
    return float(abs(np.sum(w * (y - expit(eps + o)))) / np.sum(w))


def fit_tilt(
    response: ArrayLike,
    offset: ArrayLike,
    weights: ArrayLike,
    tol: float = TILT_TOLERANCE,
) -> TiltResult:
    """
    Intercept-only logistic fluctuation with offset and weights.

    Solves sum w (y - expit(eps + offset)) = 0. Falls back to bounded scalar
    minimization of the weighted log loss over eps in [-10, 10] when IRLS does
    not reach the score tolerance.
    """
    y = as_vector(response, "response")
    o = as_vector(offset, "offset")
    w = as_vector(weights, "weights")
    spec = GlmSpec(GlmFamily.BINOMIAL_LOGIT, Basis.INTERCEPT, ridge=0.0, tol=tol)
    model = fit_glm(spec, np.empty((len(y), 0)), y, w, o)
    eps = float(model.coefficients[0])
    score = _tilt_score(eps, y, o, w)
    if model.converged or score < TILT_SCORE_TOLERANCE:
        return TiltResult(eps, score, model.converged, "irls", model.trace)

    logger.warning(
        "Tilting IRLS did not converge (score %.3e); using bounded line search.", score
    )

    def negative_loglik(value: float) -> float:
        p = expit(value + o)
        return float(-np.sum(w * (xlogy(y, p) + xlogy(1.0 - y, 1.0 - p))))

    result = minimize_scalar(
        negative_loglik,
        bounds=TILT_BOUNDS,
        method="bounded",
        options={"xatol": 1e-12, "maxiter": 500},
    )
    eps = float(result.x)
    score = _tilt_score(eps, y, o, w)
    trace = model.trace + [score]
    if score >= TILT_SCORE_TOLERANCE:
        logger.error("Tilting fit failed: eps=%.6g, score=%.3e.", eps, score)
        raise ConvergenceError("Tilting fit failed after line search.", trace=trace)
    return TiltResult(eps, score, True, "bounded", trace)
