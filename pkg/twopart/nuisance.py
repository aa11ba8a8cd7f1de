"""Cross-fitting and estimation of the nuisance parameters eta = (m, q, r).

Every prediction for observation i comes from models trained on the folds that
do not contain i. Predictions are produced at the natural treatment and at the
policy-shifted treatment; the shifted values (and, for randomized policies,
the randomizer draws behind them) are computed once and shared by all fits.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import ArrayLike, NDArray

from .config import (
    DEFAULT_BASES,
    DEFAULT_FOLDS,
    DEFAULT_ODDS_CAP,
    DEFAULT_SELECTOR_FOLDS,
    PROBABILITY_CLIP,
)
from .data import OutcomeScaler, TwoPartDataset, fit_scaler
from .enums import Basis, CvLoss, GlmFamily, RatioMethod
from .exceptions import ConfigError, ConvergenceError, DataError, FoldError
from .learners import FittedModel, GlmSpec, fit_glm, fit_selected, predict
from .policy import Identity, Policy, analytic_ratio
from .utils import clip_probability, first_non_finite

logger = logging.getLogger("twopart")

TWO_PART = "two_part"
SINGLE = "single"


@dataclass(frozen=True, eq=False)
class CrossFitPlan:
    """Partition of 0..n-1 into J validation folds with per-observation lookup."""

    folds: tuple[NDArray[np.int_], ...]
    j_of: NDArray[np.int_]
    seed: int = 0
    crossfit: bool = True

    @property
    def n(self) -> int:
        return len(self.j_of)

    @property
    def J(self) -> int:
        return len(self.folds)

    def validation(self, j: int) -> NDArray[np.int_]:
        return self.folds[j]

    def training(self, j: int) -> NDArray[np.int_]:
        if not self.crossfit:
            return np.arange(self.n)
        return np.flatnonzero(self.j_of != j)


def make_plan(
    n: int, J: int = DEFAULT_FOLDS, seed: int = 0, crossfit: bool = True
) -> CrossFitPlan:
    """
    Random balanced partition into J folds, deterministic given `seed`.

    `J = 1` is accepted only with `crossfit=False`, in which case every model is
    trained on the full sample.
    """
    if n < 1:
        raise ConfigError("Cannot build folds for an empty sample.")
    if J > n:
        raise ConfigError(f"Cannot split {n} observations into {J} folds.")
    if J < 1 or (J == 1 and crossfit):
        raise ConfigError("Cross-fitting needs at least 2 folds (use no-crossfit for 1).")
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = tuple(np.sort(fold) for fold in np.array_split(rng.permutation(n), J))
    j_of = np.empty(n, dtype=int)
    for j, fold in enumerate(folds):
        j_of[fold] = j
    return CrossFitPlan(folds=folds, j_of=j_of, seed=seed, crossfit=crossfit and J > 1)


def _binary_candidates(bases: Sequence[Basis]) -> tuple[GlmSpec, ...]:
    return tuple(GlmSpec(GlmFamily.BINOMIAL_LOGIT, basis) for basis in bases)


def _outcome_candidates(bases: Sequence[Basis]) -> tuple[GlmSpec, ...]:
    candidates = list(_binary_candidates(bases))
    for basis in (Basis.MAIN, Basis.INDEX):
        if basis in bases:
            candidates.append(GlmSpec(GlmFamily.GAUSSIAN_LOG, basis))
    return tuple(candidates)


@dataclass(frozen=True)
class LearnerConfig:
    """Candidate libraries and options for the nuisance fits."""

    m_candidates: tuple[GlmSpec, ...]
    q_candidates: tuple[GlmSpec, ...]
    r_candidates: tuple[GlmSpec, ...]
    g_candidates: tuple[GlmSpec, ...]
    outcome_candidates: tuple[GlmSpec, ...]
    selector_folds: int = DEFAULT_SELECTOR_FOLDS
    ratio_method: RatioMethod = RatioMethod.AUTO
    odds_cap: float | None = DEFAULT_ODDS_CAP
    n_jobs: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratio_method", RatioMethod(self.ratio_method))
        if self.selector_folds < 2:
            raise ConfigError("The selector needs at least 2 folds.")
        if self.odds_cap is not None and not self.odds_cap > 0:
            raise ConfigError("Odds cap must be positive (or None to disable it).")
        for name in ("m", "q", "r", "g", "outcome"):
            if not getattr(self, f"{name}_candidates"):
                raise ConfigError(f"Empty candidate library for '{name}'.")


def default_learners(
    bases: Sequence[Basis | str] = DEFAULT_BASES, **options
) -> LearnerConfig:
    bases = tuple(Basis(b) for b in bases)
    return LearnerConfig(
        m_candidates=_outcome_candidates(bases),
        q_candidates=_binary_candidates(bases),
        r_candidates=_binary_candidates(bases),
        g_candidates=_binary_candidates(bases),
        outcome_candidates=_outcome_candidates(bases),
        **options,
    )


@dataclass(frozen=True, eq=False)
class NuisanceTable:
    """
    Cross-fitted nuisance predictions, one entry per observation.

    m values (two-part `m_*` and single-regression `mbar_*`) are stored on the
    scaled (0, 1) outcome scale; use the `*_unscaled` accessors for outcome units.
    """

    r_hat: NDArray[np.float64]
    t_shift: NDArray[np.float64]
    scaler: OutcomeScaler
    q_nat: NDArray[np.float64] | None = None
    q_shift: NDArray[np.float64] | None = None
    m_nat: NDArray[np.float64] | None = None
    m_shift: NDArray[np.float64] | None = None
    mbar_nat: NDArray[np.float64] | None = None
    mbar_shift: NDArray[np.float64] | None = None
    flags: dict = field(default_factory=dict)

    _VECTORS = (
        "r_hat",
        "t_shift",
        "q_nat",
        "q_shift",
        "m_nat",
        "m_shift",
        "mbar_nat",
        "mbar_shift",
    )

    def __post_init__(self) -> None:
        for name in self._VECTORS:
            values = getattr(self, name)
            if values is None:
                continue
            values = np.asarray(values, dtype=float)
            bad = first_non_finite(values)
            if bad is not None:
                raise DataError(f"Non-finite nuisance value '{name}' at row {bad}.")
            object.__setattr__(self, name, values)
        if np.any(self.r_hat < 0):
            raise DataError("Density ratio estimates must be non-negative.")

    @property
    def n(self) -> int:
        return len(self.r_hat)

    @property
    def has_two_part(self) -> bool:
        return self.q_nat is not None and self.m_nat is not None

    @property
    def has_single(self) -> bool:
        return self.mbar_nat is not None

    @property
    def m_nat_unscaled(self) -> NDArray[np.float64]:
        return self.scaler.unscale(self.m_nat)

    @property
    def m_shift_unscaled(self) -> NDArray[np.float64]:
        return self.scaler.unscale(self.m_shift)

    def subset(self, indices: ArrayLike) -> "NuisanceTable":
        indices = np.asarray(indices, dtype=int)
        updates = {
            name: getattr(self, name)[indices]
            for name in self._VECTORS
            if getattr(self, name) is not None
        }
        return replace(self, **updates)

    def single_part_view(self) -> "NuisanceTable":
        """The single outcome regression cast as a two-part table with q = 1."""
        if not self.has_single:
            raise ValueError("No single outcome regression in this nuisance table.")
        ones = np.ones(self.n)
        return replace(
            self,
            q_nat=ones,
            q_shift=ones,
            m_nat=self.mbar_nat,
            m_shift=self.mbar_shift,
        )

    def to_frame(self) -> pd.DataFrame:
        columns = {
            name: getattr(self, name)
            for name in self._VECTORS
            if getattr(self, name) is not None
        }
        return pd.DataFrame(columns)


def _run_folds(
    plan: CrossFitPlan, fit_fold: Callable[[int], tuple], n_jobs: int
) -> list[tuple]:
    if n_jobs == 1:
        return [fit_fold(j) for j in range(plan.J)]
    return Parallel(n_jobs=n_jobs)(delayed(fit_fold)(j) for j in range(plan.J))


def _assemble(plan: CrossFitPlan, results: list[tuple], position: int) -> NDArray:
    out = np.empty(plan.n)
    for j, result in enumerate(results):
        out[plan.validation(j)] = result[position]
    return out


def _fit_model(
    candidates: Sequence[GlmSpec],
    features: NDArray,
    response: NDArray,
    loss: CvLoss,
    learners: LearnerConfig,
    seed: int,
    weights: NDArray | None = None,
) -> FittedModel:
    folds = min(learners.selector_folds, len(response))
    if folds < 2:
        return fit_glm(candidates[0], features, response, weights)
    return fit_selected(candidates, features, response, weights, folds, loss, seed)


def _convergence_flags(results: list[tuple], position: int) -> dict:
    # a fold entry is one model or the list of models fitted in that fold
    folds = [
        entry if isinstance(entry, list) else [entry]
        for entry in (result[position] for result in results)
    ]
    return {
        "selected": sorted(
            {model.spec.describe() for models in folds for model in models}
        ),
        "nonconverged_folds": int(
            sum(not all(model.converged for model in models) for models in folds)
        ),
    }


def _shifted(dataset: TwoPartDataset, policy: Policy, t_shift: NDArray | None) -> NDArray:
    return policy.apply(dataset.t, dataset.x) if t_shift is None else t_shift


def _fit_m_folds(plan, dataset, policy, learners, scaler, t_shift):
    t_shift = _shifted(dataset, policy, t_shift)
    scaler = scaler or fit_scaler(dataset.y, dataset.delta)
    features = dataset.features()
    features_shift = dataset.features(t_shift)
    y_scaled = scaler.scale(dataset.y)

    def fit_fold(j: int) -> tuple:
        train = plan.training(j)
        positive = train[dataset.delta[train] == 1]
        if positive.size == 0:
            logger.error("Training fold %d has no positive outcomes.", j)
            raise FoldError("no positive outcomes in the training fold.", fold=j)
        if positive.size < dataset.p + 2:
            logger.warning(
                "Training fold %d has only %d positive outcome(s).", j, positive.size
            )
        model = _fit_model(
            learners.m_candidates,
            features[positive],
            y_scaled[positive],
            CvLoss.MSE,
            learners,
            learners.seed + j,
        )
        valid = plan.validation(j)
        return (
            clip_probability(predict(model, features[valid]), PROBABILITY_CLIP),
            clip_probability(predict(model, features_shift[valid]), PROBABILITY_CLIP),
            model,
        )

    return _run_folds(plan, fit_fold, learners.n_jobs)


def fit_m(
    plan: CrossFitPlan,
    dataset: TwoPartDataset,
    policy: Policy,
    learners: LearnerConfig,
    scaler: OutcomeScaler | None = None,
    t_shift: NDArray | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Intensity m(t, x) = E[Y | T, X, delta = 1] on the scaled outcome, among positives."""
    results = _fit_m_folds(plan, dataset, policy, learners, scaler, t_shift)
    return _assemble(plan, results, 0), _assemble(plan, results, 1)


def _fit_q_folds(plan, dataset, policy, learners, t_shift):
    t_shift = _shifted(dataset, policy, t_shift)
    features = dataset.features()
    features_shift = dataset.features(t_shift)
    delta = dataset.delta.astype(float)

    def fit_fold(j: int) -> tuple:
        train = plan.training(j)
        classes = np.unique(delta[train])
        if classes.size < 2:
            logger.error("Training fold %d has a single outcome class.", j)
            raise FoldError(
                "the hurdle indicator takes a single value in the training fold.",
                fold=j,
            )
        model = _fit_model(
            learners.q_candidates,
            features[train],
            delta[train],
            CvLoss.LOGLOSS,
            learners,
            learners.seed + j,
        )
        valid = plan.validation(j)
        return (
            predict(model, features[valid]),
            predict(model, features_shift[valid]),
            model,
        )

    return _run_folds(plan, fit_fold, learners.n_jobs)


def fit_q(
    plan: CrossFitPlan,
    dataset: TwoPartDataset,
    policy: Policy,
    learners: LearnerConfig,
    t_shift: NDArray | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Hurdle probability q(t, x) = P(delta = 1 | T, X)."""
    results = _fit_q_folds(plan, dataset, policy, learners, t_shift)
    return _assemble(plan, results, 0), _assemble(plan, results, 1)


def _fit_outcome_folds(plan, dataset, policy, learners, scaler, t_shift):
    t_shift = _shifted(dataset, policy, t_shift)
    scaler = scaler or fit_scaler(dataset.y, dataset.delta)
    features = dataset.features()
    features_shift = dataset.features(t_shift)
    y_scaled = scaler.scale(dataset.y)

    def fit_fold(j: int) -> tuple:
        train = plan.training(j)
        model = _fit_model(
            learners.outcome_candidates,
            features[train],
            y_scaled[train],
            CvLoss.MSE,
            learners,
            learners.seed + j,
        )
        valid = plan.validation(j)
        return (
            clip_probability(predict(model, features[valid]), PROBABILITY_CLIP),
            clip_probability(predict(model, features_shift[valid]), PROBABILITY_CLIP),
            model,
        )

    return _run_folds(plan, fit_fold, learners.n_jobs)


def fit_outcome(
    plan: CrossFitPlan,
    dataset: TwoPartDataset,
    policy: Policy,
    learners: LearnerConfig,
    scaler: OutcomeScaler | None = None,
    t_shift: NDArray | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Single regression E[Y | T, X] over all observations, zeros included."""
    results = _fit_outcome_folds(plan, dataset, policy, learners, scaler, t_shift)
    return _assemble(plan, results, 0), _assemble(plan, results, 1)


def fit_propensity(
    plan: CrossFitPlan, dataset: TwoPartDataset, learners: LearnerConfig
) -> NDArray[np.float64]:
    """Cross-fitted P(T = 1 | X) for a binary treatment."""
    if not np.all(np.isin(dataset.t, (0.0, 1.0))):
        raise DataError("The propensity score needs a binary (0/1) treatment.")

    def fit_fold(j: int) -> tuple:
        train = plan.training(j)
        if np.unique(dataset.t[train]).size < 2:
            raise FoldError("the treatment takes a single value in the training fold.", fold=j)
        model = _fit_model(
            learners.g_candidates,
            dataset.x[train],
            dataset.t[train],
            CvLoss.LOGLOSS,
            learners,
            learners.seed + j,
        )
        return (predict(model, dataset.x[plan.validation(j)]), model)

    return _assemble(plan, _run_folds(plan, fit_fold, learners.n_jobs), 0)


def resolve_ratio_method(
    policy: Policy, dataset: TwoPartDataset, method: RatioMethod
) -> RatioMethod:
    binary = bool(np.all(np.isin(dataset.t, (0.0, 1.0))))
    analytic_possible = binary and policy.supports_analytic_ratio
    if method == RatioMethod.AUTO:
        return RatioMethod.ANALYTIC if analytic_possible else RatioMethod.CLASSIFICATION
    if method == RatioMethod.ANALYTIC and not analytic_possible:
        raise ConfigError(
            f"Analytic density ratio unavailable for policy '{policy.describe()}' "
            "(requires a binary treatment and a non-shift policy)."
        )
    return method


def _ratio_features(t: NDArray, x: NDArray) -> NDArray:
    return np.column_stack([t, x, t[:, None] * x])


def _ratio_arm(
    models: list[FittedModel],
    fold: int,
    arm: float,
    stacked: tuple[NDArray, NDArray, NDArray],
    target: NDArray,
    learners: LearnerConfig,
) -> NDArray:
    """Odds for the validation rows `target` of one arm of a binary treatment."""
    x, labels, weights = stacked
    if not np.any(labels == 0.0):
        raise FoldError(
            f"treatment arm {arm:g} is absent from the training fold.", fold=fold
        )
    if not np.any(labels == 1.0):
        # the policy never moves mass to this arm
        return np.zeros(len(target))
    model = _fit_model(
        learners.r_candidates,
        x,
        labels,
        CvLoss.LOGLOSS,
        learners,
        learners.seed + fold,
        weights,
    )
    models.append(model)
    p = predict(model, target)
    return p / (1.0 - p)


def _classification_ratio(
    plan, dataset, policy, learners, t_shift
) -> tuple[NDArray, list]:
    # randomized policies stack every reachable treatment with its probability
    if policy.randomized:
        outcomes = policy.transitions(dataset.t, dataset.x)
    else:
        outcomes = [(t_shift, 1.0)]
    binary = bool(np.all(np.isin(dataset.t, (0.0, 1.0))))
    copies = 1 + len(outcomes)

    def fit_fold(j: int) -> tuple:
        train, valid = plan.training(j), plan.validation(j)
        t = np.concatenate([dataset.t[train]] + [values[train] for values, _ in outcomes])
        x = np.vstack([dataset.x[train]] * copies)
        labels = np.repeat([0.0] + [1.0] * len(outcomes), train.size)
        weights = np.repeat([1.0] + [w for _, w in outcomes], train.size)
        t_valid, x_valid = dataset.t[valid], dataset.x[valid]
        models: list[FittedModel] = []
        if not binary:
            model = _fit_model(
                learners.r_candidates,
                _ratio_features(t, x),
                labels,
                CvLoss.LOGLOSS,
                learners,
                learners.seed + j,
                weights,
            )
            models.append(model)
            p = predict(model, _ratio_features(t_valid, x_valid))
            return (p / (1.0 - p), models)

        # the odds at t = 0 and at t = 1 are unrelated functions of X
        odds = np.empty(valid.size)
        for arm in (0.0, 1.0):
            target = t_valid == arm
            if not target.any():
                continue
            rows = t == arm
            odds[target] = _ratio_arm(
                models,
                j,
                arm,
                (x[rows], labels[rows], weights[rows]),
                x_valid[target],
                learners,
            )
        return (odds, models)

    results = _run_folds(plan, fit_fold, learners.n_jobs)
    return _assemble(plan, results, 0), results


def fit_r(
    plan: CrossFitPlan,
    dataset: TwoPartDataset,
    policy: Policy,
    learners: LearnerConfig,
    t_shift: NDArray | None = None,
) -> NDArray[np.float64]:
    """
    Density ratio r = g^d(T, X) / g(T, X) at the natural treatment.

    Classification route: per fold, stack the training rows at their natural
    treatment (label 0) and at the shifted treatment (label 1), fit a binomial
    classifier and take the odds at the natural treatment. Randomized policies
    stack every treatment they can reach, weighted by its probability. A binary
    treatment gets one classifier on X per arm; otherwise the classifier uses
    (treatment, X, treatment * X). Analytic route: closed form given a cross-fitted
    propensity score. Odds are capped at `learners.odds_cap` when set.
    """
    r_hat, _ = _fit_r_with_flags(plan, dataset, policy, learners, t_shift)
    return r_hat


def _fit_r_with_flags(plan, dataset, policy, learners, t_shift) -> tuple[NDArray, dict]:
    if isinstance(policy, Identity):
        return np.ones(dataset.n), {"method": "identity"}
    t_shift = _shifted(dataset, policy, t_shift)
    method = resolve_ratio_method(policy, dataset, learners.ratio_method)
    if method == RatioMethod.ANALYTIC:
        g1 = fit_propensity(plan, dataset, learners)
        r_hat = analytic_ratio(policy, dataset.t, g1, dataset.x)
        flags = {"method": method.value}
    else:
        r_hat, results = _classification_ratio(plan, dataset, policy, learners, t_shift)
        flags = {"method": method.value, **_convergence_flags(results, 1)}
        if flags["nonconverged_folds"] == plan.J:
            raise ConvergenceError(
                "Density ratio classifier did not converge in any of the "
                f"{plan.J} fold(s) (selected: {flags['selected']})."
            )
        if flags["nonconverged_folds"]:
            logger.warning(
                "Density ratio classifier did not converge in %d of %d fold(s).",
                flags["nonconverged_folds"],
                plan.J,
            )

    capped = 0
    if learners.odds_cap is not None:
        capped = int(np.sum(r_hat > learners.odds_cap))
        r_hat = np.minimum(r_hat, learners.odds_cap)
        if capped:
            logger.warning(
                "%d density ratio value(s) capped at %g.", capped, learners.odds_cap
            )
    flags.update(capped=capped, min=float(r_hat.min()), max=float(r_hat.max()))
    return r_hat, flags


def estimate_nuisance(
    dataset: TwoPartDataset,
    policy: Policy,
    plan: CrossFitPlan,
    learners: LearnerConfig | None = None,
    components: Sequence[str] = (TWO_PART, SINGLE),
    scaler: OutcomeScaler | None = None,
    r_hat: NDArray | None = None,
) -> NuisanceTable:
    """
    Fits every nuisance parameter the requested estimators need.

    Args:
    - components: `"two_part"` fits (q, m) for the two-step estimator,
      `"single"` fits the combined regression E[Y | T, X] for the comparators.
    - scaler: outcome scaler; fitted on the full sample when omitted.
    - r_hat: precomputed density ratio (e.g. a known truth); skips the ratio fit.
    """
    learners = learners or default_learners()
    if plan.n != dataset.n:
        raise ConfigError("Cross-fitting plan and dataset sizes differ.")
    unknown = set(components) - {TWO_PART, SINGLE}
    if unknown or not components:
        raise ConfigError(f"Unknown nuisance components: {sorted(unknown)}.")
    scaler = scaler or fit_scaler(dataset.y, dataset.delta)
    t_shift = policy.apply(dataset.t, dataset.x)
    logger.debug(
        "Estimating nuisance for policy '%s' (n=%d, J=%d, components=%s).",
        policy.describe(),
        dataset.n,
        plan.J,
        list(components),
    )

    flags: dict = {}
    if r_hat is None:
        r_hat, flags["r"] = _fit_r_with_flags(plan, dataset, policy, learners, t_shift)
    else:
        flags["r"] = {"method": "supplied"}

    values: dict = {}
    if TWO_PART in components:
        m_results = _fit_m_folds(plan, dataset, policy, learners, scaler, t_shift)
        q_results = _fit_q_folds(plan, dataset, policy, learners, t_shift)
        values.update(
            m_nat=_assemble(plan, m_results, 0),
            m_shift=_assemble(plan, m_results, 1),
            q_nat=_assemble(plan, q_results, 0),
            q_shift=_assemble(plan, q_results, 1),
        )
        flags["m"] = _convergence_flags(m_results, 2)
        flags["q"] = _convergence_flags(q_results, 2)
    if SINGLE in components:
        results = _fit_outcome_folds(plan, dataset, policy, learners, scaler, t_shift)
        values.update(
            mbar_nat=_assemble(plan, results, 0),
            mbar_shift=_assemble(plan, results, 1),
        )
        flags["mbar"] = _convergence_flags(results, 2)

    return NuisanceTable(
        r_hat=np.asarray(r_hat, dtype=float),
        t_shift=t_shift,
        scaler=scaler,
        flags=flags,
        **values,
    )
