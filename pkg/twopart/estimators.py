"""Two-step targeted minimum-loss estimation (hTMLE) of psi = E[Y(T^d)] and the
single-regression comparators (standard TMLE, AIPW).

The two-step estimator fluctuates the intensity fit m among positive outcomes
first, then fluctuates the hurdle fit q with weights r * m (tilted m, scaled
outcome). Both fluctuations are pooled across folds: one eps_m and one eps_q.
"""

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import NDArray
from scipy.stats import norm

from .config import DEFAULT_BOOTSTRAP_B, MAX_BOOTSTRAP_RETRIES
from .data import OutcomeScaler, TwoPartDataset
from .enums import EstimatorMethod, VarianceMethod
from .exceptions import NoPositiveOutcomesError, NumericalError
from .learners import TiltResult, fit_tilt
from .nuisance import (
    SINGLE,
    TWO_PART,
    CrossFitPlan,
    LearnerConfig,
    NuisanceTable,
    estimate_nuisance,
    make_plan,
)
from .policy import Policy
from .utils import safe_logit, shift_logit, validate_method, validate_variance_method

logger = logging.getLogger("twopart")

Z_975 = float(norm.ppf(0.975))
SCORE_RATIO_TOLERANCE = 1e-5


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """Point estimate, normal-approximation 95% CI and the EIF values behind it."""

    method: EstimatorMethod
    psi_hat: float
    std_err: float
    ci_low: float
    ci_high: float
    eif_values: NDArray[np.float64] = field(repr=False)
    variance_method: str = VarianceMethod.EIF.value
    eps_m: float | None = None
    eps_q: float | None = None
    eps: float | None = None
    policy: str = ""
    seed: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.eif_values)

    def to_dict(self, include_eif: bool = False) -> dict:
        data = {
            "method": self.method.value,
            "policy": self.policy,
            "n": self.n,
            "psi_hat": self.psi_hat,
            "std_err": self.std_err,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "variance_method": self.variance_method,
            "eps_m": self.eps_m,
            "eps_q": self.eps_q,
            "eps": self.eps,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }
        if include_eif:
            data["eif_values"] = self.eif_values.tolist()
        return data

    def to_json(self, include_eif: bool = False) -> str:
        return json.dumps(self.to_dict(include_eif), default=float)


def eif(nuisance: NuisanceTable, dataset: TwoPartDataset, psi: float) -> NDArray:
    """D = r (Y - q m) + q^d m^d - psi, with m in outcome units."""
    return (
        nuisance.r_hat * (dataset.y - nuisance.q_nat * nuisance.m_nat_unscaled)
        + nuisance.q_shift * nuisance.m_shift_unscaled
        - psi
    )


def eif_alt(nuisance: NuisanceTable, dataset: TwoPartDataset, psi: float) -> NDArray:
    """D = r m (delta - q) + delta r (S - m) + q^d m^d - psi, with m in outcome units."""
    m_nat = nuisance.m_nat_unscaled
    positive_part = np.where(dataset.delta == 1, dataset.s - m_nat, 0.0)
    return (
        nuisance.r_hat * m_nat * (dataset.delta - nuisance.q_nat)
        + dataset.delta * nuisance.r_hat * positive_part
        + nuisance.q_shift * nuisance.m_shift_unscaled
        - psi
    )


def tilt_m(
    nuisance: NuisanceTable,
    dataset: TwoPartDataset,
    scaler: OutcomeScaler | None = None,
) -> tuple[TiltResult, NDArray, NDArray]:
    """
    Fluctuates the intensity fit among positive outcomes.

    Returns the tilt result (eps_m) and the updated m at the natural and shifted
    treatment, both on the scaled outcome scale.
    """
    scaler = scaler or nuisance.scaler
    positive = dataset.delta == 1
    if not np.any(positive):
        raise NoPositiveOutcomesError()
    tilt = fit_tilt(
        response=scaler.scale(dataset.y[positive]),
        offset=safe_logit(nuisance.m_nat[positive]),
        weights=nuisance.r_hat[positive],
    )
    return (
        tilt,
        shift_logit(nuisance.m_nat, tilt.eps),
        shift_logit(nuisance.m_shift, tilt.eps),
    )


def tilt_q(
    nuisance: NuisanceTable, dataset: TwoPartDataset, m_nat_tilted: NDArray
) -> tuple[TiltResult, NDArray, NDArray]:
    """Fluctuates the hurdle fit over all observations with weights r * m^eps."""
    tilt = fit_tilt(
        response=dataset.delta.astype(float),
        offset=safe_logit(nuisance.q_nat),
        weights=nuisance.r_hat * m_nat_tilted,
    )
    return (
        tilt,
        shift_logit(nuisance.q_nat, tilt.eps),
        shift_logit(nuisance.q_shift, tilt.eps),
    )


@dataclass(frozen=True)
class _PointEstimate:
    psi: float
    table: NuisanceTable
    tilts: dict


def _htmle_point(nuisance: NuisanceTable, dataset: TwoPartDataset) -> _PointEstimate:
    if not nuisance.has_two_part:
        raise ValueError("The two-step estimator needs q and m in the nuisance table.")
    m_tilt, m_nat, m_shift = tilt_m(nuisance, dataset)
    tilted = replace(nuisance, m_nat=m_nat, m_shift=m_shift)
    q_tilt, q_nat, q_shift = tilt_q(tilted, dataset, m_nat)
    tilted = replace(tilted, q_nat=q_nat, q_shift=q_shift)
    psi = float(np.mean(q_shift * tilted.m_shift_unscaled))
    return _PointEstimate(psi, tilted, {"m": m_tilt, "q": q_tilt})


def _tmle_point(nuisance: NuisanceTable, dataset: TwoPartDataset) -> _PointEstimate:
    if not nuisance.has_single:
        raise ValueError("Standard TMLE needs the single outcome regression.")
    scaler = nuisance.scaler
    tilt = fit_tilt(
        response=scaler.scale(dataset.y),
        offset=safe_logit(nuisance.mbar_nat),
        weights=nuisance.r_hat,
    )
    tilted = replace(
        nuisance,
        mbar_nat=shift_logit(nuisance.mbar_nat, tilt.eps),
        mbar_shift=shift_logit(nuisance.mbar_shift, tilt.eps),
    ).single_part_view()
    psi = float(np.mean(tilted.m_shift_unscaled))
    return _PointEstimate(psi, tilted, {"single": tilt})


def _aipw_point(nuisance: NuisanceTable, dataset: TwoPartDataset) -> _PointEstimate:
    if not nuisance.has_single:
        raise ValueError("AIPW needs the single outcome regression.")
    view = nuisance.single_part_view()
    psi = float(
        np.mean(
            view.r_hat * (dataset.y - view.m_nat_unscaled) + view.m_shift_unscaled
        )
    )
    return _PointEstimate(psi, view, {})


_POINT_ESTIMATORS = {
    EstimatorMethod.HTMLE: _htmle_point,
    EstimatorMethod.TMLE: _tmle_point,
    EstimatorMethod.AIPW: _aipw_point,
}


def variance_eif(eif_values: NDArray) -> float:
    """Standard error sqrt(Var(D) / n) from the estimated influence function."""
    eif_values = np.asarray(eif_values, dtype=float)
    if eif_values.size < 2:
        raise NumericalError("At least two observations are needed for a variance.")
    std_err = float(np.sqrt(np.var(eif_values, ddof=1) / eif_values.size))
    if std_err == 0.0:
        logger.warning("Influence function is constant: standard error is zero.")
    return std_err


@dataclass(frozen=True)
class BootstrapResult:
    std_err: float
    estimates: NDArray[np.float64] = field(repr=False)
    redraws: int = 0


def _resample(n: int, rng: np.random.Generator) -> NDArray[np.int_]:
    return rng.integers(0, n, size=n)


def _bootstrap_replicate(
    method: EstimatorMethod,
    nuisance: NuisanceTable,
    dataset: TwoPartDataset,
    seed: np.random.SeedSequence,
) -> tuple[float, int]:
    rng = np.random.Generator(np.random.PCG64(seed))
    for redraw in range(MAX_BOOTSTRAP_RETRIES + 1):
        indices = _resample(dataset.n, rng)
        if method != EstimatorMethod.HTMLE or np.any(dataset.delta[indices] == 1):
            point = _POINT_ESTIMATORS[method](
                nuisance.subset(indices), dataset.subset(indices)
            )
            return point.psi, redraw
    raise NumericalError(
        f"Bootstrap resample without positive outcomes after "
        f"{MAX_BOOTSTRAP_RETRIES} redraws."
    )


def variance_bootstrap(
    dataset: TwoPartDataset,
    nuisance: NuisanceTable,
    B: int = DEFAULT_BOOTSTRAP_B,
    seed: int = 0,
    method: EstimatorMethod | str = EstimatorMethod.HTMLE,
    n_jobs: int = 1,
) -> BootstrapResult:
    """
    Non-parametric bootstrap of the targeting steps with the nuisance fits held fixed.

    Each replicate resamples n rows of the data and of the nuisance table, reruns
    the tilts (hTMLE: both; TMLE: the single tilt; AIPW: the one-step mean) and
    returns psi. The standard error is the standard deviation of the B values.
    """
    method = validate_method(method)
    if B < 2:
        raise ValueError("The bootstrap needs B >= 2 replicates.")
    seeds = np.random.SeedSequence(seed).spawn(B)
    if n_jobs == 1:
        outputs = [
            _bootstrap_replicate(method, nuisance, dataset, s) for s in seeds
        ]
    else:
        outputs = Parallel(n_jobs=n_jobs)(
            delayed(_bootstrap_replicate)(method, nuisance, dataset, s) for s in seeds
        )
    estimates = np.array([psi for psi, _ in outputs])
    redraws = int(sum(r for _, r in outputs))
    std_err = float(np.std(estimates, ddof=1))
    logger.debug(
        "Bootstrap (%s, B=%d): se=%.6g, redraws=%d.", method.value, B, std_err, redraws
    )
    return BootstrapResult(std_err=std_err, estimates=estimates, redraws=redraws)


def _components_for(method: EstimatorMethod) -> tuple[str, ...]:
    return (TWO_PART,) if method == EstimatorMethod.HTMLE else (SINGLE,)


def estimate(
    method: EstimatorMethod | str,
    dataset: TwoPartDataset,
    policy: Policy,
    plan: CrossFitPlan | None = None,
    learners: LearnerConfig | None = None,
    variance_method: VarianceMethod | str = VarianceMethod.EIF,
    B: int = DEFAULT_BOOTSTRAP_B,
    seed: int = 0,
    nuisance: NuisanceTable | None = None,
    n_jobs: int = 1,
) -> EstimateReport:
    """Runs one estimator end to end and packages the report."""
    method = validate_method(method)
    variance_method = validate_variance_method(variance_method)
    if nuisance is None:
        plan = plan or make_plan(dataset.n, seed=seed)
        nuisance = estimate_nuisance(
            dataset, policy, plan, learners, components=_components_for(method)
        )

    point = _POINT_ESTIMATORS[method](nuisance, dataset)
    eif_values = eif(point.table, dataset, point.psi)
    mean_eif = float(np.mean(eif_values))
    sd_eif = float(np.std(eif_values, ddof=1)) if dataset.n > 1 else 0.0

    if variance_method == VarianceMethod.BOOTSTRAP:
        bootstrap = variance_bootstrap(dataset, nuisance, B, seed, method, n_jobs)
        std_err = bootstrap.std_err
        variance_label = f"bootstrap({B})"
    else:
        std_err = variance_eif(eif_values)
        variance_label = VarianceMethod.EIF.value

    diagnostics = {
        "mean_eif": mean_eif,
        "sd_eif": sd_eif,
        "score_solved": bool(abs(mean_eif) <= SCORE_RATIO_TOLERANCE * sd_eif)
        if method != EstimatorMethod.AIPW
        else True,
        "r_min": float(nuisance.r_hat.min()),
        "r_max": float(nuisance.r_hat.max()),
        "tilts": {
            name: {"eps": t.eps, "score": t.score, "solver": t.solver}
            for name, t in point.tilts.items()
        },
        "nuisance": nuisance.flags,
        "degenerate_variance": std_err == 0.0,
    }
    if not diagnostics["score_solved"]:
        logger.warning(
            "%s: mean EIF %.3e exceeds %.0e x sd(EIF).",
            method.value,
            mean_eif,
            SCORE_RATIO_TOLERANCE,
        )
    if point.psi < 0:
        logger.warning(
            "%s estimate is negative (%.6g): extreme weights in the one-step correction.",
            method.value,
            point.psi,
        )

    tilts = point.tilts
    report = EstimateReport(
        method=method,
        psi_hat=point.psi,
        std_err=std_err,
        ci_low=point.psi - Z_975 * std_err,
        ci_high=point.psi + Z_975 * std_err,
        eif_values=eif_values,
        variance_method=variance_label,
        eps_m=tilts["m"].eps if "m" in tilts else None,
        eps_q=tilts["q"].eps if "q" in tilts else None,
        eps=tilts["single"].eps if "single" in tilts else None,
        policy=policy.describe(),
        seed=seed,
        diagnostics=diagnostics,
    )
    logger.info(
        "%s: psi=%.6g se=%.6g CI=[%.6g, %.6g]",
        method.value,
        report.psi_hat,
        report.std_err,
        report.ci_low,
        report.ci_high,
    )
    return report


def htmle(
    dataset: TwoPartDataset,
    policy: Policy,
    plan: CrossFitPlan | None = None,
    learners: LearnerConfig | None = None,
    variance_method: VarianceMethod | str = VarianceMethod.EIF,
    **kwargs,
) -> EstimateReport:
    """Two-step TMLE: psi = mean(q^{d, eps_q} * m^{d, eps_m})."""
    return estimate(
        EstimatorMethod.HTMLE, dataset, policy, plan, learners, variance_method, **kwargs
    )


def tmle_standard(
    dataset: TwoPartDataset,
    policy: Policy,
    plan: CrossFitPlan | None = None,
    learners: LearnerConfig | None = None,
    variance_method: VarianceMethod | str = VarianceMethod.EIF,
    **kwargs,
) -> EstimateReport:
    """Single-regression TMLE with one fluctuation of E[Y | T, X] weighted by r."""
    return estimate(
        EstimatorMethod.TMLE, dataset, policy, plan, learners, variance_method, **kwargs
    )


def aipw(
    dataset: TwoPartDataset,
    policy: Policy,
    plan: CrossFitPlan | None = None,
    learners: LearnerConfig | None = None,
    variance_method: VarianceMethod | str = VarianceMethod.EIF,
    **kwargs,
) -> EstimateReport:
    """One-step estimator: psi = mean(r (Y - mbar) + mbar^d)."""
    return estimate(
        EstimatorMethod.AIPW, dataset, policy, plan, learners, variance_method, **kwargs
    )


def components_for(methods: Sequence[EstimatorMethod | str]) -> tuple[str, ...]:
    """Nuisance components needed to run all `methods` off one table."""
    needed: list[str] = []
    for method in methods:
        for component in _components_for(validate_method(method)):
            if component not in needed:
                needed.append(component)
    return tuple(needed)


@dataclass(frozen=True)
class ContrastReport:
    """Difference psi_a - psi_b of two policies estimated on the same data."""

    label: str
    difference: float
    std_err: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return {
            "contrast": self.label,
            "difference": self.difference,
            "std_err": self.std_err,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


def contrast(report_a: EstimateReport, report_b: EstimateReport) -> ContrastReport:
    """
    Contrast of two estimates on the same observations.

    The standard error comes from the difference of the two EIF vectors, which
    keeps the covariance between the estimates.
    """
    if report_a.n != report_b.n:
        raise ValueError("Contrasted reports must come from the same observations.")
    difference = report_a.psi_hat - report_b.psi_hat
    std_err = variance_eif(report_a.eif_values - report_b.eif_values)
    return ContrastReport(
        label=f"{report_a.policy} - {report_b.policy} ({report_a.method.value})",
        difference=difference,
        std_err=std_err,
        ci_low=difference - Z_975 * std_err,
        ci_high=difference + Z_975 * std_err,
    )


def reports_frame(reports: Sequence[EstimateReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        diagnostics = report.diagnostics
        rows.append(
            {
                "estimator": report.method.value,
                "policy": report.policy,
                "psi_hat": report.psi_hat,
                "std_err": report.std_err,
                "ci_low": report.ci_low,
                "ci_high": report.ci_high,
                "variance": report.variance_method,
                "mean_eif": diagnostics.get("mean_eif"),
                "eps_m": report.eps_m,
                "eps_q": report.eps_q,
                "eps": report.eps,
                "r_min": diagnostics.get("r_min"),
                "r_max": diagnostics.get("r_max"),
            }
        )
    return pd.DataFrame(rows)


def format_reports(reports: Sequence[EstimateReport]) -> str:
    """Aligned human-readable table, one row per report."""
    frame = reports_frame(reports)
    return frame.to_string(
        index=False, na_rep="-", float_format=lambda value: f"{value:.6g}"
    )
