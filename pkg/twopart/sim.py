"""Simulation study: the two-part data generating mechanism, its true value
oracle and a Monte Carlo harness reporting absolute bias, Monte Carlo variance,
MSE and 95% CI coverage per estimator.

DGM (X ~ N(0, I_4), exp(1) noise U):
    P(T = 1 | X)         = expit(beta_p - X1 + 0.5 X2 - 0.25 X3 - 0.1 X4)
    P(delta = 1 | T, X)  = expit(alpha_delta - 0.4 X1^2 + 0.1 X2 + 0.8 X3 - 0.3 X4 + 2T)
    S                    = exp(0.1 + 0.2 X1 + 0.4 X2 + 0.8 X3 + 0.3 X4 + 2T) + U
    Y                    = delta * S
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import NDArray
from scipy.special import expit

from .config import DEFAULT_FOLDS, DEFAULT_ORACLE_DRAWS
from .data import TwoPartDataset
from .enums import Basis, EstimatorMethod, VarianceMethod
from .estimators import components_for, estimate
from .exceptions import TwoPartError
from .nuisance import (
    TWO_PART,
    LearnerConfig,
    default_learners,
    estimate_nuisance,
    make_plan,
)
from .policy import Policy, Static, analytic_ratio
from .utils import validate_method

logger = logging.getLogger("twopart")

N_COVARIATES = 4
ORACLE_CHUNK = 1_000_000


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def true_g1(x: NDArray, beta_p: float) -> NDArray:
    return expit(beta_p - x[:, 0] + 0.5 * x[:, 1] - 0.25 * x[:, 2] - 0.1 * x[:, 3])


def true_q(t: NDArray, x: NDArray, alpha_delta: float) -> NDArray:
    return expit(
        alpha_delta
        - 0.4 * x[:, 0] ** 2
        + 0.1 * x[:, 1]
        + 0.8 * x[:, 2]
        - 0.3 * x[:, 3]
        + 2.0 * t
    )


def _intensity_index(t: NDArray, x: NDArray) -> NDArray:
    return np.exp(
        0.1 + 0.2 * x[:, 0] + 0.4 * x[:, 1] + 0.8 * x[:, 2] + 0.3 * x[:, 3] + 2.0 * t
    )


def true_m(t: NDArray, x: NDArray) -> NDArray:
    """E[S | T, X] = exp(linear index) + E[U], with E[U] = 1."""
    return _intensity_index(t, x) + 1.0


def true_ratio(policy: Policy, t: NDArray, x: NDArray, beta_p: float) -> NDArray:
    return analytic_ratio(policy, t, true_g1(x, beta_p), x)


@dataclass(frozen=True)
class DgmConfig:
    n: int
    beta_p: float = 0.0
    alpha_delta: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("DGM sample size must be at least 1.")


def generate(config: DgmConfig) -> TwoPartDataset:
    """Draws one dataset; bit-reproducible given the config (seed included)."""
    rng = _generator(config.seed)
    x = rng.standard_normal((config.n, N_COVARIATES))
    t = (rng.uniform(size=config.n) < true_g1(x, config.beta_p)).astype(float)
    delta = rng.uniform(size=config.n) < true_q(t, x, config.alpha_delta)
    u = rng.exponential(1.0, size=config.n)
    y = np.where(delta, _intensity_index(t, x) + u, 0.0)
    return TwoPartDataset(
        x=x,
        t=t,
        y=y,
        covariate_names=tuple(f"x{k + 1}" for k in range(N_COVARIATES)),
    )


def true_psi(
    policy: Policy,
    alpha_delta: float = 0.0,
    n_oracle: int = DEFAULT_ORACLE_DRAWS,
    seed: int = 0,
    beta_p: float = 0.0,
) -> float:
    """
    Monte Carlo oracle for psi = E[q(T^d, X) m(T^d, X)].

    Uses the closed-form hurdle and intensity components, so only X, the
    natural T (and the policy randomizer) are simulated. `beta_p` matters only
    for policies that depend on the natural treatment.
    """
    rng = _generator(seed)
    total, remaining = 0.0, n_oracle
    while remaining > 0:
        size = min(ORACLE_CHUNK, remaining)
        x = rng.standard_normal((size, N_COVARIATES))
        t = (rng.uniform(size=size) < true_g1(x, beta_p)).astype(float)
        t_d = policy.apply(t, x, rng=rng)
        total += float(np.sum(true_q(t_d, x, alpha_delta) * true_m(t_d, x)))
        remaining -= size
    psi = total / n_oracle
    logger.debug(
        "Oracle psi for '%s' (alpha_delta=%g, draws=%d): %.6f",
        policy.describe(),
        alpha_delta,
        n_oracle,
        psi,
    )
    return psi


@dataclass(frozen=True)
class EstimatorMetrics:
    abs_bias: float
    mc_variance: float
    mse: float
    coverage: float
    mean_std_err: float
    successes: int
    failures: int


@dataclass(frozen=True)
class StudyResult:
    config: DgmConfig
    psi_true: float
    replicates: int
    metrics: dict[str, EstimatorMetrics]
    records: pd.DataFrame = field(repr=False, compare=False, default=None)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for method, m in self.metrics.items():
            rows.append(
                {
                    "n": self.config.n,
                    "beta_p": self.config.beta_p,
                    "alpha_delta": self.config.alpha_delta,
                    "estimator": method,
                    "psi_true": self.psi_true,
                    "replicates": self.replicates,
                    "failures": m.failures,
                    "abs_bias": m.abs_bias,
                    "mc_variance": m.mc_variance,
                    "mse": m.mse,
                    "coverage": m.coverage,
                    "mean_std_err": m.mean_std_err,
                }
            )
        return pd.DataFrame(rows)


def _failure(e: Exception) -> str:
    if isinstance(e, TwoPartError):
        return str(e)
    return f"{type(e).__name__}: {e}"


def run_replicate(
    config: DgmConfig,
    methods: Sequence[EstimatorMethod],
    policy: Policy,
    folds: int = DEFAULT_FOLDS,
    variance_method: VarianceMethod = VarianceMethod.EIF,
    learners: LearnerConfig | None = None,
    B: int = 200,
) -> list[dict]:
    """
    Fits every estimator on one generated dataset.

    Any exception raised inside the replicate becomes an error record.
    """
    learners = learners or default_learners()
    records = []
    try:
        dataset = generate(config)
        plan = make_plan(dataset.n, folds, seed=config.seed)
        nuisance = estimate_nuisance(
            dataset, policy, plan, learners, components=components_for(methods)
        )
    except Exception as e:
        error = _failure(e)
        logger.warning("Replicate seed=%d failed in nuisance fitting: %s", config.seed, error)
        return [{"seed": config.seed, "estimator": m.value, "error": error} for m in methods]

    for method in methods:
        record = {"seed": config.seed, "estimator": method.value, "error": None}
        try:
            report = estimate(
                method,
                dataset,
                policy,
                variance_method=variance_method,
                B=B,
                seed=config.seed,
                nuisance=nuisance,
            )
            record.update(
                psi_hat=report.psi_hat,
                std_err=report.std_err,
                ci_low=report.ci_low,
                ci_high=report.ci_high,
            )
        except Exception as e:
            record["error"] = _failure(e)
            logger.warning(
                "Replicate seed=%d, %s failed: %s", config.seed, method.value, record["error"]
            )
        records.append(record)
    return records


def summarize(records: pd.DataFrame, psi_true: float) -> EstimatorMetrics:
    """Metrics of one estimator over its replicate records."""
    ok = records[records["error"].isna()]
    failures = len(records) - len(ok)
    if ok.empty:
        nan = float("nan")
        return EstimatorMetrics(nan, nan, nan, nan, nan, 0, failures)
    psi = ok["psi_hat"].to_numpy(dtype=float)
    covered = (ok["ci_low"] <= psi_true) & (psi_true <= ok["ci_high"])
    return EstimatorMetrics(
        abs_bias=float(abs(np.mean(psi) - psi_true)),
        mc_variance=float(np.var(psi, ddof=1)) if psi.size > 1 else 0.0,
        mse=float(np.mean((psi - psi_true) ** 2)),
        coverage=float(np.mean(covered)),
        mean_std_err=float(ok["std_err"].mean()),
        successes=int(len(ok)),
        failures=failures,
    )


def grid(
    sizes: Sequence[int],
    beta_ps: Sequence[float] = (0.0,),
    alpha_deltas: Sequence[float] = (0.0,),
) -> list[DgmConfig]:
    return [
        DgmConfig(n=n, beta_p=bp, alpha_delta=ad)
        for n, bp, ad in product(sizes, beta_ps, alpha_deltas)
    ]


def run_study(
    configs: Sequence[DgmConfig],
    methods: Sequence[EstimatorMethod | str] = tuple(EstimatorMethod),
    policy: Policy | None = None,
    replicates: int = 1000,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    variance_method: VarianceMethod = VarianceMethod.EIF,
    learners: LearnerConfig | None = None,
    n_oracle: int = DEFAULT_ORACLE_DRAWS,
    n_jobs: int = 1,
    B: int = 200,
) -> list[StudyResult]:
    """
    Monte Carlo study over a grid of DGM settings.

    Replicate b of every cell uses seed `seed + b`. Replicates run in parallel
    with `n_jobs`; failed fits are counted per estimator and excluded from the
    metrics.
    """
    if replicates < 2:
        raise ValueError("A study needs at least 2 replicates.")
    policy = policy or Static(value=1.0)
    methods = [validate_method(m) for m in methods]
    learners = learners or default_learners()
    oracle_cache: dict[tuple[float, float], float] = {}

    results = []
    for cell in configs:
        key = (cell.alpha_delta, cell.beta_p)
        if key not in oracle_cache:
            oracle_cache[key] = true_psi(
                policy, cell.alpha_delta, n_oracle, seed, beta_p=cell.beta_p
            )
        psi_true = oracle_cache[key]
        logger.info(
            "Study cell n=%d beta_p=%g alpha_delta=%g: %d replicate(s), psi=%.4f",
            cell.n,
            cell.beta_p,
            cell.alpha_delta,
            replicates,
            psi_true,
        )
        replicate_configs = [
            DgmConfig(cell.n, cell.beta_p, cell.alpha_delta, seed + b)
            for b in range(replicates)
        ]
        args = (methods, policy, folds, variance_method, learners, B)
        if n_jobs == 1:
            outputs = [run_replicate(c, *args) for c in replicate_configs]
        else:
            outputs = Parallel(n_jobs=n_jobs)(
                delayed(run_replicate)(c, *args) for c in replicate_configs
            )

        records = pd.DataFrame([r for output in outputs for r in output])
        metrics = {
            method.value: summarize(
                records[records["estimator"] == method.value], psi_true
            )
            for method in methods
        }
        for method, m in metrics.items():
            if m.failures:
                logger.warning(
                    "%s failed in %d of %d replicate(s).", method, m.failures, replicates
                )
        results.append(
            StudyResult(
                config=cell,
                psi_true=psi_true,
                replicates=replicates,
                metrics=metrics,
                records=records,
            )
        )
    return results


def study_frame(results: Sequence[StudyResult]) -> pd.DataFrame:
    return pd.concat([result.to_frame() for result in results], ignore_index=True)


def write_study_csv(results: Sequence[StudyResult], path: str) -> None:
    study_frame(results).to_csv(path, index=False, float_format="%.6f")


def format_study_table(results: Sequence[StudyResult]) -> str:
    """
    Text table with rows n x metric and columns estimator x beta_p, one block
    per alpha_delta.
    """
    frame = study_frame(results)
    long = frame.melt(
        id_vars=["n", "beta_p", "alpha_delta", "estimator", "psi_true"],
        value_vars=["abs_bias", "mc_variance", "mse", "coverage"],
        var_name="metric",
    )
    labels = {"abs_bias": "|Bias|", "mc_variance": "Var.", "mse": "MSE", "coverage": "Coverage"}
    order = {name: k for k, name in enumerate(labels)}
    blocks = []
    for alpha_delta, block in long.groupby("alpha_delta", sort=False):
        block = block.assign(order=block["metric"].map(order))
        table = block.pivot_table(
            index=["n", "order", "metric"],
            columns=["estimator", "beta_p"],
            values="value",
            sort=False,
        )
        table = table.droplevel("order").rename(index=labels, level="metric")
        psi = block["psi_true"].iloc[0]
        blocks.append(
            f"alpha_delta = {alpha_delta:g}; psi = {psi:.2f}\n"
            + table.to_string(float_format=lambda value: f"{value:.2f}")
        )
    return "\n\n".join(blocks)


def run_double_robustness(
    sizes: Sequence[int] = (1000, 5000, 20000),
    replicates: int = 50,
    seed: int = 0,
    beta_p: float = 0.0,
    alpha_delta: float = 0.0,
    folds: int = DEFAULT_FOLDS,
    n_oracle: int = DEFAULT_ORACLE_DRAWS,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """
    Two misspecification arms of the two-step estimator under `static:1`:

    - `ratio_correct`: true density ratio, intercept-only (q, m) fits;
    - `outcome_correct`: (q, m) fitted with the default learner library,
      density ratio forced to 1.

    Returns one row per (arm, n) with the mean absolute error, the absolute
    mean bias and its Monte Carlo standard error over the replicates.
    """
    policy = Static(value=1.0)
    psi_true = true_psi(policy, alpha_delta, n_oracle, seed, beta_p=beta_p)
    arms = {
        "ratio_correct": default_learners(bases=(Basis.INTERCEPT,)),
        "outcome_correct": default_learners(),
    }

    def one(arm: str, n: int, b: int) -> float:
        dataset = generate(DgmConfig(n, beta_p, alpha_delta, seed + b))
        if arm == "ratio_correct":
            r_hat = true_ratio(policy, dataset.t, dataset.x, beta_p)
        else:
            r_hat = np.ones(n)
        nuisance = estimate_nuisance(
            dataset,
            policy,
            make_plan(n, folds, seed=seed + b),
            arms[arm],
            components=(TWO_PART,),
            r_hat=r_hat,
        )
        return estimate(EstimatorMethod.HTMLE, dataset, policy, nuisance=nuisance).psi_hat

    tasks = [(arm, n, b) for arm in arms for n in sizes for b in range(replicates)]
    if n_jobs == 1:
        values = [one(*task) for task in tasks]
    else:
        values = Parallel(n_jobs=n_jobs)(delayed(one)(*task) for task in tasks)

    frame = pd.DataFrame(tasks, columns=["arm", "n", "replicate"])
    frame["error"] = np.asarray(values) - psi_true
    summary = (
        frame.groupby(["arm", "n"], sort=False)["error"]
        .agg(
            mean_abs_error=lambda e: float(np.mean(np.abs(e))),
            abs_bias=lambda e: float(abs(np.mean(e))),
            mc_se=lambda e: float(np.std(e, ddof=1) / np.sqrt(len(e))),
        )
        .reset_index()
    )
    summary["psi_true"] = psi_true
    return summary
