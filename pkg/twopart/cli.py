"""Command-line front-end.

    python -m twopart fit --data d.csv --outcome y --treatment t --covariates x1,x2 \
        --policy static:1 --estimator all
    python -m twopart simulate --n 500,1000 --beta-p 0,-3 --replicates 200 --out r.csv
"""

import argparse
import json
import logging
import os
import sys
import traceback
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

from .config import (
    DEFAULT_BASES,
    DEFAULT_BOOTSTRAP_B,
    DEFAULT_FOLDS,
    DEFAULT_ODDS_CAP,
    DEFAULT_ORACLE_DRAWS,
    DEFAULT_SELECTOR_FOLDS,
    Config,
)
from .connectors import get_report_store
from .data import read_column, read_csv
from .enums import Basis, EstimatorMethod, OutputFormat, RatioMethod, VarianceMethod
from .estimators import components_for, estimate, format_reports, reports_frame
from .exceptions import ConfigError, TwoPartError
from .nuisance import default_learners, estimate_nuisance, make_plan
from .policy import parse_policy
from .sim import format_study_table, grid, run_study, study_frame, write_study_csv

logger = logging.getLogger("twopart")

ALL_ESTIMATORS = "all"


@dataclass
class RunConfig:
    """Fully resolved options of one CLI run (defaults included)."""

    subcommand: str
    policy: str
    estimator: str = EstimatorMethod.HTMLE.value
    folds: int = DEFAULT_FOLDS
    crossfit: bool = True
    variance: str = VarianceMethod.EIF.value
    bootstrap_b: int | None = None
    seed: int = 0
    output: str = OutputFormat.TABLE.value
    bases: tuple[str, ...] = DEFAULT_BASES
    selector_folds: int = DEFAULT_SELECTOR_FOLDS
    ratio: str = RatioMethod.AUTO.value
    odds_cap: float | None = DEFAULT_ODDS_CAP
    jobs: int = 1
    # fit
    data: str | None = None
    outcome: str | None = None
    treatment: str | None = None
    covariates: tuple[str, ...] = ()
    save: bool = False
    diagnostics: str | None = None
    # simulate
    sizes: tuple[int, ...] = ()
    beta_ps: tuple[float, ...] = (0.0,)
    alpha_deltas: tuple[float, ...] = (0.0,)
    replicates: int = 200
    oracle_draws: int = DEFAULT_ORACLE_DRAWS
    out: str | None = None
    methods: tuple[EstimatorMethod, ...] = field(init=False, default=())

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Rejects invalid and incompatible flags before any computation."""
        if self.estimator == ALL_ESTIMATORS:
            self.methods = tuple(EstimatorMethod)
        else:
            self.methods = (_choice(EstimatorMethod, self.estimator, "estimator"),)
        _choice(VarianceMethod, self.variance, "variance")
        _choice(OutputFormat, self.output, "output")
        _choice(RatioMethod, self.ratio, "ratio")
        for basis in self.bases:
            _choice(Basis, basis, "basis")

        if self.bootstrap_b is not None:
            if self.variance != VarianceMethod.BOOTSTRAP.value:
                raise ConfigError("--bootstrap-b requires --variance bootstrap.")
            if self.bootstrap_b < 2:
                raise ConfigError("--bootstrap-b must be at least 2.")
        elif self.variance == VarianceMethod.BOOTSTRAP.value:
            self.bootstrap_b = DEFAULT_BOOTSTRAP_B
        if self.folds < 1 or (self.folds == 1 and self.crossfit):
            raise ConfigError("--folds must be at least 2 (or 1 with --no-crossfit).")
        if self.selector_folds < 2:
            raise ConfigError("--selector-folds must be at least 2.")
        if self.jobs == 0:
            raise ConfigError("--jobs must be positive (or negative for joblib's n_jobs).")

        if self.subcommand == "fit":
            if not self.covariates:
                raise ConfigError("--covariates needs at least one column name.")
            if self.out is not None:
                raise ConfigError("--out is only available for 'simulate'.")
        else:
            if not self.sizes or min(self.sizes) < 1:
                raise ConfigError("--n needs positive sample sizes.")
            if self.replicates < 2:
                raise ConfigError("--replicates must be at least 2.")
            if self.oracle_draws < 1:
                raise ConfigError("--oracle-draws must be positive.")
            if self.save or self.diagnostics:
                raise ConfigError("--save and --diagnostics are only available for 'fit'.")

    @property
    def bootstrap_size(self) -> int:
        return self.bootstrap_b or DEFAULT_BOOTSTRAP_B

    def learners(self):
        return default_learners(
            bases=self.bases,
            selector_folds=self.selector_folds,
            ratio_method=self.ratio,
            odds_cap=self.odds_cap,
            n_jobs=self.jobs,
            seed=self.seed,
        )


def _choice(enum_cls, value: str, flag: str):
    try:
        return enum_cls(value)
    except ValueError:
        raise ConfigError(
            f"Invalid --{flag} '{value}'. Available: {[e.value for e in enum_cls]}."
        )


def _names(text: str) -> tuple[str, ...]:
    return tuple(name.strip() for name in text.split(",") if name.strip())


def _numbers(cast):
    def parse(text: str) -> tuple:
        try:
            return tuple(cast(value) for value in _names(text))
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list of numbers: '{text}'")

    return parse


def _odds_cap(text: str) -> float | None:
    if text.lower() == "off":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'off', got '{text}'")


def _common_arguments(parser: argparse.ArgumentParser, variance: str) -> None:
    parser.add_argument(
        "--estimator",
        default=EstimatorMethod.HTMLE.value,
        choices=[m.value for m in EstimatorMethod] + [ALL_ESTIMATORS],
    )
    parser.add_argument("--folds", type=int, default=DEFAULT_FOLDS)
    parser.add_argument(
        "--no-crossfit",
        dest="crossfit",
        action="store_false",
        help="fit nuisance models on the full sample",
    )
    parser.add_argument(
        "--variance", default=variance, choices=[v.value for v in VarianceMethod]
    )
    parser.add_argument("--bootstrap-b", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--output",
        default=OutputFormat.TABLE.value,
        choices=[o.value for o in OutputFormat],
    )
    parser.add_argument(
        "--basis",
        type=_names,
        default=DEFAULT_BASES,
        help="comma-separated learner bases: " + ", ".join(b.value for b in Basis),
    )
    parser.add_argument("--selector-folds", type=int, default=DEFAULT_SELECTOR_FOLDS)
    parser.add_argument(
        "--ratio", default=RatioMethod.AUTO.value, choices=[r.value for r in RatioMethod]
    )
    parser.add_argument(
        "--odds-cap",
        type=_odds_cap,
        default=DEFAULT_ODDS_CAP,
        help="cap on density ratio values, or 'off'",
    )
    parser.add_argument("--jobs", type=int, default=Config.N_JOBS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twopart",
        description="Targeted estimation of policy effects on two-part outcomes.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    fit = subparsers.add_parser("fit", help="estimate a policy effect on a CSV dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--outcome", required=True)
    fit.add_argument("--treatment", required=True)
    fit.add_argument("--covariates", type=_names, required=True)
    fit.add_argument("--policy", required=True)
    _common_arguments(fit, variance=VarianceMethod.BOOTSTRAP.value)
    fit.add_argument("--save", action="store_true", help="store reports")
    fit.add_argument("--diagnostics", metavar="PATH", default=None)

    simulate = subparsers.add_parser("simulate", help="run the Monte Carlo study")
    simulate.add_argument("--n", dest="sizes", type=_numbers(int), required=True)
    simulate.add_argument("--beta-p", dest="beta_ps", type=_numbers(float), default=(0.0,))
    simulate.add_argument(
        "--alpha-delta", dest="alpha_deltas", type=_numbers(float), default=(0.0,)
    )
    simulate.add_argument("--replicates", type=int, default=200)
    simulate.add_argument("--policy", default="static:1")
    simulate.add_argument("--oracle-draws", type=int, default=DEFAULT_ORACLE_DRAWS)
    simulate.add_argument("--out", default=None)
    _common_arguments(simulate, variance=VarianceMethod.EIF.value)
    return parser


def resolve_config(argv: Sequence[str] | None = None) -> RunConfig:
    arguments = vars(build_parser().parse_args(argv))
    arguments["bases"] = arguments.pop("basis")
    return RunConfig(**arguments)


def _policy_columns(config: RunConfig) -> dict:
    """Loads a `cap=col:<name>` column of a shift policy from the data file."""
    _, marker, column = config.policy.partition("col:")
    if not marker:
        return {}
    return {column.strip(): read_column(config.data, column.strip())}


def cmd_fit(config: RunConfig) -> int:
    dataset = read_csv(config.data, config.outcome, config.treatment, list(config.covariates))
    policy = parse_policy(
        config.policy, dataset.covariate_names, _policy_columns(config), config.seed
    )
    # without cross-fitting every model trains on the full sample once
    folds = config.folds if config.crossfit else 1
    plan = make_plan(dataset.n, folds, config.seed, config.crossfit)
    nuisance = estimate_nuisance(
        dataset,
        policy,
        plan,
        config.learners(),
        components=components_for(config.methods),
    )
    reports = [
        estimate(
            method,
            dataset,
            policy,
            variance_method=config.variance,
            B=config.bootstrap_size,
            seed=config.seed,
            nuisance=nuisance,
            n_jobs=config.jobs,
        )
        for method in config.methods
    ]

    match OutputFormat(config.output):
        case OutputFormat.JSON:
            print(json.dumps([r.to_dict() for r in reports], indent=2, default=float))
        case OutputFormat.CSV:
            print(reports_frame(reports).to_csv(index=False), end="")
        case OutputFormat.TABLE:
            print(format_reports(reports))
            for report in reports:
                flags = report.diagnostics
                print(
                    f"[{report.method.value}] mean EIF {flags['mean_eif']:.3e}, "
                    f"score solved: {flags['score_solved']}, "
                    f"r in [{flags['r_min']:.4g}, {flags['r_max']:.4g}], "
                    f"nuisance: {json.dumps(flags['nuisance'], default=float)}"
                )

    if config.diagnostics:
        nuisance.to_frame().to_csv(config.diagnostics, index=False)
        logger.info("Nuisance table written to %s.", config.diagnostics)
    if config.save:
        store = get_report_store()
        ids = [store.save(report) for report in reports]
        logger.info("Reports saved with id(s) %s.", ids)
    return 0


def cmd_simulate(config: RunConfig) -> int:
    policy = parse_policy(
        config.policy, tuple(f"x{k}" for k in range(1, 5)), seed=config.seed
    )
    results = run_study(
        grid(config.sizes, config.beta_ps, config.alpha_deltas),
        methods=config.methods,
        policy=policy,
        replicates=config.replicates,
        folds=config.folds,
        seed=config.seed,
        variance_method=config.variance,
        learners=config.learners(),
        n_oracle=config.oracle_draws,
        n_jobs=config.jobs,
        B=config.bootstrap_size,
    )
    if config.out:
        write_study_csv(results, config.out)
        logger.info("Study results written to %s.", config.out)

    match OutputFormat(config.output):
        case OutputFormat.JSON:
            print(study_frame(results).to_json(orient="records", indent=2))
        case OutputFormat.CSV:
            print(study_frame(results).to_csv(index=False, float_format="%.6f"), end="")
        case OutputFormat.TABLE:
            print(format_study_table(results))
    return 0


def _failing_module(error: BaseException) -> str:
    frames = traceback.extract_tb(error.__traceback__)
    if not frames:
        return "cli"
    return os.path.splitext(os.path.basename(frames[-1].filename))[0]


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = resolve_config(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except ConfigError as e:
        print(f"error [cli]: {e}", file=sys.stderr)
        return e.exit_code

    logger.info(
        "Resolved run configuration.",
        extra={"additional information": asdict(config)},
    )
    command = cmd_fit if config.subcommand == "fit" else cmd_simulate
    try:
        return command(config)
    except TwoPartError as e:
        module = _failing_module(e)
        logger.error("%s failed in module '%s': %s", config.subcommand, module, e)
        print(f"error [{module}]: {e}", file=sys.stderr)
        return e.exit_code
