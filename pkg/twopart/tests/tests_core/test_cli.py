import json

import pandas as pd
import pytest

from twopart.cli import RunConfig, main, resolve_config
from twopart.config import DEFAULT_BOOTSTRAP_B
from twopart.enums import EstimatorMethod
from twopart.exceptions import ConfigError
from twopart.nuisance import make_plan


def fit_args(path: str, *extra: str) -> list[str]:
    return [
        "fit",
        "--data",
        path,
        "--outcome",
        "y",
        "--treatment",
        "t",
        "--covariates",
        "x1,x2",
        "--folds",
        "2",
        "--basis",
        "intercept-only",
        *extra,
    ]


def test_resolve_config_defaults(twenty_rows_csv):
    config = resolve_config(fit_args(twenty_rows_csv, "--policy", "static:1"))
    assert config.subcommand == "fit"
    assert config.covariates == ("x1", "x2")
    assert config.methods == (EstimatorMethod.HTMLE,)
    assert config.variance == "bootstrap"
    assert config.bootstrap_b == DEFAULT_BOOTSTRAP_B


def test_resolve_config_all_estimators(twenty_rows_csv):
    config = resolve_config(
        fit_args(twenty_rows_csv, "--policy", "identity", "--estimator", "all")
    )
    assert config.methods == tuple(EstimatorMethod)


def test_resolve_config_odds_cap_off(twenty_rows_csv):
    config = resolve_config(
        fit_args(twenty_rows_csv, "--policy", "identity", "--odds-cap", "off")
    )
    assert config.odds_cap is None


@pytest.mark.parametrize(
    "options, error_msg",
    [
        ({"variance": "eif", "bootstrap_b": 50}, "--bootstrap-b requires"),
        ({"variance": "bootstrap", "bootstrap_b": 1}, "at least 2"),
        ({"folds": 1}, "--folds must be at least 2"),
        ({"selector_folds": 1}, "--selector-folds"),
        ({"covariates": ()}, "--covariates"),
        ({"covariates": ("x1",), "bases": ("cubic",)}, "Invalid --basis"),
    ],
)
def test_run_config_rejects_invalid_flags(options, error_msg):
    options = {"covariates": ("x1",), **options}
    with pytest.raises(ConfigError) as exc_info:
        RunConfig(subcommand="fit", policy="identity", **options)
    assert error_msg in str(exc_info.value)


def test_run_config_no_crossfit_allows_single_fold():
    config = RunConfig(
        subcommand="fit", policy="identity", covariates=("x1",), folds=1, crossfit=False
    )
    assert config.folds == 1


def test_fit_without_crossfit_builds_a_single_fold(twenty_rows_csv, monkeypatch, capsys):
    calls = []

    def recording_plan(n, J, seed, crossfit):
        calls.append((J, crossfit))
        return make_plan(n, J, seed, crossfit)

    monkeypatch.setattr("twopart.cli.make_plan", recording_plan)
    args = fit_args(
        twenty_rows_csv, "--policy", "identity", "--variance", "eif", "--no-crossfit"
    )
    assert main(args) == 0
    assert calls == [(1, False)]


def test_simulate_rejects_fit_only_flags():
    with pytest.raises(ConfigError) as exc_info:
        RunConfig(subcommand="simulate", policy="static:1", sizes=(100,), save=True)
    assert "only available for 'fit'" in str(exc_info.value)


def test_fit_identity_returns_outcome_mean(twenty_rows_csv, twenty_rows_mean, capsys):
    code = main(
        fit_args(
            twenty_rows_csv, "--policy", "identity", "--variance", "eif", "--output", "json"
        )
    )
    assert code == 0
    reports = json.loads(capsys.readouterr().out)
    assert len(reports) == 1
    assert reports[0]["method"] == "htmle"
    assert reports[0]["psi_hat"] == pytest.approx(twenty_rows_mean, abs=1e-6)
    assert reports[0]["ci_low"] < reports[0]["psi_hat"] < reports[0]["ci_high"]


def test_fit_all_estimators_csv(twenty_rows_csv, capsys):
    code = main(
        fit_args(
            twenty_rows_csv,
            "--policy",
            "identity",
            "--estimator",
            "all",
            "--variance",
            "eif",
            "--output",
            "csv",
        )
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("estimator,policy,psi_hat,std_err")
    assert [line.split(",")[0] for line in lines[1:]] == ["htmle", "tmle", "aipw"]


def test_fit_table_output(twenty_rows_csv, capsys):
    code = main(fit_args(twenty_rows_csv, "--policy", "identity", "--variance", "eif"))
    assert code == 0
    out = capsys.readouterr().out
    assert "htmle" in out
    assert "score solved" in out


def test_fit_missing_column_exit_code(twenty_rows_csv, capsys):
    args = fit_args(twenty_rows_csv, "--policy", "identity")
    args[args.index("x1,x2")] = "x1,x9"
    assert main(args) == 3
    assert "Column 'x9' not found." in capsys.readouterr().err


def test_fit_missing_file_exit_code(tmp_path, capsys):
    assert main(fit_args(str(tmp_path / "nope.csv"), "--policy", "identity")) == 3
    assert "Unable to locate file" in capsys.readouterr().err


def test_fit_bootstrap_b_without_bootstrap(twenty_rows_csv, capsys):
    args = fit_args(
        twenty_rows_csv, "--policy", "identity", "--variance", "eif", "--bootstrap-b", "50"
    )
    assert main(args) == 2
    assert "error [cli]: --bootstrap-b requires --variance bootstrap." in (
        capsys.readouterr().err
    )


def test_fit_invalid_policy(twenty_rows_csv, capsys):
    assert main(fit_args(twenty_rows_csv, "--policy", "teleport:3")) == 2
    assert "error [policy]" in capsys.readouterr().err


def test_unknown_option_exit_code(twenty_rows_csv):
    assert main(fit_args(twenty_rows_csv, "--policy", "identity", "--colour")) == 2


def test_missing_subcommand_exit_code():
    assert main([]) == 2


def test_fit_diagnostics_file(twenty_rows_csv, tmp_path):
    path = tmp_path / "nuisance.csv"
    args = fit_args(
        twenty_rows_csv,
        "--policy",
        "identity",
        "--variance",
        "eif",
        "--output",
        "csv",
        "--diagnostics",
        str(path),
    )
    assert main(args) == 0
    frame = pd.read_csv(path)
    assert len(frame) == 20
    assert {"r_hat", "q_nat", "m_nat"} <= set(frame.columns)
    assert (frame["r_hat"] == 1.0).all()


def test_fit_save_report(twenty_rows_csv, tmp_path, monkeypatch):
    store_path = tmp_path / "reports.jsonl"
    monkeypatch.setattr(
        "twopart.connectors.database.json.Config.REPORTS_URL", str(store_path)
    )
    args = fit_args(
        twenty_rows_csv,
        "--policy",
        "identity",
        "--variance",
        "eif",
        "--output",
        "csv",
        "--save",
    )
    assert main(args) == 0
    # Saving the same run twice keeps a single record
    assert main(args) == 0
    records = [json.loads(line) for line in store_path.read_text().splitlines()]
    assert len(records) == 1
    assert records[0]["id"] == 1
    assert records[0]["method"] == "htmle"


def test_simulate_is_reproducible(tmp_path):
    outputs = []
    for run in range(2):
        path = tmp_path / f"study_{run}.csv"
        args = [
            "simulate",
            "--n",
            "200",
            "--replicates",
            "2",
            "--folds",
            "2",
            "--oracle-draws",
            "10000",
            "--basis",
            "main-effects",
            "--seed",
            "5",
            "--output",
            "csv",
            "--out",
            str(path),
        ]
        assert main(args) == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    frame = pd.read_csv(tmp_path / "study_0.csv")
    assert list(frame["estimator"]) == ["htmle"]
    assert frame.loc[0, "replicates"] == 2


def test_simulate_rejects_single_replicate(capsys):
    assert main(["simulate", "--n", "200", "--replicates", "1"]) == 2
    assert "--replicates must be at least 2." in capsys.readouterr().err
