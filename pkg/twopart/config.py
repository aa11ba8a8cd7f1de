"""Depending on the purpose of running the estimators, change ENV_STATE variable
in the .env file to either 'prod', 'dev' or 'test'. The state decides where
estimate reports are stored and how verbose the logs are."""

import os

from dotenv import load_dotenv

load_dotenv()

# Numerical defaults shared by the library and the CLI
DEFAULT_FOLDS = 10
DEFAULT_SELECTOR_FOLDS = 5
DEFAULT_BOOTSTRAP_B = 1000
DEFAULT_ODDS_CAP = 1e3
DEFAULT_SCALER_PAD = 1e-3
DEFAULT_BASES = ("main-effects", "main+squares", "main+index")
PROBABILITY_CLIP = 1e-5
DEFAULT_ORACLE_DRAWS = 10_000_000
TILT_TOLERANCE = 1e-12
TILT_SCORE_TOLERANCE = 1e-8
TILT_BOUNDS = (-10.0, 10.0)
MAX_BOOTSTRAP_RETRIES = 10


class Config:
    ENV_STATE = os.environ.get(
        "ENV_STATE", "dev"
    )  # Default to 'dev' if ENV_STATE is not set

    if ENV_STATE == "prod":
        REPORTS_URL = os.environ.get("PROD_REPORTS_URL", "sqlite:///reports.sqlite")
        LOG_LEVEL = "INFO"
    elif ENV_STATE in ("dev", "test"):
        REPORTS_URL = os.environ.get("DEV_REPORTS_URL", "reports.jsonl")
        LOG_LEVEL = "DEBUG"
    else:
        raise ValueError(f"Unsupported environment state: {ENV_STATE}")

    N_JOBS = int(os.environ.get("TWOPART_JOBS", "1"))
