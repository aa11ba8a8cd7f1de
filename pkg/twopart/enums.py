from enum import Enum


class GlmFamily(str, Enum):
    """Enum for the error distribution and link of a GLM."""

    BINOMIAL_LOGIT = "binomial-logit"
    GAUSSIAN_IDENTITY = "gaussian-identity"
    GAUSSIAN_LOG = "gaussian-log"


class Basis(str, Enum):
    """Enum for the basis expansion applied to the raw features."""

    INTERCEPT = "intercept-only"
    MAIN = "main-effects"
    SQUARES = "main+squares"
    INDEX = "main+index"


class CvLoss(str, Enum):
    """Enum for the loss minimized by the cross-validated selector."""

    LOGLOSS = "logloss"
    MSE = "mse"


class EstimatorMethod(str, Enum):
    """Enum for the available estimators of the policy mean."""

    HTMLE = "htmle"
    TMLE = "tmle"
    AIPW = "aipw"


class VarianceMethod(str, Enum):
    """Enum for the standard error estimators."""

    EIF = "eif"
    BOOTSTRAP = "bootstrap"


class RatioMethod(str, Enum):
    """Enum for the density ratio estimation routes."""

    AUTO = "auto"
    ANALYTIC = "analytic"
    CLASSIFICATION = "classification"


class OutputFormat(str, Enum):
    """Enum for CLI output formats."""

    TABLE = "table"
    JSON = "json"
    CSV = "csv"


class ReportStore(str, Enum):
    """Enum for report store environment mappings."""

    PROD = "sqlite"
    DEV = "json"
