import os

import numpy as np
import pytest

os.environ["ENV_STATE"] = "test"  # console logging only, reports go to temp files

from twopart.data import TwoPartDataset  # noqa: E402
from twopart.enums import EstimatorMethod  # noqa: E402
from twopart.estimators import EstimateReport  # noqa: E402
from twopart.nuisance import default_learners, estimate_nuisance, make_plan  # noqa: E402
from twopart.policy import Static  # noqa: E402
from twopart.sim import DgmConfig, generate  # noqa: E402

# 20-row fixture: 8 zero outcomes spread over the file, two covariates
TWENTY_ROWS = [
    # y, t, x1, x2
    (0.0, 0, -1.20, 0.30),
    (2.5, 1, 0.40, -0.70),
    (1.1, 0, 0.90, 1.10),
    (0.0, 1, -0.30, 0.20),
    (3.7, 1, 1.50, -0.40),
    (0.8, 0, -0.60, 0.90),
    (0.0, 0, 0.10, -1.30),
    (4.2, 1, 0.70, 0.50),
    (1.9, 1, -1.10, -0.20),
    (0.0, 1, 0.30, 1.40),
    (0.6, 0, -0.80, -0.90),
    (2.2, 0, 1.20, 0.10),
    (0.0, 0, -0.40, 0.60),
    (5.1, 1, 0.20, -1.10),
    (1.4, 1, -1.50, 0.80),
    (0.0, 1, 0.60, -0.50),
    (0.9, 0, 1.00, 1.30),
    (0.0, 0, -0.20, -0.60),
    (3.3, 1, -0.70, 0.40),
    (0.0, 0, 0.50, -0.10),
]


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run Monte Carlo tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo checks (--runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def twenty_rows_csv(tmp_path):
    path = tmp_path / "twenty_rows.csv"
    lines = ["y,t,x1,x2"] + [",".join(str(v) for v in row) for row in TWENTY_ROWS]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def twenty_rows_mean():
    return float(np.mean([row[0] for row in TWENTY_ROWS]))


@pytest.fixture(scope="session")
def dgm_small():
    return generate(DgmConfig(n=300, seed=11))


@pytest.fixture(scope="session")
def dgm_1000():
    return generate(DgmConfig(n=1000, seed=2024))


@pytest.fixture(scope="session")
def small_nuisance(dgm_small):
    """Full nuisance table for static:1 on the 300-row DGM sample."""
    plan = make_plan(dgm_small.n, 5, seed=3)
    return estimate_nuisance(dgm_small, Static(value=1.0), plan, default_learners())


@pytest.fixture
def tiny_dataset():
    return TwoPartDataset(
        x=np.array([[0.5], [-0.5]]),
        t=np.array([1.0, 0.0]),
        y=np.array([3.0, 0.0]),
    )


@pytest.fixture
def report():
    return EstimateReport(
        method=EstimatorMethod.HTMLE,
        psi_hat=11.5,
        std_err=0.25,
        ci_low=11.01,
        ci_high=11.99,
        eif_values=np.array([0.5, -0.5, 0.0]),
        eps_m=0.01,
        eps_q=-0.02,
        policy="static:1",
        seed=7,
    )
