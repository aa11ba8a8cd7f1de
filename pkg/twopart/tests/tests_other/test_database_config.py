import pytest
from sqlalchemy.orm import Session

from twopart.database_config import EstimateRecord, get_db, get_engine


@pytest.fixture
def db_session(tmp_path):
    session = get_db(f"sqlite:///{tmp_path / 'records.sqlite'}")
    yield session
    session.close()


def record(**fields) -> EstimateRecord:
    values = {
        "method": "aipw",
        "policy": "shift:+1",
        "n": 100,
        "psi_hat": 3.2,
        "std_err": 0.4,
        "ci_low": 2.416,
        "ci_high": 3.984,
        "variance_method": "eif",
        **fields,
    }
    return EstimateRecord(**values)


def test_valid_record(db_session: Session):
    db_session.add(record())
    db_session.commit()
    stored = db_session.query(EstimateRecord).filter_by(policy="shift:+1").first()
    assert stored is not None
    assert stored.method == "aipw"
    assert stored.time_created is not None


@pytest.mark.parametrize(
    "fields, error_msg",
    [
        ({"method": "ols"}, "'ols' is not a valid EstimatorMethod"),
        ({"std_err": -0.1}, "Standard error must be non-negative."),
    ],
)
def test_invalid_record(fields: dict, error_msg: str):
    with pytest.raises(ValueError) as exc_info:
        record(**fields)
    assert error_msg in str(exc_info.value)


def test_get_engine_is_cached(tmp_path):
    url = f"sqlite:///{tmp_path / 'cached.sqlite'}"
    assert get_engine(url) is get_engine(url)
