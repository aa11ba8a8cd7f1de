from functools import lru_cache

from sqlalchemy import (
    Column,
    DateTime,
    Float,
    Index,
    Integer,
    String,
    create_engine,
    func,
)
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker, validates

from .config import Config
from .enums import EstimatorMethod

Base = declarative_base()


# Setting database tables
class EstimateRecord(Base):
    """
    A SQLAlchemy ORM model representing one estimate report.
    """

    __tablename__ = "estimate_reports"

    id = Column(Integer, primary_key=True, index=True)
    method = Column(String(8), nullable=False)
    policy = Column(String, nullable=False)
    n = Column(Integer, nullable=False)
    psi_hat = Column(Float, nullable=False)
    std_err = Column(Float, nullable=False)
    ci_low = Column(Float, nullable=False)
    ci_high = Column(Float, nullable=False)
    variance_method = Column(String, nullable=False)
    eps_m = Column(Float, nullable=True)
    eps_q = Column(Float, nullable=True)
    eps = Column(Float, nullable=True)
    seed = Column(Integer, nullable=True)
    time_created = Column(DateTime(timezone=True), server_default=func.now())

    __table_args__ = (
        Index(
            "idx_unique_estimate_report",
            method,
            policy,
            psi_hat,
            std_err,
            seed,
            unique=True,
        ),
        {"info": {"hidden_columns": ["time_created"]}},
    )

    @validates("method")
    def validate_method(self, key, method):
        return EstimatorMethod(method).value

    @validates("std_err")
    def validate_std_err(self, key, std_err):
        if std_err < 0:
            raise ValueError("Standard error must be non-negative.")
        return std_err


# Engines are created on first use so that importing the package never touches
# the filesystem
@lru_cache(maxsize=None)
def get_engine(url: str) -> Engine:
    engine = create_engine(url=url, connect_args={"check_same_thread": False})
    Base.metadata.create_all(bind=engine)
    return engine


def get_db(url: str | None = None) -> Session:
    """Opens a session on the report database (`Config.REPORTS_URL` by default)."""
    session_factory = sessionmaker(
        autocommit=False, autoflush=False, bind=get_engine(url or Config.REPORTS_URL)
    )
    return session_factory()
