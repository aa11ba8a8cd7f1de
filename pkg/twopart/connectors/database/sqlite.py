import logging
from contextlib import contextmanager

from sqlalchemy.orm import Session

from ...database_config import EstimateRecord, get_db
from ...estimators import EstimateReport

logger = logging.getLogger("twopart")

HIDDEN_COLUMNS = EstimateRecord.__table__.info["hidden_columns"]


def _as_dict(record: EstimateRecord) -> dict:
    return {
        col.name: getattr(record, col.name)
        for col in record.__table__.columns
        if col.name not in HIDDEN_COLUMNS
    }


class SQLiteReportStore:
    """A connector class to store estimate reports in an SQLite database."""

    def __init__(self, url: str | None = None) -> None:
        self.url = url

    @contextmanager
    def _get_session(self) -> Session:  # type: ignore
        """Provides a context manager for database sessions."""
        session = get_db(self.url)

        try:
            yield session
        except Exception as e:
            logger.error("Error with accessing the report database: %s", e)
            session.rollback()
            raise
        finally:
            session.close()

    def save(self, report: EstimateReport) -> int:
        """Adds a new report; returns the id of an identical stored report instead."""
        if not isinstance(report, EstimateReport):
            raise TypeError("Entity must be an EstimateReport instance.")

        fields = report.to_dict()
        del fields["diagnostics"]

        with self._get_session() as session:
            existing_record = (
                session.query(EstimateRecord)
                .filter_by(
                    method=fields["method"],
                    policy=fields["policy"],
                    psi_hat=fields["psi_hat"],
                    std_err=fields["std_err"],
                    seed=fields["seed"],
                )
                .first()
            )
            if existing_record:
                logger.debug(
                    "A '%s' report with given data already exists in the database.",
                    fields["method"],
                )
                return existing_record.id

            new_record = EstimateRecord(**fields)
            session.add(new_record)
            session.commit()
            return new_record.id

    def get_all(self) -> list[dict]:
        """Retrieves all stored reports."""
        with self._get_session() as session:
            return [_as_dict(record) for record in session.query(EstimateRecord).all()]

    def get_by_id(self, entity_id: int) -> dict | None:
        """Retrieves a specific report."""
        with self._get_session() as session:
            record = (
                session.query(EstimateRecord)
                .filter(EstimateRecord.id == entity_id)
                .first()
            )
            return _as_dict(record) if record else None

    def delete(self, entity_id: int) -> str:
        """Deletes a report by its id."""
        with self._get_session() as session:
            record = (
                session.query(EstimateRecord)
                .filter(EstimateRecord.id == entity_id)
                .first()
            )
            if record:
                session.delete(record)
                session.commit()
                return f"Report with id '{entity_id}' deleted from the database."
            return f"No report with id '{entity_id}' to delete from the database."
