import json
import logging
import os

from ...config import Config
from ...estimators import EstimateReport

logger = logging.getLogger("twopart")


class JsonLinesReportStore:
    """A connector class storing estimate reports as lines of a JSON file."""

    def __init__(self, path: str | None = None) -> None:
        self.path = path or Config.REPORTS_URL
        self._data = self._read_data()

    def _read_data(self) -> dict[int, dict]:
        """Reads stored reports; a missing file is an empty store."""
        if not os.path.exists(self.path):
            return {}
        data = {}
        try:
            with open(self.path, "r") as file:
                for number, line in enumerate(file, start=1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    data[int(record["id"])] = record
        except (json.JSONDecodeError, KeyError) as e:
            logger.error("Error reading reports from %s (line %d): %s", self.path, number, e)
            raise
        return data

    def _write_data(self) -> None:
        """Writes the in-memory store back, one report per line."""
        try:
            with open(self.path, "w") as file:
                for record in self._data.values():
                    file.write(json.dumps(record, default=float) + "\n")
        except IOError as e:
            logger.error("Error writing reports to %s: %s", self.path, e)
            raise

    def save(self, report: EstimateReport) -> int:
        """Appends a report; returns the id of an identical stored report instead."""
        if not isinstance(report, EstimateReport):
            raise TypeError("Entity must be an EstimateReport instance.")

        # Normalize numpy scalars through a JSON round-trip
        entity = json.loads(report.to_json())
        key = ("method", "policy", "psi_hat", "std_err", "seed")
        for entity_id, stored in self._data.items():
            if all(stored.get(k) == entity[k] for k in key):
                logger.debug(
                    "A '%s' report with given data already exists in the store.",
                    entity["method"],
                )
                return entity_id

        new_id = max(self._data, default=0) + 1
        self._data[new_id] = {"id": new_id, **entity}
        with open(self.path, "a") as file:
            file.write(json.dumps(self._data[new_id]) + "\n")
        return new_id

    def get_all(self) -> list[dict]:
        return list(self._data.values())

    def get_by_id(self, entity_id: int) -> dict | None:
        return self._data.get(int(entity_id))

    def delete(self, entity_id: int) -> str:
        """Deletes a report by its id."""
        if self._data.pop(int(entity_id), None) is None:
            return f"No report with id '{entity_id}' to delete from the store."
        self._write_data()
        return f"Report with id '{entity_id}' deleted from the store."
