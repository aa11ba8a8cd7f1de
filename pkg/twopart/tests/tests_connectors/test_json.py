import json
from dataclasses import replace
from unittest.mock import patch

import pytest

from twopart.connectors.database.json import JsonLinesReportStore


@pytest.fixture
def store_path(tmp_path):
    return str(tmp_path / "reports.jsonl")


def test_init_missing_file_is_empty_store(store_path):
    store = JsonLinesReportStore(store_path)
    assert isinstance(store, JsonLinesReportStore)
    assert store.get_all() == []


def test_init_uses_configured_path(store_path):
    with patch("twopart.connectors.database.json.Config.REPORTS_URL", store_path):
        store = JsonLinesReportStore()
    assert store.path == store_path


def test_save_and_get_by_id(store_path, report):
    store = JsonLinesReportStore(store_path)
    new_id = store.save(report)
    assert new_id == 1

    stored = store.get_by_id(new_id)
    assert stored["method"] == "htmle"
    assert stored["psi_hat"] == 11.5
    assert stored["std_err"] == 0.25
    assert stored["n"] == 3
    assert stored["policy"] == "static:1"

    # A fresh connector reads the same line back
    assert JsonLinesReportStore(store_path).get_by_id(1) == stored


def test_save_existing_report_returns_its_id(store_path, report, caplog):
    store = JsonLinesReportStore(store_path)
    first = store.save(report)
    with caplog.at_level("DEBUG", logger="twopart"):
        second = store.save(report)
    assert first == second
    assert len(store.get_all()) == 1
    assert any("already exists" in log.message for log in caplog.records)


def test_save_next_id(store_path, report):
    store = JsonLinesReportStore(store_path)
    store.save(report)
    assert store.save(replace(report, seed=8)) == 2
    with open(store_path) as file:
        assert [json.loads(line)["id"] for line in file] == [1, 2]


def test_save_rejects_other_types(store_path):
    store = JsonLinesReportStore(store_path)
    with pytest.raises(TypeError) as exc_info:
        store.save({"method": "htmle"})
    assert "Entity must be an EstimateReport instance." in str(exc_info.value)


def test_get_by_id_when_id_not_in_store(store_path, report):
    store = JsonLinesReportStore(store_path)
    store.save(report)
    assert store.get_by_id(11) is None


def test_delete(store_path, report):
    store = JsonLinesReportStore(store_path)
    store.save(report)
    store.save(replace(report, seed=8))

    assert store.delete(1) == "Report with id '1' deleted from the store."
    assert [record["id"] for record in JsonLinesReportStore(store_path).get_all()] == [2]
    assert store.delete(1) == "No report with id '1' to delete from the store."


def test_read_data_corrupted_line(store_path, caplog):
    with open(store_path, "w") as file:
        file.write('{"id": 1, "method": "htmle"}\n{not json\n')
    with pytest.raises(json.JSONDecodeError):
        JsonLinesReportStore(store_path)
    assert any("line 2" in log.message for log in caplog.records)
