import logging

from twopart.logging_config import ColoredFormatter, _handlers_for


def _record(**extra) -> logging.LogRecord:
    record = logging.LogRecord(
        "twopart", logging.INFO, __file__, 1, "Resolved run configuration.", None, None
    )
    record.__dict__.update(extra)
    return record


def test_colored_formatter_appends_additional_information():
    formatter = ColoredFormatter()
    output = formatter.format(_record(**{"additional information": {"folds": 10}}))
    assert "Resolved run configuration." in output
    assert "Additional information: {'folds': 10}" in output


def test_colored_formatter_leaves_record_untouched():
    record = _record(**{"additional information": "x"})
    ColoredFormatter().format(record)
    assert record.levelname == "INFO"
    assert record.msg == "Resolved run configuration."


def test_handlers_per_environment():
    assert _handlers_for("prod") == ["console", "files"]
    assert _handlers_for("dev") == ["console", "tests"]
    assert _handlers_for("test") == ["console"]


def test_logs_reach_caplog_in_test_state(caplog):
    with caplog.at_level(logging.DEBUG, logger="twopart"):
        logging.getLogger("twopart").warning("check")
    assert "check" in caplog.text
