import json
import logging
import sys

import numpy as np
import pytest

from src.logging_config import JSONFormatter, bind_run, get_logger, setup_logging


@pytest.fixture
def log_file(temp_dir):
    """Log file inside the temporary directory, root logger restored afterwards"""
    root = logging.getLogger()
    level, handlers = root.level, list(root.handlers)
    yield temp_dir / "logs" / "run.log"
    bind_run()
    for handler in root.handlers:
        handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


def read_lines(path):
    for handler in logging.getLogger().handlers:
        handler.flush()
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestJSONFormatter:
    """Tests for the JSON-lines formatter"""

    def test_fields(self):
        """Test the fixed keys, extra_fields and numpy values"""
        fields = {"name": "src.segmenter", "levelname": "INFO", "msg": "Batch %d", "args": (3,)}
        record = logging.makeLogRecord({**fields, "extra_fields": {"l_x": np.int64(251)}})
        entry = json.loads(JSONFormatter().format(record))
        assert entry["message"] == "Batch 3"
        assert entry["logger"] == "src.segmenter"
        assert entry["l_x"] == 251
        assert "extra_fields" not in entry

    def test_exception_text(self):
        """Test that exception tracebacks are rendered"""
        try:
            raise ValueError("bad batch")
        except ValueError:
            record = logging.makeLogRecord({"msg": "failed", "exc_info": sys.exc_info()})
        entry = json.loads(JSONFormatter().format(record))
        assert "ValueError: bad batch" in entry["exception"]


class TestSetupLogging:
    """Tests for logger configuration"""

    def test_file_lines_carry_run_context(self, log_file):
        """Test that bound run context appears on every file record"""
        setup_logging("DEBUG", str(log_file), enable_console_logging=False)
        bind_run(command="segment", method="boosted-dt", seed=None)
        get_logger("src.pipeline").info("Done", extra={"extra_fields": {"segments": 12}})

        entry = read_lines(log_file)[-1]
        assert entry["command"] == "segment"
        assert entry["method"] == "boosted-dt"
        assert "seed" not in entry
        assert entry["segments"] == 12

    def test_level_threshold(self, log_file):
        """Test that records below the configured level are dropped"""
        setup_logging("WARNING", str(log_file), enable_console_logging=False)
        logger = get_logger("src.template_manager")
        logger.info("hidden")
        logger.warning("Rejected template")
        assert [e["message"] for e in read_lines(log_file)] == ["Rejected template"]

    def test_file_logging_disabled(self, log_file):
        """Test that no file is created when file logging is off"""
        setup_logging("INFO", str(log_file), enable_file_logging=False, enable_console_logging=False)
        get_logger("src.pipeline").info("nothing written")
        assert not log_file.exists()

    def test_numba_capped(self, log_file):
        """Test that compiler chatter is limited to warnings"""
        setup_logging("DEBUG", str(log_file), enable_console_logging=False)
        assert logging.getLogger("numba").level == logging.WARNING
