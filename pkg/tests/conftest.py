# conftest.py - 테스트용 환경변수 (config / log_manager 가 import 될 때 읽힌다)
import os
import tempfile

import pytest

_TMP = tempfile.mkdtemp(prefix="revlab-test-")
os.environ["LAB_LOG_DIR"] = os.path.join(_TMP, "logs")
os.environ["LAB_OUTPUT_DIR"] = os.path.join(_TMP, "results")
os.environ["LAB_VERBOSITY"] = "0"


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "results"
    return str(path)
