import json

import numpy as np

from log_manager import LogManager, LabLogger, LogCategory, LogLevel


def test_add_and_query(tmp_path):
    manager = LogManager(str(tmp_path))
    logger = LabLogger(manager)
    logger.bind_run("run-1", "sweep")
    logger.log_resolvent("스윕 완료", norm=np.float64(2.5), lam=1j, modes=np.arange(3))
    logger.log_audit(LogCategory.GLUING, "접합 검증", passed=True)
    logger.log_error("실패", category=LogCategory.QUANTIZE, error={"code": "grid-too-coarse"})

    assert manager.get_total_log_count() == 3
    recent = manager.get_recent_logs(10, LogCategory.RESOLVENT)
    assert len(recent) == 1
    assert recent[0]["run_id"] == "run-1"
    assert recent[0]["details"]["lam"] == {"re": 0.0, "im": 1.0}
    assert recent[0]["details"]["modes"] == [0, 1, 2]
    run_logs = manager.get_run_logs("run-1")
    assert {log["level"] for log in run_logs} == {LogLevel.INFO.value, LogLevel.AUDIT.value, LogLevel.ERROR.value}
    assert len(manager.get_run_logs("run-1", LogLevel.ERROR)) == 1


def test_run_summary_counts_audits(tmp_path):
    logger = LabLogger(LogManager(str(tmp_path)))
    logger.bind_run("run-2", "escape")
    logger.log_audit(LogCategory.ESCAPE, "검증", passed=True)
    logger.log_audit(LogCategory.ESCAPE, "검증", passed=False)
    logger.log_audit(LogCategory.ESCAPE, "메모")
    summary = logger.log_manager.get_run_summary("run-2")
    assert summary["command"] == "escape"
    assert summary["count"] == 3
    assert summary["audits"] == {"passed": 1, "failed": 1}
    assert logger.log_manager.get_run_summary("missing")["count"] == 0


def test_recent_logs_survive_restart(tmp_path):
    first = LogManager(str(tmp_path))
    first.add_log(LogLevel.SYSTEM, LogCategory.SYSTEM, "시작")
    second = LogManager(str(tmp_path))
    assert any(log["message"] == "시작" for log in second.get_recent_logs())


def test_statistics(tmp_path):
    manager = LogManager(str(tmp_path))
    manager.add_log(LogLevel.WARNING, LogCategory.ESCAPE, "경고")
    stats = manager.get_statistics()
    assert stats["total"] == 1
    assert stats["by_level"] == {"WARNING": 1}
    assert stats["by_category"] == {"탈출함수": 1}


def test_export_run(tmp_path):
    manager = LogManager(str(tmp_path))
    manager.add_log(LogLevel.INFO, LogCategory.CLI, "시작", run_id="r", details={"h": 0.1})
    path = manager.export_run("r", "json")
    with open(path, encoding="utf-8") as f:
        assert json.load(f)[0]["details"] == {"h": 0.1}
    assert manager.export_run("r", "csv").endswith(".csv")
    assert manager.export_run("r", "xml") is None


def test_cleanup_keeps_recent_logs(tmp_path):
    manager = LogManager(str(tmp_path))
    manager.add_log(LogLevel.INFO, LogCategory.CLI, "오늘")
    assert manager.cleanup_old_logs(days=1) == 0
    assert manager.get_total_log_count() == 1
