# log_manager.py - 실험 실행 로그 (SQLite, 실행 ID 단위 조회)

import os
import csv
import json
import sqlite3
import threading
from datetime import datetime, timedelta
from typing import List, Dict, Optional, Any, Sequence
from enum import Enum
from collections import deque
from contextlib import contextmanager

import numpy as np

CACHE_SIZE = 1000
COLUMNS = ("id", "time", "timestamp", "level", "category", "message", "run_id", "command", "details")


class LogLevel(Enum):
    """로그 레벨"""
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    AUDIT = "AUDIT"
    SYSTEM = "SYSTEM"


class LogCategory(Enum):
    """로그 카테고리 (모듈 단위)"""
    GEOMETRY = "기하"
    DYNAMICS = "동역학"
    ESCAPE = "탈출함수"
    QUANTIZE = "양자화"
    RESOLVENT = "레졸벤트"
    GLUING = "접합"
    CLI = "명령줄"
    SYSTEM = "시스템"


def _jsonable(value: Any):
    """json.dumps 의 default: numpy 스칼라/배열, 복소수, 예외"""
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()] if np.iscomplexobj(value) else value.tolist()
    if isinstance(value, Enum):
        return value.value
    return str(value)


class LogManager:
    """
    실행 로그 저장소

    모든 행은 실행 ID(run_id) 와 명령을 함께 기록한다. 최근 CACHE_SIZE 개는
    메모리에도 두어 빠르게 조회한다.
    """

    def __init__(self, log_dir: str = "data/logs"):
        """
        Args:
            log_dir: lab_logs.db 를 둘 디렉토리
        """
        self.log_dir = log_dir
        os.makedirs(self.log_dir, exist_ok=True)
        self.db_path = os.path.join(self.log_dir, "lab_logs.db")

        self.recent_logs = deque(maxlen=CACHE_SIZE)
        self._lock = threading.Lock()

        self._create_schema()
        self.recent_logs.extend(reversed(
            self._select("SELECT * FROM logs ORDER BY timestamp DESC, id DESC LIMIT ?", (CACHE_SIZE,))
        ))

    @staticmethod
    def _report_failure(action: str, error: Exception):
        print(f"❌ 로그 {action} 실패: {error}")

    @contextmanager
    def _connect(self):
        conn = sqlite3.connect(self.db_path, timeout=30)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def _create_schema(self):
        try:
            with self._connect() as conn:
                conn.execute('''
                    CREATE TABLE IF NOT EXISTS logs (
                        id INTEGER PRIMARY KEY AUTOINCREMENT,
                        time TEXT NOT NULL,
                        timestamp REAL NOT NULL,
                        level TEXT NOT NULL,
                        category TEXT NOT NULL,
                        message TEXT NOT NULL,
                        run_id TEXT,
                        command TEXT,
                        details TEXT
                    )
                ''')
                for column in ("timestamp", "level", "category", "run_id"):
                    conn.execute(f'CREATE INDEX IF NOT EXISTS idx_{column} ON logs({column})')
                conn.commit()
        except sqlite3.Error as e:
            self._report_failure("데이터베이스 초기화", e)

    @staticmethod
    def _decode(row: sqlite3.Row) -> Dict[str, Any]:
        entry = {key: row[key] for key in COLUMNS}
        entry["details"] = json.loads(row["details"]) if row["details"] else {}
        return entry

    def _select(self, query: str, params: Sequence[Any] = ()) -> List[Dict[str, Any]]:
        try:
            with self._connect() as conn:
                return [self._decode(row) for row in conn.execute(query, tuple(params)).fetchall()]
        except sqlite3.Error as e:
            self._report_failure("조회", e)
            return []

    def add_log(self, level: LogLevel, category: LogCategory, message: str, run_id: Optional[str] = None,
                command: Optional[str] = None, details: Optional[Dict[str, Any]] = None) -> bool:
        """
        로그 한 줄 기록

        Args:
            level: 로그 레벨
            category: 모듈 카테고리
            message: 한 줄 메시지
            run_id: 실행 식별자
            command: 실행 중인 명령
            details: 부가 정보 (numpy / 복소수 값 허용)

        Returns:
            bool: 기록 성공 여부
        """
        now = datetime.now()
        details = details or {}
        row = (now.strftime('%Y-%m-%d %H:%M:%S'), now.timestamp(), level.value, category.value, message,
               run_id, command, json.dumps(details, ensure_ascii=False, default=_jsonable, sort_keys=True))
        try:
            with self._lock, self._connect() as conn:
                cursor = conn.execute(
                    'INSERT INTO logs (time, timestamp, level, category, message, run_id, command, details) '
                    'VALUES (?, ?, ?, ?, ?, ?, ?, ?)', row)
                conn.commit()
                self.recent_logs.append(dict(zip(COLUMNS, (cursor.lastrowid, *row[:-1], json.loads(row[-1])))))
            return True
        except (sqlite3.Error, TypeError, ValueError) as e:
            self._report_failure("기록", e)
            return False

    def get_recent_logs(self, count: int = 50, category: Optional[LogCategory] = None) -> List[Dict]:
        """메모리 캐시에서 최근 로그 (카테고리 필터 선택)"""
        logs = [log for log in self.recent_logs if category is None or log["category"] == category.value]
        return logs[-count:]

    def get_run_logs(self, run_id: str, level: Optional[LogLevel] = None) -> List[Dict]:
        """실행 하나의 로그를 시간순으로"""
        query, params = "SELECT * FROM logs WHERE run_id = ?", [run_id]
        if level is not None:
            query += " AND level = ?"
            params.append(level.value)
        return self._select(query + " ORDER BY timestamp ASC, id ASC", params)

    def get_run_summary(self, run_id: str) -> Dict[str, Any]:
        """
        실행 요약: 레벨별 개수, 검증 로그의 통과/실패 수, 시작/끝 시각

        검증 로그는 details 에 passed 가 있는 AUDIT 행이다.
        """
        logs = self.get_run_logs(run_id)
        levels: Dict[str, int] = {}
        audits = {"passed": 0, "failed": 0}
        for log in logs:
            levels[log["level"]] = levels.get(log["level"], 0) + 1
            if log["level"] == LogLevel.AUDIT.value and "passed" in log["details"]:
                audits["passed" if log["details"]["passed"] else "failed"] += 1
        return {
            "run_id": run_id,
            "command": logs[0]["command"] if logs else None,
            "count": len(logs),
            "levels": levels,
            "audits": audits,
            "started": logs[0]["time"] if logs else None,
            "finished": logs[-1]["time"] if logs else None,
        }

    def export_run(self, run_id: str, format: str = "json") -> Optional[str]:
        """
        실행 하나의 로그를 log_dir 아래 파일로 내보내기

        Args:
            run_id: 실행 식별자
            format: 'json' 또는 'csv'

        Returns:
            내보낸 파일 경로 (지원하지 않는 형식이면 None)
        """
        if format not in ("json", "csv"):
            print(f"⚠️ 지원하지 않는 형식: {format}")
            return None
        logs = self.get_run_logs(run_id)
        path = os.path.join(self.log_dir, f"run_{run_id}.{format}")
        with open(path, 'w', encoding='utf-8', newline='') as f:
            if format == "json":
                json.dump(logs, f, ensure_ascii=False, indent=2)
            else:
                writer = csv.DictWriter(f, fieldnames=list(COLUMNS))
                writer.writeheader()
                for log in logs:
                    writer.writerow({**log, "details": json.dumps(log["details"], ensure_ascii=False)})
        return path

    def cleanup_old_logs(self, days: int = 30) -> int:
        """days 일보다 오래된 로그 삭제, 삭제 개수 반환"""
        cutoff = (datetime.now() - timedelta(days=days)).timestamp()
        try:
            with self._lock, self._connect() as conn:
                deleted = conn.execute('DELETE FROM logs WHERE timestamp < ?', (cutoff,)).rowcount
                conn.commit()
        except sqlite3.Error as e:
            self._report_failure("정리", e)
            return 0
        if deleted:
            print(f"🗑️ 오래된 로그 {deleted}개 삭제됨")
        return deleted

    def get_statistics(self) -> Dict[str, Any]:
        """전체 로그의 레벨별 / 카테고리별 개수"""
        stats: Dict[str, Any] = {"total": 0, "cached": len(self.recent_logs), "by_level": {}, "by_category": {}}
        try:
            with self._connect() as conn:
                for column, key in (("level", "by_level"), ("category", "by_category")):
                    for value, count in conn.execute(f'SELECT {column}, COUNT(*) FROM logs GROUP BY {column}'):
                        stats[key][value] = count
                stats["total"] = sum(stats["by_level"].values())
        except sqlite3.Error as e:
            self._report_failure("통계", e)
        return stats

    def get_total_log_count(self) -> int:
        return self.get_statistics()["total"]


class LabLogger:
    """모듈별 로깅 도우미. bind_run 으로 정한 실행 ID 를 모든 행에 붙인다."""

    def __init__(self, log_manager: LogManager):
        self.log_manager = log_manager
        self.run_id: Optional[str] = None
        self.command: Optional[str] = None

    def bind_run(self, run_id: Optional[str], command: Optional[str] = None):
        self.run_id = run_id
        self.command = command

    def _add(self, level: LogLevel, category: LogCategory, message: str, **details):
        return self.log_manager.add_log(level, category, message, run_id=self.run_id,
                                        command=self.command, details=details)

    def log_dynamics(self, message: str, **details):
        self._add(LogLevel.INFO, LogCategory.DYNAMICS, message, **details)

    def log_escape(self, message: str, **details):
        self._add(LogLevel.INFO, LogCategory.ESCAPE, message, **details)

    def log_resolvent(self, message: str, **details):
        self._add(LogLevel.INFO, LogCategory.RESOLVENT, message, **details)

    def log_cli(self, message: str, **details):
        self._add(LogLevel.INFO, LogCategory.CLI, message, **details)

    def log_audit(self, category: LogCategory, message: str, **details):
        """가설 검사 / 검증 결과 (details 에 passed 를 넣으면 실행 요약에 집계)"""
        self._add(LogLevel.AUDIT, category, message, **details)

    def log_system_event(self, message: str, **details):
        self._add(LogLevel.SYSTEM, LogCategory.SYSTEM, message, **details)

    def log_error(self, message: str, category: LogCategory = LogCategory.SYSTEM, **details):
        self._add(LogLevel.ERROR, category, message, **details)

    def log_warning(self, message: str, category: LogCategory = LogCategory.SYSTEM, **details):
        self._add(LogLevel.WARNING, category, message, **details)


# 전역 인스턴스
log_manager = LogManager(os.getenv("LAB_LOG_DIR", "data/logs"))
lab_logger = LabLogger(log_manager)
