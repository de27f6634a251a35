# results_manager.py - 결과 파일(JSON / CSV / 그림용 x y) 저장 관리
import os
import csv
import json
import math
from datetime import datetime
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import config, RunConfig, save_run_config
from errors import ConfigError
from log_manager import lab_logger, LogCategory
from quantize import dump_triplets
from utils import log_message

SCHEMA_VERSION = 1
ARTIFACT_VERSION = "0.3.0"


def plain(value: Any) -> Any:
    """numpy / complex 값을 JSON 기본 타입으로 재귀 변환"""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Enum):
        return plain(value.value)
    if hasattr(value, "to_dict"):
        return plain(value.to_dict())
    return value


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (complex, np.complexfloating)):
        return repr(complex(value))
    return str(value)


class ResultsManager:
    """실행 하나의 결과 파일을 output_dir 아래에 저장"""

    def __init__(self, output_dir: Optional[str] = None, run_config: Optional[RunConfig] = None,
                 claim: str = "", anchor: str = ""):
        """
        결과 관리자 초기화

        Args:
            output_dir: 결과 디렉토리 (기본 LAB_OUTPUT_DIR)
            run_config: 메타데이터에 기록할 실행 설정
            claim: 실험이 확인하는 주장 (문장)
            anchor: 주장이 기대는 결과 (말로 적은 이름)
        """
        self.output_dir = output_dir or (run_config.output_dir if run_config else config.OUTPUT_DIR)
        self.run_config = run_config
        self.claim = claim
        self.anchor = anchor
        self.written: List[str] = []
        self.ensure_output_directory()

    def ensure_output_directory(self):
        """결과 디렉토리 생성 및 쓰기 가능 여부 확인"""
        try:
            if not os.path.exists(self.output_dir):
                os.makedirs(self.output_dir)
                log_message(f"✅ 결과 디렉토리 생성: {self.output_dir}", level=2)
        except OSError as e:
            raise ConfigError(f"결과 디렉토리를 만들 수 없습니다: {self.output_dir} ({e})",
                              invariant="output_dir writable")
        if not os.access(self.output_dir, os.W_OK):
            raise ConfigError(f"결과 디렉토리에 쓸 수 없습니다: {self.output_dir}",
                              invariant="output_dir writable")

    def metadata(self, **extra) -> Dict[str, Any]:
        """모든 결과 파일 머리에 붙는 메타데이터"""
        rc = self.run_config
        meta = {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": ARTIFACT_VERSION,
            "config_hash": rc.config_hash() if rc else None,
            "seed": rc.seed if rc else config.SEED,
            "claim": self.claim,
            "anchor": self.anchor,
            "command": rc.command if rc else None,
            "generated_at": datetime.now().isoformat(timespec="seconds"),
        }
        meta.update(plain(extra))
        return meta

    def _path(self, name: str, suffix: str) -> str:
        return os.path.join(self.output_dir, f"{name}{suffix}")

    def _written(self, path: str):
        self.written.append(path)
        log_message(f"💾 결과 저장: {path}", level=2)
        lab_logger.log_cli("결과 파일 저장", path=path)

    def write_json(self, name: str, data: Any, **extra) -> str:
        """
        {"metadata": ..., "data": ...} 형식으로 저장 (키 정렬)

        Returns:
            str: 저장된 파일 경로
        """
        path = self._path(name, ".json")
        payload = {"metadata": self.metadata(**extra), "data": plain(data)}
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")
        self._written(path)
        return path

    def _header_lines(self, extra: Dict[str, Any]) -> List[str]:
        meta = self.metadata(**extra)
        lines = [f"# generated_at: {meta.pop('generated_at')}"]
        for key in sorted(meta):
            value = meta[key]
            if isinstance(value, (dict, list)):
                value = json.dumps(value, sort_keys=True, ensure_ascii=False)
            lines.append(f"# {key}: {'' if value is None else value}")
        return lines

    def write_csv(self, name: str, rows: Sequence[Dict[str, Any]], fieldnames: Optional[Sequence[str]] = None,
                  **extra) -> str:
        """
        # key: value 머리줄 뒤에 표 본문을 쓰는 CSV (실수는 repr)

        Args:
            name: 파일 이름 (확장자 제외)
            rows: 행 사전 목록
            fieldnames: 열 순서 (기본: 첫 행의 키 순서)
        """
        path = self._path(name, ".csv")
        if fieldnames is None:
            fieldnames = list(rows[0].keys()) if rows else []
        with open(path, 'w', encoding='utf-8', newline='') as f:
            for line in self._header_lines(extra):
                f.write(line + "\n")
            writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction="ignore",
                                    lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
        self._written(path)
        return path

    def write_curve(self, name: str, points: Iterable[Tuple[float, float]],
                    x_label: str = "log(1/h)", y_label: str = "log(norm)", **extra) -> str:
        """그림용 (x, y) 공백 구분 파일"""
        path = self._path(name, ".dat")
        with open(path, 'w', encoding='utf-8') as f:
            for line in self._header_lines(extra):
                f.write(line + "\n")
            f.write(f"# columns: {x_label} {y_label}\n")
            for x, y in points:
                if math.isfinite(x) and math.isfinite(y):
                    f.write(f"{float(x)!r} {float(y)!r}\n")
        self._written(path)
        return path


    def save_config(self, name: str = "run_config") -> Optional[str]:
        """실제로 쓰인 실행 설정을 결과 옆에 저장 (--config 로 다시 읽을 수 있음)"""
        if self.run_config is None:
            return None
        path = self._path(name, ".json")
        save_run_config(self.run_config, path)
        self._written(path)
        return path

    def write_triplets(self, name: str, matrix) -> str:
        """희소 행렬을 디버그용 삼중항 텍스트로 저장"""
        path = self._path(name, ".txt")
        dump_triplets(matrix, path)
        self._written(path)
        return path

def read_results(path: str) -> Tuple[Dict[str, Any], Any]:
    """
    JSON 결과 파일 읽기

    Returns:
        (메타데이터, 데이터)
    """
    with open(path, 'r', encoding='utf-8') as f:
        payload = json.load(f)
    if "metadata" in payload and "data" in payload:
        metadata = payload["metadata"]
        if metadata.get("schema_version") != SCHEMA_VERSION:
            lab_logger.log_warning(f"스키마 버전 불일치: {metadata.get('schema_version')}",
                                   category=LogCategory.CLI, path=path)
        return metadata, payload["data"]
    # 메타데이터 없는 파일
    return {}, payload


def read_table(path: str) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
    """write_csv 로 쓴 파일을 (머리 메타데이터, 행) 으로 읽기"""
    header: Dict[str, str] = {}
    body: List[str] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.startswith("# ") and not body:
                key, _, value = line[2:].rstrip("\n").partition(": ")
                header[key] = value
            else:
                body.append(line)
    return header, list(csv.DictReader(body))
