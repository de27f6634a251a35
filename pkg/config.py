import os
import json
import hashlib
from dataclasses import dataclass, field, asdict
from typing import Optional, Dict, Any, Callable, Tuple

from dotenv import load_dotenv

from errors import ConfigError

COMMANDS = ("flow", "classify", "escape", "resolve", "sweep", "glue", "preset-list")

# 속성 이름, 환경변수, 기본값, 변환 함수
ENV_SETTINGS: Tuple[Tuple[str, str, Any, Callable[[str], Any]], ...] = (
    ("OUTPUT_DIR", "LAB_OUTPUT_DIR", "data/results", str),
    ("LOG_DIR", "LAB_LOG_DIR", "data/logs", str),
    ("THREADS", "LAB_THREADS", 1, int),
    ("SEED", "LAB_SEED", 20240611, int),
    ("VERBOSITY", "LAB_VERBOSITY", 1, int),
    ("BAND_TOL", "LAB_BAND_TOL", 1e-10, float),
    ("FORCE", "LAB_FORCE", False, bool),
    ("LOG_RETENTION_DAYS", "LAB_LOG_RETENTION_DAYS", 30, int),
)
TRUTHY = ("true", "1", "yes", "on")


class Config:
    """실험실 환경 설정 (.env 와 LAB_* 환경변수)"""

    def __init__(self):
        # 현재 디렉토리의 .env 가 상위 디렉토리보다 먼저
        env_file = next((p for p in ('.env', '../.env') if os.path.exists(p)), None)
        if env_file:
            load_dotenv(env_file)
            self._say(f"🔧 .env 로드: {env_file}")
        else:
            self._say("⚠️ .env 없음, 시스템 환경변수만 사용")

        for attr, key, default, cast in ENV_SETTINGS:
            setattr(self, attr, self._read(key, default, cast))
        self._check_ranges()

    def _say(self, msg: str):
        if os.getenv("LAB_VERBOSITY", "1") != "0":
            print(msg)

    @staticmethod
    def _read(key: str, default: Any, cast: Callable[[str], Any]) -> Any:
        """
        환경변수 하나 읽기

        비어 있으면 기본값. 변환에 실패하면 경고를 찍고 기본값을 쓴다.
        """
        raw = os.getenv(key)
        if raw is None or raw == "":
            return default
        if cast is bool:
            return raw.strip().lower() in TRUTHY
        try:
            return cast(raw)
        except ValueError:
            print(f"⚠️ {key}={raw!r} 해석 불가, 기본값 {default} 사용")
            return default

    def _check_ranges(self):
        if self.THREADS < 1:
            raise ValueError("❌ LAB_THREADS는 1 이상이어야 합니다.")
        if not (0.0 < self.BAND_TOL <= 1e-6):
            raise ValueError("❌ LAB_BAND_TOL은 (0, 1e-6] 범위여야 합니다.")
        if self.LOG_RETENTION_DAYS < 1:
            raise ValueError("❌ LAB_LOG_RETENTION_DAYS는 1 이상이어야 합니다.")

    def describe(self) -> Dict[str, Any]:
        return {key: getattr(self, attr) for attr, key, _, _ in ENV_SETTINGS}

    def print_status(self):
        print("📋 실험실 설정:")
        for key, value in self.describe().items():
            print(f"   - {key}: {value}")


@dataclass
class RunConfig:
    """
    명령줄 실행 요청 하나

    command 는 COMMANDS 중 하나이고, body 는 명령별 JSON 본문
    (profile, potential, preset, regions 등) 이다.
    """

    command: str
    input: Optional[str] = None
    output_dir: str = "data/results"
    threads: int = 1
    seed: int = 20240611
    verbosity: int = 1
    force: bool = False
    body: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        if "command" not in data:
            raise ConfigError("필수 키가 없습니다: command", invariant="command")
        command = data["command"]
        if command not in COMMANDS:
            raise ConfigError(f"알 수 없는 명령: {command} (가능: {', '.join(COMMANDS)})",
                              invariant="command")
        try:
            threads = int(data.get("threads", 1))
            seed = int(data.get("seed", 20240611))
            verbosity = int(data.get("verbosity", 1))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"정수 설정을 읽을 수 없습니다: {e}")
        if threads < 1:
            raise ConfigError("threads는 1 이상이어야 합니다", invariant="threads")
        body = data.get("body", {})
        if not isinstance(body, dict):
            raise ConfigError("body는 객체여야 합니다", invariant="body")
        return cls(
            command=command,
            input=data.get("input"),
            output_dir=data.get("output_dir", "data/results"),
            threads=threads,
            seed=seed,
            verbosity=verbosity,
            force=bool(data.get("force", False)),
            body=dict(body),
        )

    def config_hash(self) -> str:
        """command 와 body 의 정규화 JSON 에 대한 SHA-256"""
        canonical = json.dumps({"command": self.command, "body": self.body},
                               sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def require(self, *keys: str) -> Dict[str, Any]:
        """body 에서 필수 키를 꺼내고, 없으면 그 키를 이름으로 든 ConfigError"""
        missing = [key for key in keys if key not in self.body]
        if missing:
            raise ConfigError(f"필수 키가 없습니다: {', '.join(missing)}", invariant=missing[0])
        return {key: self.body[key] for key in keys}


def load_run_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    JSON 실행 설정 파일 로드

    Args:
        path: 설정 파일 경로
        overrides: 명령줄에서 덮어쓸 최상위 값

    Returns:
        RunConfig: 검증된 실행 설정
    """
    if not os.path.exists(path):
        raise ConfigError(f"설정 파일을 찾을 수 없습니다: {path}", invariant="input")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"설정 파일 JSON 오류: {e}", invariant="input")
    if not isinstance(data, dict):
        raise ConfigError("설정 파일 최상위는 객체여야 합니다", invariant="input")

    data = dict(data)
    data.setdefault("input", path)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


def save_run_config(run_config: RunConfig, path: str):
    """RunConfig 를 다시 읽을 수 있는 JSON 으로 저장"""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(run_config.to_dict(), f, indent=2, ensure_ascii=False, sort_keys=True)


# 전역 설정 인스턴스
try:
    config = Config()
    if config.VERBOSITY and config.VERBOSITY > 1:
        print("✅ 설정 완료")
        config.print_status()
except ValueError as e:
    print(f"❌ 설정 실패: {e}")
    raise
