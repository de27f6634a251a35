# main.py - 명령줄 진입점
import argparse
import os
import sys
import time
from typing import List, Optional

# 설정 로드
try:
    from config import config, COMMANDS, RunConfig, load_run_config
except ImportError:
    print("❌ config.py 파일을 찾을 수 없습니다.")
    sys.exit(2)

from commands import dispatch
from errors import ConfigError, LabError, UnknownPreset
from log_manager import lab_logger, log_manager
from utils import log_message, format_duration


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revlab",
        description="회전면 위 준고전 레졸벤트 추정 수치 실험실",
    )
    parser.add_argument("command", choices=COMMANDS, help="실행할 명령")
    parser.add_argument("--config", dest="input", help="JSON 실행 설정 파일")
    parser.add_argument("--preset", help="프리셋 이름 (resolve, sweep)")
    parser.add_argument("--profile", help="프로파일 종류 (flow, classify, escape, glue)")
    parser.add_argument("--h", type=float, help="준고전 매개변수 (resolve)")
    parser.add_argument("--h-list", type=float, nargs="+", dest="h_list", help="h 목록 (sweep, glue)")
    parser.add_argument("--output", dest="output_dir", help=f"결과 디렉토리 (기본 {config.OUTPUT_DIR})")
    parser.add_argument("--threads", type=int, help=f"동시 실행 수 (기본 {config.THREADS})")
    parser.add_argument("--seed", type=int, help=f"시드 (기본 {config.SEED})")
    parser.add_argument("--verbosity", type=int, help="0 이면 조용히")
    parser.add_argument("--force", action="store_true", default=None, help="가설 검사 실패를 무시")
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    """명령줄 인자를 RunConfig 로 (설정 파일 값 위에 덮어씀)"""
    overrides = {
        "command": args.command,
        "output_dir": args.output_dir,
        "threads": args.threads,
        "seed": args.seed,
        "verbosity": args.verbosity,
        "force": args.force,
    }
    if args.input:
        run_config = load_run_config(args.input, overrides)
    else:
        data = {
            "command": args.command,
            "output_dir": config.OUTPUT_DIR,
            "threads": config.THREADS,
            "seed": config.SEED,
            "verbosity": config.VERBOSITY,
            "force": config.FORCE,
        }
        data.update({k: v for k, v in overrides.items() if v is not None})
        run_config = RunConfig.from_dict(data)

    body = run_config.body
    if args.preset:
        body["preset"] = args.preset
    if args.profile:
        body["profile"] = {"kind": args.profile}
    if args.h is not None:
        body["h"] = args.h
    if args.h_list:
        body["h_list"] = list(args.h_list)
    return run_config


def run(run_config: RunConfig) -> int:
    """
    명령 하나 실행

    Returns:
        int: 0 성공, 1 실패한 행 또는 검증, 2 설정 오류
    """
    os.environ["LAB_VERBOSITY"] = str(run_config.verbosity)
    run_id = f"{run_config.command}-{run_config.config_hash()[:12]}-{int(time.time())}"
    lab_logger.bind_run(run_id, run_config.command)
    lab_logger.log_system_event("실행 시작", config=run_config.to_dict())
    started = time.monotonic()
    try:
        passed, files = dispatch(run_config)
    except (ConfigError, UnknownPreset) as e:
        log_message(f"❌ 설정 오류: {e}")
        lab_logger.log_error("설정 오류", error=e.to_dict())
        return 2
    except LabError as e:
        log_message(f"❌ 실행 실패: {e}")
        lab_logger.log_error("실행 실패", error=e.to_dict())
        return 1
    finally:
        lab_logger.bind_run(None)
        summary = log_manager.get_run_summary(run_id)
        log_message(f"📋 로그 {summary['count']}줄, 검증 통과 {summary['audits']['passed']} / "
                    f"실패 {summary['audits']['failed']}", level=2)

    elapsed = format_duration(time.monotonic() - started)
    if passed:
        log_message(f"✅ {run_config.command} 완료 ({elapsed}, 파일 {len(files)}개)")
        return 0
    log_message(f"❌ {run_config.command} 검증 실패 ({elapsed})")
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_config = run_config_from_args(args)
    except ConfigError as e:
        log_message(f"❌ 설정 오류: {e}")
        return 2
    log_manager.cleanup_old_logs(config.LOG_RETENTION_DAYS)
    return run(run_config)


if __name__ == "__main__":
    sys.exit(main())
