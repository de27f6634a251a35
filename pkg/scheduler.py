# scheduler.py - 무거운 수치 작업을 스레드에서 돌리고 입력 순서대로 모으는 작업 분배기
import asyncio
import time
from typing import Any, Callable, Iterable, List, Optional

from errors import InvalidParams
from utils import log_message, format_duration

ProgressCallback = Callable[[int, int, Any], None]


async def _run_all(fn: Callable[[Any], Any], items: List[Any], threads: int,
                   on_done: Optional[ProgressCallback]) -> List[Any]:
    semaphore = asyncio.Semaphore(threads)
    finished = 0

    async def worker(item):
        nonlocal finished
        async with semaphore:
            result = await asyncio.to_thread(fn, item)
        finished += 1
        if on_done is not None:
            on_done(finished, len(items), result)
        return result

    # gather 는 입력 순서를 보존
    return await asyncio.gather(*(worker(item) for item in items))


def map_parallel(fn: Callable[[Any], Any], items: Iterable[Any], threads: int = 1,
                 on_done: Optional[ProgressCallback] = None) -> List[Any]:
    """
    fn 을 items 에 적용 (최대 threads 개 동시 실행)

    Args:
        fn: 순수 함수 (인자 하나)
        items: 입력
        threads: 동시 실행 수 (1 이면 현재 스레드에서 순서대로)
        on_done: (완료 수, 전체 수, 결과) 를 받는 진행 콜백

    Returns:
        list: items 와 같은 순서의 결과. 스레드 수와 무관하다.
    """
    items = list(items)
    if threads < 1:
        raise InvalidParams(f"threads={threads} 는 1 이상이어야 합니다", invariant="threads ≥ 1")
    if threads == 1 or len(items) <= 1:
        results = []
        for k, item in enumerate(items, start=1):
            result = fn(item)
            if on_done is not None:
                on_done(k, len(items), result)
            results.append(result)
        return results
    return asyncio.run(_run_all(fn, items, threads, on_done))


def progress_printer(label: str, every: int = 25) -> ProgressCallback:
    """every 개마다 🔄 진행 줄을 출력하는 콜백"""
    started = time.monotonic()

    def report(done: int, total: int, _result: Any):
        if done == total or done % every == 0:
            elapsed = time.monotonic() - started
            log_message(f"🔄 {label}: {done}/{total} ({format_duration(elapsed)})", level=2)

    return report
