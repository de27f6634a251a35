# utils.py - 공용 프로파일 함수와 출력 도우미
import os
import datetime
from typing import Union

import numpy as np
from scipy.special import erf

ArrayLike = Union[float, np.ndarray]


def log_message(msg: str, level: int = 1):
    """LAB_VERBOSITY 이상일 때만 시간과 함께 출력"""
    try:
        verbosity = int(os.getenv("LAB_VERBOSITY", "1"))
    except ValueError:
        verbosity = 1
    if verbosity < level:
        return
    stamp = datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')
    try:
        print(f"[{stamp}] {msg}")
    except UnicodeEncodeError:
        print(f"[{stamp}] {msg.encode('ascii', 'replace').decode('ascii')}")


def psi(x: ArrayLike) -> np.ndarray:
    """
    ψ(x) = e^{-1/x} (x > 0), 0 (x ≤ 0)

    Args:
        x: 입력 값 또는 배열

    Returns:
        np.ndarray: ψ 값 (모든 도함수가 x=0 에서 0)
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def psi_prime(x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 2e-3  # 그 아래에서는 e^{-1/x} 가 0 으로 언더플로
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


def smooth_step(x: ArrayLike) -> np.ndarray:
    """
    0 (x ≤ 0) 에서 1 (x ≥ 1) 로 올라가는 C^∞ 계단 함수

    Args:
        x: 입력 값 또는 배열

    Returns:
        np.ndarray: ψ(x) / (ψ(x) + ψ(1-x)), 구간 밖에서는 정확히 0 또는 1
    """
    x = np.asarray(x, dtype=float)
    a = psi(x)
    b = psi(1.0 - x)
    return a / (a + b)


def smooth_step_prime(x: ArrayLike) -> np.ndarray:
    """smooth_step 의 해석적 도함수"""
    x = np.asarray(x, dtype=float)
    a = psi(x)
    b = psi(1.0 - x)
    da = psi_prime(x)
    db = -psi_prime(1.0 - x)
    return (da * b - a * db) / (a + b) ** 2


def ramp(x: ArrayLike, start: float, end: float) -> np.ndarray:
    """start 에서 0, end 에서 1 (start > end 이면 감소 방향)"""
    return smooth_step((np.asarray(x, dtype=float) - start) / (end - start))


def ramp_prime(x: ArrayLike, start: float, end: float) -> np.ndarray:
    return smooth_step_prime((np.asarray(x, dtype=float) - start) / (end - start)) / (end - start)


def smooth_window(x: ArrayLike, plateau: tuple, support: tuple) -> np.ndarray:
    """
    plateau 위에서 1, support 밖에서 0 인 매끄러운 창 함수

    Args:
        x: 입력 값 또는 배열
        plateau: (lo, hi) 값이 1 인 구간
        support: (lo, hi) 지지 구간 (plateau 를 엄격히 포함)

    Returns:
        np.ndarray: 창 함수 값
    """
    p_lo, p_hi = plateau
    s_lo, s_hi = support
    if not (s_lo < p_lo <= p_hi < s_hi):
        raise ValueError(f"plateau {plateau} 가 support {support} 안에 있지 않습니다")
    return ramp(x, s_lo, p_lo) * ramp(x, s_hi, p_hi)


def smooth_window_prime(x: ArrayLike, plateau: tuple, support: tuple) -> np.ndarray:
    p_lo, p_hi = plateau
    s_lo, s_hi = support
    left = ramp(x, s_lo, p_lo)
    right = ramp(x, s_hi, p_hi)
    return ramp_prime(x, s_lo, p_lo) * right + left * ramp_prime(x, s_hi, p_hi)


def even_window(x: ArrayLike, plateau: float, support: float) -> np.ndarray:
    """|x| ≤ plateau 에서 1, |x| ≥ support 에서 0"""
    return ramp(np.abs(np.asarray(x, dtype=float)), support, plateau)


def erf_box(x: ArrayLike, lo: float, hi: float, width: float) -> np.ndarray:
    """
    [lo, hi] 지시함수를 가우시안으로 완화한 상자

    Args:
        x: 입력 값 또는 배열
        lo: 아래 경계
        hi: 위 경계
        width: 완화 폭

    Returns:
        np.ndarray: ½(erf((x-lo)/w) - erf((x-hi)/w))
    """
    x = np.asarray(x, dtype=float)
    return 0.5 * (erf((x - lo) / width) - erf((x - hi) / width))


def format_duration(seconds: float) -> str:
    """경과 시간 표시 ("1시간 2분 5초", 0 이하이면 "즉시")"""
    total = int(round(seconds))
    if total <= 0:
        return "즉시"
    minutes, secs = divmod(total, 60)
    hours, minutes = divmod(minutes, 60)
    units = [(hours, "시간"), (minutes, "분"), (secs, "초")]
    return " ".join(f"{value}{unit}" for value, unit in units if value)
