# geometry.py - 회전면 X = R_s x S^1 의 휨 함수 a(s) 와 퍼텐셜 V(s)
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Tuple, Any

import numpy as np

from errors import InvalidParams
from log_manager import lab_logger

DEFAULT_S = 8.0


class ProfileKind(Enum):
    """내장 휨 함수 종류"""
    CATENOID = "catenoid"
    HYPERBOLIC_CYLINDER = "hyperbolic_cylinder"
    DOUBLE_WELL = "double_well"
    NONTRAPPING_MONOTONE = "nontrapping_monotone"
    FLAT = "flat"
    CUSTOM = "custom"


Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Profile:
    """
    회전면 계량 g = ds^2 + a(s)^2 dθ^2 의 휨 함수

    생성 후에는 바뀌지 않으므로 여러 스레드에서 읽기 전용으로 공유해도 된다.
    """

    kind: ProfileKind
    params: Dict[str, Any]
    S: float
    _a: Evaluator = field(repr=False, compare=False)
    _da: Evaluator = field(repr=False, compare=False)
    _dda: Evaluator = field(repr=False, compare=False)

    def a(self, s):
        return self._a(np.asarray(s, dtype=float))

    def a_prime(self, s):
        return self._da(np.asarray(s, dtype=float))

    def a_second(self, s):
        return self._dda(np.asarray(s, dtype=float))

    def q_a(self, s):
        """a^{1/2} 켤레화로 생기는 곡률 퍼텐셜 (a')^2/(4a^2) - a''/(2a)"""
        a = self.a(s)
        return self.a_prime(s) ** 2 / (4.0 * a ** 2) - self.a_second(s) / (2.0 * a)

    @property
    def s0(self) -> Optional[float]:
        """double_well 의 극소 위치 (다른 종류는 None)"""
        if self.kind is ProfileKind.DOUBLE_WELL:
            return float(self.params["s0"])
        return None

    def in_domain(self, s) -> np.ndarray:
        return np.abs(np.asarray(s, dtype=float)) <= self.S * (1.0 + 1e-12)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind is ProfileKind.CUSTOM and "coeffs" not in self.params:
            raise InvalidParams("함수로 만든 custom 프로파일은 직렬화할 수 없습니다")
        return {"kind": self.kind.value, "params": dict(self.params), "S": self.S}


@dataclass(frozen=True)
class Potential:
    """콤팩트 지지 퍼텐셜 V(s)"""

    kind: str
    params: Dict[str, Any]
    support: Optional[Tuple[float, float]]
    _v: Evaluator = field(repr=False, compare=False)
    _dv: Evaluator = field(repr=False, compare=False)
    _ddv: Evaluator = field(repr=False, compare=False)

    def V(self, s):
        return self._v(np.asarray(s, dtype=float))

    def V_prime(self, s):
        return self._dv(np.asarray(s, dtype=float))

    def V_second(self, s):
        return self._ddv(np.asarray(s, dtype=float))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "params": dict(self.params)}


def _zeros(s: np.ndarray) -> np.ndarray:
    return np.zeros_like(s, dtype=float)


def _ones(s: np.ndarray) -> np.ndarray:
    return np.ones_like(s, dtype=float)


def _catenoid():
    return (lambda s: np.sqrt(1.0 + s ** 2),
            lambda s: s / np.sqrt(1.0 + s ** 2),
            lambda s: (1.0 + s ** 2) ** -1.5)


def _hyperbolic_cylinder(beta: float):
    return (lambda s: beta * np.cosh(s),
            lambda s: beta * np.sinh(s),
            lambda s: beta * np.cosh(s))


def _double_well(s0: float, depth: float):
    # a = 1 + d (s^2/s0^2 - 1)^2 : 0 에서 극대 1 + d, ±s0 에서 극소 1
    def a(s):
        return 1.0 + depth * (s ** 2 / s0 ** 2 - 1.0) ** 2

    def da(s):
        return 4.0 * depth * s * (s ** 2 / s0 ** 2 - 1.0) / s0 ** 2

    def dda(s):
        return 4.0 * depth / s0 ** 2 * (3.0 * s ** 2 / s0 ** 2 - 1.0)

    return a, da, dda


def _nontrapping_monotone(beta: float, kappa: float):
    return (lambda s: beta * np.exp(kappa * s),
            lambda s: beta * kappa * np.exp(kappa * s),
            lambda s: beta * kappa ** 2 * np.exp(kappa * s))


def _positive_param(params: Dict[str, Any], key: str, default: float) -> float:
    try:
        value = float(params.get(key, default))
    except (TypeError, ValueError):
        raise InvalidParams(f"{key} 값이 숫자가 아닙니다: {params.get(key)!r}", invariant=key)
    if not np.isfinite(value) or value <= 0:
        raise InvalidParams(f"{key} 는 양수여야 합니다: {value}", invariant=key, witness=value)
    return value


def _check_positive_warp(a: Evaluator, S: float, kind: str):
    s = np.linspace(-S, S, 4001)
    values = a(s)
    if not np.all(np.isfinite(values)) or np.min(values) <= 0:
        worst = float(s[np.argmin(values)])
        raise InvalidParams(f"{kind} 프로파일이 a > 0 을 만족하지 않습니다 (s={worst:.4f})",
                            invariant="a > 0", witness=worst)


def make_profile(kind, params: Optional[Dict[str, Any]] = None, S: float = DEFAULT_S) -> Profile:
    """
    내장 또는 사용자 정의 휨 함수 생성

    Args:
        kind: ProfileKind 또는 그 문자열 값
        params: 종류별 매개변수 (beta, s0, depth, kappa, coeffs)
        S: 영역 반폭 [-S, S]

    Returns:
        Profile: 종류별 불변식을 만족하는 프로파일
    """
    try:
        kind = ProfileKind(kind) if not isinstance(kind, ProfileKind) else kind
    except ValueError:
        raise InvalidParams(f"알 수 없는 프로파일 종류: {kind}", invariant="kind")
    params = dict(params or {})
    S = float(S)
    if not np.isfinite(S) or S <= 0:
        raise InvalidParams(f"S 는 양수여야 합니다: {S}", invariant="S")

    if kind is ProfileKind.CATENOID:
        funcs = _catenoid()
    elif kind is ProfileKind.HYPERBOLIC_CYLINDER:
        beta = _positive_param(params, "beta", 1.0)
        params["beta"] = beta
        funcs = _hyperbolic_cylinder(beta)
    elif kind is ProfileKind.DOUBLE_WELL:
        s0 = _positive_param(params, "s0", 2.0)
        depth = _positive_param(params, "depth", 1.0)
        if s0 >= S / 2:
            raise InvalidParams(f"s0={s0} 는 S/2={S / 2} 보다 작아야 합니다",
                                invariant="s0 < S/2", witness=s0)
        params.update(s0=s0, depth=depth)
        funcs = _double_well(s0, depth)
    elif kind is ProfileKind.NONTRAPPING_MONOTONE:
        beta = _positive_param(params, "beta", 1.0)
        kappa = _positive_param(params, "kappa", 0.5)
        params.update(beta=beta, kappa=kappa)
        funcs = _nontrapping_monotone(beta, kappa)
    elif kind is ProfileKind.FLAT:
        funcs = (_ones, _zeros, _zeros)
    else:
        coeffs = params.get("coeffs")
        if not coeffs:
            raise InvalidParams("custom 프로파일에는 coeffs 가 필요합니다", invariant="coeffs")
        poly = np.polynomial.Polynomial([float(c) for c in coeffs])
        params["coeffs"] = [float(c) for c in coeffs]
        d1, d2 = poly.deriv(1), poly.deriv(2)
        funcs = (lambda s: poly(s), lambda s: d1(s), lambda s: d2(s))

    _check_positive_warp(funcs[0], S, kind.value)
    return Profile(kind, params, S, *funcs)


def profile_from_callables(a: Evaluator, a_prime: Evaluator, a_second: Evaluator,
                           S: float = DEFAULT_S, label: str = "callable") -> Profile:
    """해석적 도함수와 함께 주어진 임의의 휨 함수"""
    _check_positive_warp(a, S, label)
    return Profile(ProfileKind.CUSTOM, {"label": label}, float(S), a, a_prime, a_second)


def profile_from_dict(data: Dict[str, Any]) -> Profile:
    if "kind" not in data:
        raise InvalidParams("프로파일 설정에 kind 가 없습니다", invariant="kind")
    return make_profile(data["kind"], data.get("params"), data.get("S", DEFAULT_S))


def make_potential(kind: str = "zero", params: Optional[Dict[str, Any]] = None) -> Potential:
    """
    퍼텐셜 생성

    Args:
        kind: "zero" 또는 "bump" (amp·exp(1 - 1/(1-r^2)), r = (s-center)/width)
        params: bump 의 amp, center, width

    Returns:
        Potential: 콤팩트 지지 퍼텐셜
    """
    params = dict(params or {})
    if kind == "zero":
        return Potential("zero", {}, None, _zeros, _zeros, _zeros)
    if kind != "bump":
        raise InvalidParams(f"알 수 없는 퍼텐셜 종류: {kind}", invariant="kind")

    amp = float(params.get("amp", 0.1))
    center = float(params.get("center", 0.0))
    width = _positive_param(params, "width", 1.0)
    params.update(amp=amp, center=center, width=width)

    def parts(s):
        r = (s - center) / width
        inside = r ** 2 < 1.0
        one_minus = np.where(inside, 1.0 - r ** 2, 1.0)
        g = np.where(inside, 1.0 - 1.0 / one_minus, -np.inf)
        e = np.where(inside, np.exp(g), 0.0)
        g1 = -2.0 * r / one_minus ** 2
        g2 = -2.0 / one_minus ** 2 - 8.0 * r ** 2 / one_minus ** 3
        return e, g1, g2

    def v(s):
        return amp * parts(s)[0]

    def dv(s):
        e, g1, _ = parts(s)
        return amp * e * g1 / width

    def ddv(s):
        e, g1, g2 = parts(s)
        return amp * e * (g1 ** 2 + g2) / width ** 2

    return Potential("bump", params, (center - width, center + width), v, dv, ddv)


def potential_from_dict(data: Optional[Dict[str, Any]]) -> Potential:
    if not data:
        return make_potential("zero")
    return make_potential(data.get("kind", "zero"), data.get("params"))


def _check_domain(profile: Profile, s):
    if not np.all(profile.in_domain(s)):
        raise InvalidParams(f"s 가 영역 [-{profile.S}, {profile.S}] 밖에 있습니다",
                            invariant="domain", witness=np.max(np.abs(s)))


def effective_potential(profile: Profile, potential: Optional[Potential], mu: float, s):
    """
    유효 퍼텐셜 V_eff(s; μ) = μ^2 / a(s)^2 + V(s)

    Args:
        profile: 휨 함수
        potential: 퍼텐셜 (None 이면 0)
        mu: 클레로 불변량 (각운동량)
        s: 위치 (스칼라 또는 배열)

    Returns:
        V_eff 값
    """
    s = np.asarray(s, dtype=float)
    _check_domain(profile, s)
    value = mu ** 2 / profile.a(s) ** 2
    if potential is not None and not potential.is_zero:
        value = value + potential.V(s)
    return value


def effective_potential_prime(profile: Profile, potential: Optional[Potential], mu, s):
    s = np.asarray(s, dtype=float)
    a = profile.a(s)
    value = -2.0 * mu ** 2 * profile.a_prime(s) / a ** 3
    if potential is not None and not potential.is_zero:
        value = value + potential.V_prime(s)
    return value


def effective_potential_second(profile: Profile, potential: Optional[Potential], mu, s):
    s = np.asarray(s, dtype=float)
    a = profile.a(s)
    da = profile.a_prime(s)
    value = -2.0 * mu ** 2 * (profile.a_second(s) / a ** 3 - 3.0 * da ** 2 / a ** 4)
    if potential is not None and not potential.is_zero:
        value = value + potential.V_second(s)
    return value


@dataclass
class ProfileAudit:
    """유한차분 일관성 검사 결과"""
    passed: bool
    max_error_first: float
    max_error_second: float
    worst_s: float
    samples: int


def audit_profile(profile: Profile, n_samples: int = 1000, step: float = 1e-4,
                  seed: int = 0, rtol: float = 1e-6) -> ProfileAudit:
    """
    a', a'' 를 중심 유한차분과 비교

    Args:
        profile: 검사할 프로파일
        n_samples: 무작위 표본 수
        step: 차분 간격
        seed: 표본 시드
        rtol: 허용 상대 오차 (max(1, |a|, |정확값|) 기준)

    Returns:
        ProfileAudit: 최대 오차와 통과 여부
    """
    rng = np.random.default_rng(seed)
    margin = 0.01
    s = rng.uniform(-profile.S + margin, profile.S - margin, n_samples)
    a = profile.a(s)
    plus, minus = profile.a(s + step), profile.a(s - step)
    fd1 = (plus - minus) / (2.0 * step)
    fd2 = (plus - 2.0 * a + minus) / step ** 2
    exact1, exact2 = profile.a_prime(s), profile.a_second(s)
    err1 = np.abs(fd1 - exact1) / np.maximum.reduce([np.ones_like(a), np.abs(a), np.abs(exact1)])
    err2 = np.abs(fd2 - exact2) / np.maximum.reduce([np.ones_like(a), np.abs(a), np.abs(exact2)])
    worst = int(np.argmax(np.maximum(err1, err2)))
    audit = ProfileAudit(
        passed=bool(np.max(err1) <= rtol and np.max(err2) <= rtol),
        max_error_first=float(np.max(err1)),
        max_error_second=float(np.max(err2)),
        worst_s=float(s[worst]),
        samples=n_samples,
    )
    if not audit.passed:
        lab_logger.log_warning(f"프로파일 유한차분 검사 실패: {profile.kind.value}",
                               max_error_first=audit.max_error_first,
                               max_error_second=audit.max_error_second, worst_s=audit.worst_s)
    return audit
