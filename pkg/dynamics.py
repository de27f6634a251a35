# dynamics.py - 고정 μ 에서의 축약 쌍특성 흐름, 닫힌 궤도, 점 분류, 탈출 시간, 볼록성 검사
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from errors import IntegrationFailed, HorizonExceeded, PreconditionError, InvalidParams
from geometry import (Profile, Potential, effective_potential_prime,
                      effective_potential_second, make_potential)
from log_manager import lab_logger, LogCategory

DEFAULT_DT = 2.5e-3
DRIFT_TOL = 1e-8
SHELL_TOL = 1e-6
ORBIT_TOL = 1e-3
SEPARATRIX_TOL = 1e-6
DEGENERATE_TOL = 1e-8
DEFAULT_HORIZON = 200.0


@dataclass(frozen=True)
class PhasePoint:
    """축약 위상 공간의 점 (s, σ) 과 클레로 불변량 μ"""
    s: float
    sigma: float
    mu: float

    def reflected(self) -> "PhasePoint":
        return PhasePoint(self.s, -self.sigma, self.mu)


class ExitReason(Enum):
    HORIZON = "horizon"
    LEFT_DOMAIN = "left_domain"
    ENTERED_ABSORBER = "entered_absorber_region"


@dataclass
class Trajectory:
    """
    적분 결과

    t 는 적분 방향으로 단조 (역방향 흐름이면 감소) 이고, 표본은 적분 순서대로 저장된다.
    """
    t: np.ndarray
    s: np.ndarray
    sigma: np.ndarray
    mu: float
    energy_drift: float
    exit_reason: ExitReason
    tolerance: float

    @property
    def final(self) -> PhasePoint:
        return PhasePoint(float(self.s[-1]), float(self.sigma[-1]), self.mu)

    @property
    def direction(self) -> int:
        return 1 if len(self.t) < 2 or self.t[-1] >= self.t[0] else -1

    def excerpt(self, max_points: int = 200) -> Dict[str, list]:
        """분류 근거로 남길 부분 표본"""
        stride = max(1, len(self.t) // max_points)
        return {"t": self.t[::stride].tolist(), "s": self.s[::stride].tolist(),
                "sigma": self.sigma[::stride].tolist(), "mu": self.mu}

    def to_rows(self) -> List[Dict[str, float]]:
        return [{"t": float(t), "s": float(s), "sigma": float(p)}
                for t, s, p in zip(self.t, self.s, self.sigma)]


class Stability(Enum):
    HYPERBOLIC = "hyperbolic"
    ELLIPTIC = "elliptic"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class ClosedOrbit:
    """위도 원 위의 닫힌 궤도 (V_eff 의 임계점)"""
    s_star: float
    mu: float
    stability: Stability
    energy: float
    curvature: float
    continuum: bool = False

    @property
    def orbit_id(self) -> str:
        if self.continuum:
            return "continuum"
        return f"orbit(s={self.s_star:+.4f},mu={self.mu:+.4f})"

    @property
    def point(self) -> PhasePoint:
        return PhasePoint(self.s_star, 0.0, self.mu)


class PointLabel(Enum):
    ELLIPTIC_OFF_SHELL = "elliptic_off_shell"
    BACKWARD_NONTRAPPED = "backward_nontrapped"
    FORWARD_FLOWOUT = "forward_flowout"
    TRAPPED = "trapped"
    UNDETERMINED_AT_HORIZON = "undetermined_at_horizon"


@dataclass
class PointClass:
    """
    점 분류 결과

    orbit_id 는 forward_flowout / trapped 일 때 역방향 극한 궤도,
    forward_limit 은 순방향 적분이 수렴한 궤도 (있는 경우) 이다.
    """
    label: PointLabel
    orbit_id: Optional[str] = None
    forward_limit: Optional[str] = None
    reason: str = ""
    witness: Dict[str, list] = field(default_factory=dict)


class RegionRole(Enum):
    GAMMA = "Γ-nbhd"
    U1 = "U1"
    U0 = "U0"
    U = "U"
    V1 = "V1"
    V0 = "V0"
    V = "V"
    W = "W"
    U_MINUS = "U-"
    U_PLUS = "U+"


Box = Tuple[float, float, float, float]


@dataclass(frozen=True)
class RegionSpec:
    """
    고정 μ 창에서 (s, σ) 평면의 이름 붙은 영역

    boxes 는 (s_lo, s_hi, σ_lo, σ_hi) 직사각형의 합집합, level_fn 이 주어지면
    {level_fn < 0} 과의 합집합이다.
    """
    name: str
    role: RegionRole
    boxes: Tuple[Box, ...] = ()
    level_fn: Optional[Callable] = field(default=None, compare=False)
    mu_window: Optional[Tuple[float, float]] = None

    def depth(self, s, sigma) -> np.ndarray:
        """영역 안쪽으로의 여유 (양수면 내부, 음수면 외부)"""
        s = np.asarray(s, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        best = np.full(np.broadcast(s, sigma).shape, -np.inf)
        for s_lo, s_hi, p_lo, p_hi in self.boxes:
            d = np.minimum.reduce([s - s_lo, s_hi - s, sigma - p_lo, p_hi - sigma])
            best = np.maximum(best, d)
        if self.level_fn is not None:
            best = np.maximum(best, -np.asarray(self.level_fn(s, sigma), dtype=float))
        return best

    def contains(self, s, sigma, margin: float = 0.0) -> np.ndarray:
        return self.depth(s, sigma) > margin

    def contains_mu(self, mu: float) -> bool:
        if self.mu_window is None:
            return True
        return self.mu_window[0] <= mu <= self.mu_window[1]

    def bounding_box(self) -> Box:
        if not self.boxes:
            raise PreconditionError(f"{self.name}: 상자가 없는 영역의 경계 상자를 알 수 없습니다")
        b = np.array(self.boxes)
        return (float(b[:, 0].min()), float(b[:, 1].max()), float(b[:, 2].min()), float(b[:, 3].max()))

    def scaled(self, factor: float, center: Tuple[float, float], name: str, role: RegionRole) -> "RegionSpec":
        """center 를 중심으로 각 상자를 factor 배 확대/축소"""
        cs, cp = center
        boxes = tuple((cs + factor * (a - cs), cs + factor * (b - cs),
                       cp + factor * (c - cp), cp + factor * (d - cp)) for a, b, c, d in self.boxes)
        return RegionSpec(name, role, boxes, None, self.mu_window)

    @classmethod
    def centered_box(cls, name: str, role: RegionRole, center: Tuple[float, float],
                     half_s: float, half_sigma: float,
                     mu_window: Optional[Tuple[float, float]] = None) -> "RegionSpec":
        s, p = center
        return cls(name, role, ((s - half_s, s + half_s, p - half_sigma, p + half_sigma),), None, mu_window)

    @classmethod
    def s_band(cls, name: str, intervals: Sequence[Tuple[float, float]],
               role: RegionRole = RegionRole.U) -> "RegionSpec":
        """σ 방향으로 제한 없는 s 구간들의 합집합"""
        return cls(name, role, tuple((float(lo), float(hi), -np.inf, np.inf) for lo, hi in intervals))


def compactly_contained(inner: RegionSpec, outer: RegionSpec, grid: Tuple[np.ndarray, np.ndarray],
                        margin: float) -> Tuple[bool, Optional[Tuple[float, float]]]:
    """
    격자 위에서 inner ⋐ outer 를 확인

    Args:
        inner: 안쪽 영역
        outer: 바깥 영역
        grid: (S, Σ) meshgrid
        margin: inner 의 닫힘이 outer 안에 들어가야 하는 여유

    Returns:
        (통과 여부, 위반 점)
    """
    S, P = grid
    closure = inner.depth(S, P) >= 0.0
    ok = outer.depth(S, P) >= margin
    bad = closure & ~ok
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        return False, (float(S[tuple(idx)]), float(P[tuple(idx)]))
    return True, None


@dataclass(frozen=True)
class EscapeRegions:
    """탈출 함수 구성에 쓰는 중첩 영역 Γ ⊂ V1 ⋐ U1 ⋐ U0 ⋐ V0 ⋐ U"""
    gamma: RegionSpec
    U1: RegionSpec
    U0: RegionSpec
    U: RegionSpec
    V1: RegionSpec
    V0: RegionSpec

    def verification_grid(self, n: int = 161) -> Tuple[np.ndarray, np.ndarray]:
        s_lo, s_hi, p_lo, p_hi = self.U.bounding_box()
        pad_s = 0.1 * (s_hi - s_lo)
        pad_p = 0.1 * (p_hi - p_lo)
        return np.meshgrid(np.linspace(s_lo - pad_s, s_hi + pad_s, n),
                           np.linspace(p_lo - pad_p, p_hi + pad_p, n), indexing="ij")

    def validate(self, orbits: Sequence[ClosedOrbit], margin: float = 1e-3):
        """중첩 불변식 검사, 실패하면 PreconditionError"""
        for orbit in orbits:
            if not self.gamma.contains(orbit.s_star, 0.0, margin) or not self.U1.contains(orbit.s_star, 0.0, margin):
                raise PreconditionError(f"궤도 {orbit.orbit_id} 가 Γ-근방/U1 안에 있지 않습니다",
                                        invariant="Γ ⊂ U1", witness=(orbit.s_star, 0.0))
        grid = self.verification_grid()
        pairs = [(self.gamma, self.V1), (self.V1, self.U1), (self.U1, self.U0),
                 (self.U0, self.V0), (self.V0, self.U)]
        for inner, outer in pairs:
            ok, witness = compactly_contained(inner, outer, grid, margin)
            if not ok:
                raise PreconditionError(f"{inner.name} ⋐ {outer.name} 가 성립하지 않습니다",
                                        invariant=f"{inner.name} ⋐ {outer.name}", witness=witness)


@dataclass
class EscapeTimes:
    T_V1: float
    T_V0: float
    T_U: float

    @property
    def ordered(self) -> bool:
        return self.T_V1 <= self.T_V0 <= self.T_U


@dataclass
class ConvexityReport:
    holds: bool
    vacuous: bool
    mode: str
    n_samples: int
    witnesses: List[Dict[str, float]] = field(default_factory=list)


class ReducedFlow:
    """
    고정 μ 에서의 축약 해밀턴 흐름 ds/dt = 2σ, dσ/dt = -V_eff'(s; μ)

    Args:
        profile: 휨 함수
        potential: 퍼텐셜 (None 이면 0)
        energy: 껍질 에너지 E
        dt: 기본 RK4 시간 간격
        drift_tol: 허용 에너지 변동
        absorber_start: |s| 가 이 값을 넘으면 흡수 영역 진입으로 멈춤 (None 이면 사용 안 함)
    """

    def __init__(self, profile: Profile, potential: Optional[Potential] = None, energy: float = 1.0,
                 dt: float = DEFAULT_DT, drift_tol: float = DRIFT_TOL,
                 absorber_start: Optional[float] = None):
        if dt <= 0:
            raise InvalidParams(f"dt 는 양수여야 합니다: {dt}", invariant="dt > 0")
        self.profile = profile
        self.potential = potential if potential is not None else make_potential("zero")
        self.energy = float(energy)
        self.dt = float(dt)
        self.drift_tol = float(drift_tol)
        self.absorber_start = absorber_start
        self._orbit_cache: Dict[float, List[ClosedOrbit]] = {}

    # ------------------------------------------------------------------ 기본 양
    def veff(self, s, mu):
        return mu ** 2 / self.profile.a(s) ** 2 + self.potential.V(s)

    def veff_prime(self, s, mu):
        return effective_potential_prime(self.profile, self.potential, mu, s)

    def veff_second(self, s, mu):
        return effective_potential_second(self.profile, self.potential, mu, s)

    def hamiltonian(self, s, sigma, mu):
        """p = σ^2 + μ^2/a^2 + V"""
        return np.asarray(sigma) ** 2 + self.veff(s, mu)

    def vector_field(self, s, sigma, mu):
        """H_p 의 (s, σ) 성분"""
        return 2.0 * np.asarray(sigma, dtype=float), -self.veff_prime(s, mu)

    def shell_sigma(self, s, mu, sign: float = 1.0) -> float:
        """껍질 p = E 위의 σ (접근 불가면 InvalidParams)"""
        gap = self.energy - float(self.veff(s, mu))
        if gap < -SHELL_TOL:
            raise InvalidParams(f"s={s}, μ={mu} 는 에너지 {self.energy} 에서 접근할 수 없습니다",
                                invariant="V_eff ≤ E", witness=gap)
        return math.copysign(math.sqrt(max(gap, 0.0)), sign)

    def on_shell(self, s: float, mu: float, sign: float = 1.0) -> PhasePoint:
        """껍질 위로 σ 를 맞춘 점 (sign 은 σ 의 부호)"""
        return PhasePoint(float(s), self.shell_sigma(s, mu, sign), float(mu))

    def rk4_step(self, s, sigma, mu, h):
        """고전 4차 룽게-쿠타 한 걸음 (배열 입력 가능)"""
        k1s, k1p = 2.0 * sigma, -self.veff_prime(s, mu)
        s2, p2 = s + 0.5 * h * k1s, sigma + 0.5 * h * k1p
        k2s, k2p = 2.0 * p2, -self.veff_prime(s2, mu)
        s3, p3 = s + 0.5 * h * k2s, sigma + 0.5 * h * k2p
        k3s, k3p = 2.0 * p3, -self.veff_prime(s3, mu)
        s4, p4 = s + h * k3s, sigma + h * k3p
        k4s, k4p = 2.0 * p4, -self.veff_prime(s4, mu)
        return (s + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s),
                sigma + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p))

    def _stopped(self, s, stop_radius: Optional[float]):
        s_abs = np.abs(s)
        absorbed = np.zeros_like(s_abs, dtype=bool)
        if self.absorber_start is not None:
            absorbed = s_abs > self.absorber_start
        left = s_abs > self.profile.S
        if stop_radius is not None:
            left = left | (s_abs > stop_radius)
        return absorbed, left

    # ------------------------------------------------------------------ 흐름
    def flow(self, point: PhasePoint, T: float, dt: Optional[float] = None,
             stop_radius: Optional[float] = None, check_drift: bool = True) -> Trajectory:
        """
        고정 간격 RK4 로 점 하나를 시간 T 만큼 흘림 (T < 0 이면 역방향)

        Args:
            point: 시작점
            T: 적분 시간 (유한)
            dt: 시간 간격 (기본값은 self.dt)
            stop_radius: |s| 가 이를 넘으면 영역 이탈로 멈춤
            check_drift: 에너지 변동이 허용치를 넘으면 IntegrationFailed

        Returns:
            Trajectory: 표본, 에너지 변동, 종료 사유
        """
        dt = self.dt if dt is None else float(dt)
        if not np.isfinite(T) or dt <= 0:
            raise InvalidParams(f"T={T}, dt={dt} 가 올바르지 않습니다", invariant="finite T, dt > 0")
        n = max(1, int(math.ceil(abs(T) / dt - 1e-9))) if T != 0 else 0
        step = T / n if n else 0.0

        ts = np.empty(n + 1)
        ss = np.empty(n + 1)
        ps = np.empty(n + 1)
        s = np.array([point.s], dtype=float)
        p = np.array([point.sigma], dtype=float)
        ts[0], ss[0], ps[0] = 0.0, point.s, point.sigma
        exit_reason = ExitReason.HORIZON
        last = n
        for k in range(n):
            s, p = self.rk4_step(s, p, point.mu, step)
            ts[k + 1], ss[k + 1], ps[k + 1] = (k + 1) * step, s[0], p[0]
            absorbed, left = self._stopped(s, stop_radius)
            if absorbed[0] or left[0]:
                exit_reason = ExitReason.ENTERED_ABSORBER if absorbed[0] else ExitReason.LEFT_DOMAIN
                last = k + 1
                break

        ts, ss, ps = ts[:last + 1], ss[:last + 1], ps[:last + 1]
        energies = self.hamiltonian(ss, ps, point.mu)
        drift = float(np.max(np.abs(energies - energies[0]))) if len(energies) else 0.0
        if check_drift and drift > self.drift_tol:
            raise IntegrationFailed(f"에너지 변동 {drift:.3e} 가 허용치 {self.drift_tol:.1e} 를 넘었습니다 (dt={dt})",
                                    invariant="energy drift", witness=point)
        return Trajectory(ts, ss, ps, float(point.mu), drift, exit_reason, self.drift_tol)

    def flow_many(self, s0, sigma0, mu, T: float, dt: Optional[float] = None,
                  stop_radius: Optional[float] = None, record_every: int = 0):
        """
        여러 점을 한꺼번에 흘림. 영역을 벗어난 점은 그 자리에서 멈춘다.

        Args:
            s0, sigma0: 시작 좌표 배열
            mu: 스칼라 또는 배열
            T: 적분 시간
            dt: 시간 간격
            stop_radius: 멈춤 반경
            record_every: 0 보다 크면 그 간격마다 상태를 기록

        Returns:
            (최종 s, 최종 σ, 활성 여부, 최대 에너지 변동, 기록 목록)
        """
        dt = self.dt if dt is None else float(dt)
        s = np.array(s0, dtype=float, copy=True)
        p = np.array(sigma0, dtype=float, copy=True)
        mu = np.broadcast_to(np.asarray(mu, dtype=float), s.shape)
        n = max(1, int(math.ceil(abs(T) / dt - 1e-9)))
        step = T / n
        active = np.ones(s.shape, dtype=bool)
        e0 = self.hamiltonian(s, p, mu)
        drift = np.zeros(s.shape)
        history = []
        for k in range(n):
            ns, np_ = self.rk4_step(s, p, mu, step)
            s = np.where(active, ns, s)
            p = np.where(active, np_, p)
            drift = np.where(active, np.maximum(drift, np.abs(self.hamiltonian(s, p, mu) - e0)), drift)
            absorbed, left = self._stopped(s, stop_radius)
            active &= ~(absorbed | left)
            if record_every and (k + 1) % record_every == 0:
                history.append(((k + 1) * step, s.copy(), p.copy()))
            if not np.any(active):
                break
        return s, p, active, drift, history

    # ------------------------------------------------------------------ 닫힌 궤도
    def orbit_equation(self, s):
        """σ=0, p=E 에서의 임계 조건 F(s) = V' - 2(E - V) a'/a"""
        s = np.asarray(s, dtype=float)
        return (self.potential.V_prime(s)
                - 2.0 * (self.energy - self.potential.V(s)) * self.profile.a_prime(s) / self.profile.a(s))

    def classify_orbits(self, mu_window: Optional[Tuple[float, float]] = None,
                        n_scan: int = 4001) -> List[ClosedOrbit]:
        """
        에너지 E 껍질 위의 모든 위도 궤도와 안정성

        Args:
            mu_window: [μ_min, μ_max] 로 거르기 (None 이면 전부)
            n_scan: 부호 변화 탐색 격자 크기

        Returns:
            (s*, μ) 순으로 정렬된 ClosedOrbit 목록. V_eff 가 상수면 continuum 하나.
        """
        key = (mu_window, n_scan)
        if key in self._orbit_cache:
            return list(self._orbit_cache[key])

        S = self.profile.S
        grid = np.linspace(-S, S, n_scan)
        F = self.orbit_equation(grid)
        orbits: List[ClosedOrbit] = []

        if np.max(np.abs(F)) < 1e-12:
            mu = float(self.profile.a(0.0) * math.sqrt(max(self.energy - float(self.potential.V(0.0)), 0.0)))
            orbits.append(ClosedOrbit(0.0, mu, Stability.DEGENERATE, self.energy, 0.0, continuum=True))
            lab_logger.log_dynamics("V_eff 가 상수: 퇴화 연속체", energy=self.energy)
            self._orbit_cache[key] = orbits
            return list(orbits)

        roots: List[float] = []
        for j in range(n_scan - 1):
            if F[j] == 0.0:
                roots.append(float(grid[j]))
            elif F[j] * F[j + 1] < 0.0:
                roots.append(float(brentq(self.orbit_equation, grid[j], grid[j + 1], xtol=1e-14)))
        if F[-1] == 0.0:
            roots.append(float(grid[-1]))
        roots.sort()
        unique: List[float] = []
        for r in roots:
            if not unique or abs(r - unique[-1]) > 1e-9:
                unique.append(r)

        for s_star in unique:
            gap = self.energy - float(self.potential.V(s_star))
            if gap <= 0:
                continue
            mu_abs = float(self.profile.a(s_star)) * math.sqrt(gap)
            for mu in (-mu_abs, mu_abs):
                if mu_window is not None and not (mu_window[0] <= mu <= mu_window[1]):
                    continue
                curv = float(self.veff_second(s_star, mu))
                if abs(curv) < DEGENERATE_TOL:
                    stability = Stability.DEGENERATE
                elif curv < 0:
                    stability = Stability.HYPERBOLIC
                else:
                    stability = Stability.ELLIPTIC
                orbits.append(ClosedOrbit(s_star, mu, stability, self.energy, curv))

        orbits.sort(key=lambda o: (o.s_star, o.mu))
        lab_logger.log_dynamics(f"닫힌 궤도 {len(orbits)}개 분류", energy=self.energy,
                                orbits=[o.orbit_id for o in orbits])
        self._orbit_cache[key] = orbits
        return list(orbits)

    # ------------------------------------------------------------------ 점 분류
    def _matching_orbits(self, mu: float, orbits: Sequence[ClosedOrbit]) -> List[ClosedOrbit]:
        return [o for o in orbits if not o.continuum and abs(o.mu - mu) <= 1e-9]

    def _scan(self, point: PhasePoint, direction: int, horizon: float, escape_radius: float,
              barrier_symbol: Optional[Callable], orbits: Sequence[ClosedOrbit], chunk: float = 5.0):
        """
        한 방향으로 조각씩 적분하며 탈출 / 장벽 / 궤도 수렴을 찾음

        Returns:
            ("escaped" | "barrier" | "converged" | "horizon", 궤도, 마지막 조각)
        """
        current = point
        elapsed = 0.0
        trajectory = None
        while elapsed < horizon - 1e-12:
            span = min(chunk, horizon - elapsed)
            trajectory = self.flow(current, direction * span, stop_radius=escape_radius)
            if barrier_symbol is not None:
                w = np.asarray(barrier_symbol(trajectory.s, trajectory.sigma), dtype=float)
                if np.any(w > 0.5):
                    return "barrier", None, trajectory
            if trajectory.exit_reason is not ExitReason.HORIZON:
                return "escaped", None, trajectory
            for orbit in orbits:
                dist = np.hypot(trajectory.s - orbit.s_star, trajectory.sigma)
                if np.min(dist) < ORBIT_TOL:
                    return "converged", orbit, trajectory
            current = trajectory.final
            elapsed += span
        return "horizon", None, trajectory

    def bounded_component(self, point: PhasePoint, escape_radius: Optional[float] = None) -> bool:
        """{V_eff ≤ E} 에서 점을 포함하는 연결 성분이 escape_radius (기본 0.75 S) 안에 갇혀 있는지"""
        escape_radius = 0.75 * self.profile.S if escape_radius is None else escape_radius
        S = self.profile.S
        grid = np.linspace(-S, S, 8001)
        allowed = self.veff(grid, point.mu) <= self.energy + SHELL_TOL
        j = int(np.clip(np.searchsorted(grid, point.s), 0, len(grid) - 1))
        if not allowed[j]:
            return True
        lo = j
        while lo > 0 and allowed[lo - 1]:
            lo -= 1
        hi = j
        while hi < len(grid) - 1 and allowed[hi + 1]:
            hi += 1
        return bool(abs(grid[lo]) < escape_radius and abs(grid[hi]) < escape_radius)

    def classify_point(self, point: PhasePoint, barrier_symbol: Optional[Callable] = None,
                       horizon: float = DEFAULT_HORIZON,
                       escape_radius: Optional[float] = None) -> PointClass:
        """
        점을 갇힘 / 흐름 밖 / 역방향 비갇힘 등으로 분류

        Args:
            point: 분류할 점
            barrier_symbol: w(s, σ) (1/2 를 넘는 곳을 지나면 역방향 비갇힘)
            horizon: 적분 한계 시간
            escape_radius: |s| 가 이를 넘으면 탈출로 봄 (기본 0.75 S)

        Returns:
            PointClass: 라벨, 궤도 식별자, 근거 궤적
        """
        escape_radius = 0.75 * self.profile.S if escape_radius is None else escape_radius
        p = float(self.hamiltonian(point.s, point.sigma, point.mu))
        if abs(p - self.energy) > SHELL_TOL:
            return PointClass(PointLabel.ELLIPTIC_OFF_SHELL, reason=f"|p-E|={abs(p - self.energy):.2e}")

        all_orbits = self.classify_orbits()
        for orbit in all_orbits:
            if orbit.continuum or orbit.stability is not Stability.HYPERBOLIC:
                continue
            delta = abs(abs(point.mu) - abs(orbit.mu))
            if 0.0 < delta < SEPARATRIX_TOL:
                return PointClass(PointLabel.UNDETERMINED_AT_HORIZON,
                                  reason=f"분리선 μ={orbit.mu:+.6f} 근처 (|Δμ|={delta:.1e})")
        orbits = self._matching_orbits(point.mu, all_orbits)

        outcome, orbit, back = self._scan(point, -1, horizon, escape_radius, barrier_symbol, orbits)
        forward_limit = None
        if orbits and outcome != "horizon":
            f_outcome, f_orbit, _ = self._scan(point, +1, horizon, escape_radius, None, orbits)
            if f_outcome == "converged":
                forward_limit = f_orbit.orbit_id

        witness = back.excerpt() if back is not None else {}
        if outcome == "barrier":
            return PointClass(PointLabel.BACKWARD_NONTRAPPED, None, forward_limit,
                              "역방향 궤적이 장벽 w > 1/2 을 지남", witness)
        if outcome == "escaped":
            return PointClass(PointLabel.BACKWARD_NONTRAPPED, None, forward_limit,
                              "역방향 궤적이 탈출 반경을 넘음", witness)
        if outcome == "converged":
            if forward_limit is not None:
                return PointClass(PointLabel.TRAPPED, orbit.orbit_id, forward_limit,
                                  "양방향 모두 궤도로 수렴", witness)
            return PointClass(PointLabel.FORWARD_FLOWOUT, orbit.orbit_id, None,
                              "역방향 궤적이 궤도로 수렴", witness)
        if self.bounded_component(point, escape_radius):
            return PointClass(PointLabel.UNDETERMINED_AT_HORIZON, None, None,
                              "허용 구간 {V_eff ≤ E} 가 유계, 궤도로 수렴하지 않음", witness)
        return PointClass(PointLabel.UNDETERMINED_AT_HORIZON, reason=f"시간 {horizon} 안에 판정 불가",
                          witness=witness)

    # ------------------------------------------------------------------ 탈출 시간
    def _refine(self, s, sigma, mu, step, inside_before: bool, inside_fn) -> float:
        """한 걸음 안에서 소속이 바뀌는 부분 시간을 이분법으로 찾음"""
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            ms, mp = self.rk4_step(np.array([s]), np.array([sigma]), mu, mid * step)
            if bool(inside_fn(ms[0], mp[0])) == inside_before:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi) * step

    def escape_times(self, point: PhasePoint, V1: RegionSpec, V0: RegionSpec, U: RegionSpec,
                     horizon: float = 100.0, orbits: Optional[Sequence[ClosedOrbit]] = None) -> EscapeTimes:
        """
        T_V1 = inf{t: γ(t) ∉ V1}, T_V0 = inf{t: γ(t) ∉ V0}, T_U = sup{t: γ(t) ∈ Ū}

        Args:
            point: Γ+ 위의 점
            V1, V0, U: 중첩 영역
            horizon: 양방향 적분 한계
            orbits: 역방향 적분을 멈출 궤도 (None 이면 μ 가 같은 궤도)

        Returns:
            EscapeTimes
        """
        orbits = self._matching_orbits(point.mu, self.classify_orbits()) if orbits is None else orbits
        stop = self.profile.S

        fwd = self.flow(point, horizon, stop_radius=stop)
        inside_u = U.contains(fwd.s, fwd.sigma, margin=-1e-12)
        if inside_u[-1] and fwd.exit_reason is ExitReason.HORIZON:
            raise HorizonExceeded(f"시간 {horizon} 안에 U 를 벗어나지 않습니다",
                                  invariant="trajectory leaves U", witness=point)

        # 역방향: 궤도 근방에 들어가거나 한계에 닿을 때까지
        back = self.flow(point, -horizon, stop_radius=stop)
        cut = len(back.t)
        for orbit in orbits:
            dist = np.hypot(back.s - orbit.s_star, back.sigma)
            hits = np.nonzero(dist < ORBIT_TOL)[0]
            if len(hits):
                cut = min(cut, int(hits[0]) + 1)
        t = np.concatenate([back.t[:cut][::-1], fwd.t[1:]])
        s = np.concatenate([back.s[:cut][::-1], fwd.s[1:]])
        p = np.concatenate([back.sigma[:cut][::-1], fwd.sigma[1:]])
        step = self.dt if fwd.t.size < 2 else float(fwd.t[1] - fwd.t[0])

        def first_exit(region: RegionSpec) -> float:
            inside = region.contains(s, p, margin=-1e-12)
            out = np.nonzero(~inside)[0]
            if not len(out):
                raise HorizonExceeded(f"{region.name} 를 벗어나지 않습니다", invariant="trajectory leaves region",
                                      witness=point)
            k = int(out[0])
            if k == 0:
                return float(t[0])
            frac = self._refine(s[k - 1], p[k - 1], point.mu, t[k] - t[k - 1], True,
                                lambda a, b: region.contains(a, b, margin=-1e-12))
            return float(t[k - 1] + frac)

        inside = U.contains(s, p, margin=-1e-12)
        idx = np.nonzero(inside)[0]
        if not len(idx):
            T_U = float(t[0])
        else:
            k = int(idx[-1])
            if k + 1 < len(t):
                frac = self._refine(s[k], p[k], point.mu, t[k + 1] - t[k], True,
                                    lambda a, b: U.contains(a, b, margin=-1e-12))
                T_U = float(t[k] + frac)
            else:
                T_U = float(t[k])
        times = EscapeTimes(first_exit(V1), first_exit(V0), T_U)
        if not times.ordered:
            lab_logger.log_warning("탈출 시간 순서가 어긋남", category=LogCategory.DYNAMICS,
                                   point=[point.s, point.sigma, point.mu], step=step,
                                   times=[times.T_V1, times.T_V0, times.T_U])
        return times

    # ------------------------------------------------------------------ 볼록성
    def check_convexity(self, region: Union[RegionSpec, Sequence[Tuple[float, float]]], mode: str = "convexity",
                        x_fn: Optional[Callable] = None, n_samples: int = 2001) -> ConvexityReport:
        """
        ṡ = 0 인 껍질 점에서 가속도 부호 조건 검사

        Args:
            region: 검사할 영역 (s 구간 목록이면 RegionSpec.s_band 로 감쌈)
            mode: "convexity" (x 의 임계점에서 ẍ < 0), "convinf" (sign(s)·s̈ > 0),
                  "convcompact" (sign(s)·s̈ < 0)
            x_fn: convexity 모드의 x(s) (기본: 감소 일차함수 x = -s)
            n_samples: 구간당 표본 수

        Returns:
            ConvexityReport
        """
        if mode not in ("convexity", "convinf", "convcompact"):
            raise InvalidParams(f"알 수 없는 볼록성 모드: {mode}", invariant="mode")
        if not isinstance(region, RegionSpec):
            region = RegionSpec.s_band("convexity", region)
        witnesses: List[Dict[str, float]] = []
        count = 0
        for lo, hi, _, _ in region.boxes:
            s = np.linspace(lo, hi, n_samples)[1:-1]
            # ṡ = 0 이므로 σ = 0 에서의 소속만 본다
            s = s[region.contains(s, np.zeros_like(s))]
            gap = self.energy - self.potential.V(s)
            s = s[gap > 0]
            if not s.size:
                continue
            mu = self.profile.a(s) * np.sqrt(self.energy - self.potential.V(s))
            s_ddot = -2.0 * self.veff_prime(s, mu)
            if mode == "convinf":
                value = np.sign(s) * s_ddot
                ok = value > 0
            elif mode == "convcompact":
                value = np.sign(s) * s_ddot
                ok = value < 0
            else:
                if x_fn is None:
                    x_prime = -np.ones_like(s)
                else:
                    x_prime = (np.asarray(x_fn(s + 1e-5)) - np.asarray(x_fn(s - 1e-5))) / 2e-5
                value = x_prime * s_ddot
                ok = value < 0
            count += int(s.size)
            for j in np.nonzero(~ok)[0][:20]:
                witnesses.append({"s": float(s[j]), "mu": float(mu[j]), "value": float(value[j])})
        report = ConvexityReport(holds=not witnesses, vacuous=(count == 0), mode=mode,
                                 n_samples=count, witnesses=witnesses)
        if report.vacuous:
            lab_logger.log_warning(f"볼록성 검사 표본이 없습니다 ({mode})", category=LogCategory.DYNAMICS)
        return report
