# escape.py - 쌍곡 궤도의 흐름 밖 집합 Γ+ 위 탈출 함수 q 구성, 검증, 교환자 분해
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dynamics import (ReducedFlow, PhasePoint, ClosedOrbit, Stability, RegionSpec, RegionRole,
                      EscapeRegions, EscapeTimes)
from errors import ConstructionFailed, PreconditionError, PartitionInfeasible, InvalidParams
from log_manager import lab_logger, LogCategory
from utils import psi, smooth_step, ramp, ramp_prime, smooth_window, smooth_window_prime, log_message

F_LO, F_HI = -1.45, -0.55
SCAN_DT = 5e-3
EPS_START = 0.49
CHI_Q_MARGIN = 0.1
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def outer_profile(t) -> np.ndarray:
    """
    f(t) = ∫ smooth_step((τ - F_LO)/(F_HI - F_LO)) dτ

    t ≤ -1.45 에서 0, t ≥ -0.55 에서 정확히 t + 1, 그 사이는 가우스-르장드르 적분.
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    upper = t >= F_HI
    out[upper] = t[upper] + 1.0
    mid = (t > F_LO) & ~upper
    if np.any(mid):
        x = (t[mid] - F_LO) / (F_HI - F_LO)
        nodes = 0.5 * x[:, None] * (_GL_X[None, :] + 1.0)
        integral = 0.5 * x * np.sum(_GL_W[None, :] * smooth_step(nodes), axis=1)
        out[mid] = (F_HI - F_LO) * integral
    return out


def outer_profile_prime(t) -> np.ndarray:
    return smooth_step((np.asarray(t, dtype=float) - F_LO) / (F_HI - F_LO))


@dataclass
class TubeSeed:
    """
    Γ+ 위 씨앗 ρ 하나의 관 자료

    관 좌표 (t, y): w = Φ_t(ρ + y·n), n 은 ρ 에서 H_p 에 수직인 단면 방향.
    """
    rho: PhasePoint
    h_hat: np.ndarray
    n_hat: np.ndarray
    r: float
    r_prime: float
    r_plateau: float
    times: EscapeTimes
    eps: float
    floor: float
    t_lo: float
    t_hi: float
    branch: int

    @property
    def g1_start(self) -> float:
        return self.times.T_V1 - 0.25

    def chi(self, t) -> np.ndarray:
        """χ_ρ(t): T_V1 - 1/4 이전 0, [T_V1, T_V0] 에서 floor 이상, T_V0 + ε 이후 -2"""
        t = np.asarray(t, dtype=float)
        g1 = ramp(t, self.g1_start, self.times.T_V0)
        g2 = ramp(t, self.times.T_V0, self.times.T_V0 + self.eps)
        return self.floor * g1 + (-2.0 - self.floor) * g2

    def chi_prime(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        g1 = ramp_prime(t, self.g1_start, self.times.T_V0)
        g2 = ramp_prime(t, self.times.T_V0, self.times.T_V0 + self.eps)
        return self.floor * g1 + (-2.0 - self.floor) * g2

    def phi(self, y) -> np.ndarray:
        """|y| ≤ r_plateau 에서 1, |y| ≥ r' 에서 0 (ψ(r'^2 - y^2) 모양)"""
        y = np.asarray(y, dtype=float)
        return smooth_step((self.r_prime ** 2 - y ** 2) / (self.r_prime ** 2 - self.r_plateau ** 2))

    def section_point(self, y) -> Tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        return self.rho.s + y * self.n_hat[0], self.rho.sigma + y * self.n_hat[1]

    def to_dict(self) -> Dict:
        return {
            "rho": [self.rho.s, self.rho.sigma, self.rho.mu], "branch": self.branch,
            "r": self.r, "r_prime": self.r_prime, "r_plateau": self.r_plateau,
            "T_V1": self.times.T_V1, "T_V0": self.times.T_V0, "T_U": self.times.T_U,
            "eps": self.eps, "floor": self.floor, "t_lo": self.t_lo, "t_hi": self.t_hi,
        }


@dataclass
class EscapeValues:
    q: np.ndarray
    Hq: np.ndarray
    qtilde: np.ndarray
    chi_q: np.ndarray
    plateau_depth: np.ndarray
    tube_depth: np.ndarray


@dataclass
class EscapeFunction:
    """
    축약 위상 평면 위의 탈출 함수 q = χ_q · f(q̃), q̃ = Σ_k φ_k(y) χ_k(t)

    값은 관 좌표를 정확히 역산해서 계산하고 (evaluate), 격자 값은 실험/덤프용이다.
    """
    flow: ReducedFlow
    orbits: List[ClosedOrbit]
    regions: EscapeRegions
    mu: float
    seeds: List[TubeSeed]
    branches: List[np.ndarray]
    gamma_plus_trivial: bool = False
    constant_value: Optional[float] = None
    grid_s: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    grid_sigma: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    values: Optional[EscapeValues] = None

    @property
    def N(self) -> int:
        return len(self.seeds)

    @property
    def U(self) -> Optional[RegionSpec]:
        return None if self.constant_value is not None else self.regions.U

    @classmethod
    def constant(cls, template: "EscapeFunction", value: float = 1.0) -> "EscapeFunction":
        """q ≡ value (U 조건은 공허), 표본은 template 에서 가져옴"""
        q = cls(template.flow, template.orbits, template.regions, template.mu, list(template.seeds),
                template.branches, template.gamma_plus_trivial, float(value))
        q.attach_grid(template.grid_s, template.grid_sigma)
        return q

    # ------------------------------------------------------------------ 평가
    def _chi_q(self, s, p):
        s_lo, s_hi, p_lo, p_hi = self.regions.U.bounding_box()
        m = CHI_Q_MARGIN * min(s_hi - s_lo, p_hi - p_lo) / 2.0
        ws = smooth_window(s, (s_lo + m, s_hi - m), (s_lo, s_hi))
        wp = smooth_window(p, (p_lo + m, p_hi - m), (p_lo, p_hi))
        dws = smooth_window_prime(s, (s_lo + m, s_hi - m), (s_lo, s_hi))
        dwp = smooth_window_prime(p, (p_lo + m, p_hi - m), (p_lo, p_hi))
        depth = np.minimum.reduce([s - (s_lo + m), (s_hi - m) - s, p - (p_lo + m), (p_hi - m) - p])
        return ws * wp, dws * wp, ws * dwp, depth

    def _advance(self, s, p, T: float):
        if T == 0:
            return s, p
        n = max(1, int(math.ceil(abs(T) / SCAN_DT - 1e-9)))
        step = T / n
        for _ in range(n):
            s, p = self.flow.rk4_step(s, p, self.mu, step)
        return s, p

    def _section_coordinate(self, seed: TubeSeed, s, p):
        ds, dp = s - seed.rho.s, p - seed.rho.sigma
        return ds * seed.h_hat[0] + dp * seed.h_hat[1], ds * seed.n_hat[0] + dp * seed.n_hat[1]

    def _invert(self, seed: TubeSeed, s: np.ndarray, p: np.ndarray):
        """
        관 좌표 역산: w 를 τ ∈ [t_lo, t_hi] 만큼 되돌려 단면 (|y| < r) 을 지나는 τ 를 찾음

        Returns:
            (τ, y), 관 밖이면 nan
        """
        span = seed.t_hi - seed.t_lo
        n = max(1, int(math.ceil(span / SCAN_DT - 1e-9)))
        d = span / n
        vs, vp = self._advance(s.copy(), p.copy(), -seed.t_lo)
        L_prev, _ = self._section_coordinate(seed, vs, vp)
        tau = np.full(s.shape, np.nan)
        y = np.full(s.shape, np.nan)
        for i in range(n):
            ns, np_ = self.flow.rk4_step(vs, vp, self.mu, -d)
            L_new, _ = self._section_coordinate(seed, ns, np_)
            cross = (L_prev > 0) & (L_new <= 0)
            if np.any(cross):
                idx = np.nonzero(cross)[0]
                lo = np.zeros(idx.size)
                hi = np.ones(idx.size)
                for _ in range(40):
                    mid = 0.5 * (lo + hi)
                    ms, mp = self.flow.rk4_step(vs[idx], vp[idx], self.mu, -mid * d)
                    L_mid, _ = self._section_coordinate(seed, ms, mp)
                    positive = L_mid > 0
                    lo = np.where(positive, mid, lo)
                    hi = np.where(positive, hi, mid)
                frac = 0.5 * (lo + hi)
                cs, cp = self.flow.rk4_step(vs[idx], vp[idx], self.mu, -frac * d)
                _, yy = self._section_coordinate(seed, cs, cp)
                tt = seed.t_lo + (i + frac) * d
                current = tau[idx]
                better = (np.abs(yy) < seed.r) & (np.isnan(current) | (np.abs(tt) < np.abs(current)))
                tau[idx[better]] = tt[better]
                y[idx[better]] = yy[better]
            vs, vp, L_prev = ns, np_, L_new
        return tau, y

    def evaluate(self, s, sigma) -> EscapeValues:
        """
        임의의 점에서 q, H_p q, q̃ 계산

        Args:
            s, sigma: 같은 모양의 좌표 배열

        Returns:
            EscapeValues (입력과 같은 모양)
        """
        s = np.asarray(s, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        shape = np.broadcast(s, sigma).shape
        fs = np.broadcast_to(s, shape).ravel().copy()
        fp = np.broadcast_to(sigma, shape).ravel().copy()

        if self.constant_value is not None:
            full = np.full(fs.shape, self.constant_value)
            zeros = np.zeros(fs.shape)
            inf = np.full(fs.shape, np.inf)
            vals = EscapeValues(full, zeros, zeros.copy(), np.ones(fs.shape), inf, -inf)
            return _reshape(vals, shape)

        qt = np.zeros(fs.shape)
        Hqt = np.zeros(fs.shape)
        tube_depth = np.full(fs.shape, -np.inf)
        for seed in self.seeds:
            tau, y = self._invert(seed, fs, fp)
            ok = ~np.isnan(tau)
            if not np.any(ok):
                continue
            phi = seed.phi(y[ok])
            qt[ok] += phi * seed.chi(tau[ok])
            Hqt[ok] += phi * seed.chi_prime(tau[ok])
            tube_depth[ok] = np.maximum(tube_depth[ok], seed.r_plateau - np.abs(y[ok]))

        cq, dcq_s, dcq_p, plateau_depth = self._chi_q(fs, fp)
        vs, vp = self.flow.vector_field(fs, fp, self.mu)
        Hcq = dcq_s * vs + dcq_p * vp
        fq = outer_profile(qt)
        q = cq * fq
        Hq = cq * outer_profile_prime(qt) * Hqt + fq * Hcq
        return _reshape(EscapeValues(q, Hq, qt, cq, plateau_depth, tube_depth), shape)

    def attach_grid(self, grid_s: np.ndarray, grid_sigma: np.ndarray):
        """평가 격자에서 값을 미리 계산해 둠"""
        self.grid_s, self.grid_sigma = grid_s, grid_sigma
        self.values = self.evaluate(grid_s, grid_sigma) if grid_s.size else None

    def grid_rows(self) -> List[Dict[str, float]]:
        if self.values is None:
            return []
        return [{"s": float(a), "sigma": float(b), "q": float(c), "Hp_q": float(d)}
                for a, b, c, d in zip(self.grid_s.ravel(), self.grid_sigma.ravel(),
                                      self.values.q.ravel(), self.values.Hq.ravel())]

    def annulus_samples(self) -> Tuple[np.ndarray, np.ndarray]:
        """Γ+ 표본 중 Ū0 \\ U1 에 있는 점"""
        pts = [b for b in self.branches if b.size]
        if not pts:
            return np.zeros(0), np.zeros(0)
        allp = np.concatenate(pts, axis=0)
        s, p = allp[:, 0], allp[:, 1]
        keep = (self.regions.U0.depth(s, p) >= 0) & (self.regions.U1.depth(s, p) <= 0)
        return s[keep], p[keep]

    def gamma_plus_samples(self, inside_u: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        pts = [b for b in self.branches if b.size]
        if not pts:
            return np.zeros(0), np.zeros(0)
        allp = np.concatenate(pts, axis=0)
        s, p = allp[:, 0], allp[:, 1]
        if inside_u:
            keep = self.regions.U.depth(s, p) > 0
            s, p = s[keep], p[keep]
        return s, p


def _reshape(vals: EscapeValues, shape) -> EscapeValues:
    return EscapeValues(*(np.reshape(getattr(vals, k), shape) for k in
                          ("q", "Hq", "qtilde", "chi_q", "plateau_depth", "tube_depth")))


def nested_regions(orbit: ClosedOrbit, gamma: float = 0.05, V1: float = 0.3, U1: float = 0.5,
                   U0: float = 1.0, V0: float = 1.3, U: Tuple[float, float] = (2.0, 1.5)) -> EscapeRegions:
    """
    궤도 (s*, 0) 를 중심으로 한 표준 중첩 상자

    Args:
        orbit: 중심 궤도
        gamma, V1, U1, U0, V0: 정사각형 반폭
        U: (s 반폭, σ 반폭)

    Returns:
        EscapeRegions
    """
    c = (orbit.s_star, 0.0)
    window = (orbit.mu - 1e-9, orbit.mu + 1e-9)
    box = RegionSpec.centered_box
    return EscapeRegions(
        gamma=box("Γ", RegionRole.GAMMA, c, gamma, gamma, window),
        U1=box("U1", RegionRole.U1, c, U1, U1, window),
        U0=box("U0", RegionRole.U0, c, U0, U0, window),
        U=box("U", RegionRole.U, c, U[0], U[1], window),
        V1=box("V1", RegionRole.V1, c, V1, V1, window),
        V0=box("V0", RegionRole.V0, c, V0, V0, window),
    )


def iterate_regions(regions: EscapeRegions, q: "EscapeFunction") -> EscapeRegions:
    """
    다음 단계 중첩 영역: U1' = 이전 Γ-상자 (q ≡ 1 내부), U0' ⊇ supp q

    V1' = 0.6 U1', Γ' = 0.3 V1', U0' = 1.05 U, V0' = 1.15 U, U' = 1.5 U
    """
    center = (q.orbits[0].s_star, 0.0)
    U1p = RegionSpec("U1'", RegionRole.U1, regions.gamma.boxes, None, regions.gamma.mu_window)
    V1p = U1p.scaled(0.6, center, "V1'", RegionRole.V1)
    gammap = V1p.scaled(0.3, center, "Γ'", RegionRole.GAMMA)
    return EscapeRegions(
        gamma=gammap,
        U1=U1p,
        U0=regions.U.scaled(1.05, center, "U0'", RegionRole.U0),
        U=regions.U.scaled(1.5, center, "U'", RegionRole.U),
        V1=V1p,
        V0=regions.U.scaled(1.15, center, "V0'", RegionRole.V0),
    )


def _branches(flow: ReducedFlow, orbit: ClosedOrbit, U: RegionSpec) -> List[np.ndarray]:
    """쌍곡 궤도에서 나가는 두 갈래 Γ+ 를 Ū 밖까지 흘려 표본화"""
    branches = []
    for sign in (1.0, -1.0):
        s_start = orbit.s_star + sign * 1e-4
        start = flow.on_shell(s_start, orbit.mu, sign)
        traj = flow.flow(start, 40.0, stop_radius=flow.profile.S)
        inside = U.depth(traj.s, traj.sigma) >= 0
        out = np.nonzero(~inside)[0]
        stop = int(out[0]) + 1 if len(out) else len(traj.t)
        branches.append(np.column_stack([traj.s[:stop], traj.sigma[:stop], traj.t[:stop]]))
    return branches


def _make_seed(flow: ReducedFlow, point: PhasePoint, regions: EscapeRegions, r: float,
               branch: int, orbit: ClosedOrbit) -> TubeSeed:
    vs, vp = flow.vector_field(point.s, point.sigma, point.mu)
    h = np.array([float(vs), float(vp)])
    h_hat = h / np.linalg.norm(h)
    n_hat = np.array([-h_hat[1], h_hat[0]])
    times = flow.escape_times(point, regions.V1, regions.V0, regions.U, horizon=30.0, orbits=[orbit])
    return TubeSeed(point, h_hat, n_hat, r, 0.8 * r, 0.5 * r, times, EPS_START, -0.25,
                    times.T_V1 - 0.5, times.T_U + 1.0, branch)


def _tube_points(flow: ReducedFlow, seed: TubeSeed, t_from: float, t_to: float,
                 n_y: int = 9, y_max: Optional[float] = None):
    """관 단면을 t_from 에서 t_to 까지 흘린 점들 (각 시간 층마다)"""
    y_max = seed.r_prime if y_max is None else y_max
    ys = np.linspace(-y_max, y_max, n_y)
    s0, p0 = seed.section_point(ys)
    layers = []
    for T in (t_from, t_to):
        if T == 0:
            continue
        n = max(1, int(math.ceil(abs(T) / flow.dt)))
        every = max(1, n // 200)
        _, _, _, _, hist = flow.flow_many(s0, p0, seed.rho.mu, T, record_every=every)
        layers.extend(hist)
    layers.append((0.0, s0, p0))
    return layers


def _choose_eps(q: EscapeFunction, seed: TubeSeed) -> float:
    """관이 T_V0 + ε 까지 χ_q 평탄부 안에 머무는 가장 큰 ε ≤ 0.49"""
    flow = q.flow
    eps = EPS_START
    while eps > 1e-3:
        T_end = seed.times.T_V0 + eps
        layers = _tube_points(flow, seed, seed.t_lo, T_end)
        ok = True
        for t, s, p in layers:
            if t < seed.t_lo - 1e-12 or t > T_end + 1e-12:
                continue
            cq, _, _, depth = q._chi_q(s, p)
            if np.any(depth < 0.0) or np.any(cq < 1.0):
                ok = False
                break
        if ok:
            return eps
        eps *= 0.8
    raise ConstructionFailed(f"ε 를 고를 수 없습니다 (씨앗 s={seed.rho.s:.4f})",
                             invariant="tube inside χ_q plateau", witness=seed.to_dict())


def _ensure_tube_exits(q: EscapeFunction, seed: TubeSeed) -> float:
    """t_hi 에서 관 전체가 U 밖에 있도록 t_hi 를 늘림"""
    U = q.regions.U
    t_hi = seed.t_hi
    for _ in range(8):
        ys = np.linspace(-seed.r, seed.r, 9)
        s0, p0 = seed.section_point(ys)
        s1, p1, _, _, _ = q.flow.flow_many(s0, p0, seed.rho.mu, t_hi)
        if np.all(U.depth(s1, p1) < 0):
            return t_hi
        t_hi += 0.5
    raise ConstructionFailed("관이 t_hi 안에 U 를 벗어나지 않습니다", invariant="tube leaves U",
                             witness=seed.to_dict())


def build_escape_function(flow: ReducedFlow, orbits: Sequence[ClosedOrbit], regions: EscapeRegions,
                          seed_radius: Optional[float] = None, floor: Optional[float] = None,
                          grid_n: int = 81) -> EscapeFunction:
    """
    탈출 함수 구성

    Args:
        flow: 축약 흐름 (에너지 껍질 포함)
        orbits: Γ 를 이루는 궤도들 (같은 μ)
        regions: 중첩 영역
        seed_radius: 단면 반경 r (기본: U1 반폭의 0.08 배)
        floor: χ_ρ 의 [T_V1, T_V0] 하한 (기본 -1/(2N))
        grid_n: 평가 격자 한 변의 점 수

    Returns:
        EscapeFunction (검증은 verify_escape_function)
    """
    orbits = list(orbits)
    if not orbits:
        raise PreconditionError("Γ 궤도가 비어 있습니다", invariant="Γ nonempty")
    mus = {round(o.mu, 12) for o in orbits}
    if len(mus) != 1:
        raise PreconditionError("하나의 μ 창에는 같은 μ 의 궤도만 넣을 수 있습니다",
                                invariant="single μ-window", witness=sorted(mus))
    if len(regions.U.boxes) != 1 or regions.U.level_fn is not None:
        raise PreconditionError("U 는 상자 하나여야 합니다", invariant="U single box")
    regions.validate(orbits)
    mu = orbits[0].mu

    u1 = regions.U1.bounding_box()
    r = seed_radius if seed_radius is not None else 0.08 * min(u1[1] - u1[0], u1[3] - u1[2]) / 2.0
    if r <= 0:
        raise InvalidParams(f"seed_radius 는 양수여야 합니다: {r}", invariant="seed_radius > 0")

    q = EscapeFunction(flow, orbits, regions, mu, [], [])
    hyperbolic = [o for o in orbits if o.stability is Stability.HYPERBOLIC]
    if not hyperbolic:
        q.gamma_plus_trivial = True
        lab_logger.log_escape("타원 Γ: Γ+ 가 Γ 자신뿐입니다", mu=mu)

    # 갈래 표본과 욕심쟁이 씨앗 선택
    for orbit in hyperbolic:
        for b_index, branch in enumerate(_branches(flow, orbit, regions.U)):
            q.branches.append(branch[:, :2])
            s, p = branch[:, 0], branch[:, 1]
            need = (regions.U1.depth(s, p) <= 0) & (regions.U.depth(s, p) >= 0)
            covered = np.zeros(s.shape, dtype=bool)
            for j in np.nonzero(need)[0]:
                if covered[j]:
                    continue
                seed = _make_seed(flow, PhasePoint(float(s[j]), float(p[j]), mu), regions, r,
                                  len(q.branches) - 1, orbit)
                q.seeds.append(seed)
                idx = np.nonzero(need & ~covered)[0]
                tau, y = q._invert(seed, s[idx], p[idx])
                covered[idx] |= ~np.isnan(tau) & (np.abs(y) < seed.r_prime)
            if np.any(need & ~covered):
                k = int(np.nonzero(need & ~covered)[0][0])
                raise ConstructionFailed("Γ+ 표본이 어느 관에도 덮이지 않았습니다",
                                         invariant="seed cover", witness=(float(s[k]), float(p[k])))

    N = len(q.seeds)
    if N:
        chosen_floor = -1.0 / (2.0 * N) if floor is None else float(floor)
        for seed in q.seeds:
            seed.floor = chosen_floor
            seed.t_hi = _ensure_tube_exits(q, seed)
            seed.eps = _choose_eps(q, seed)

    s_lo, s_hi, p_lo, p_hi = regions.U.bounding_box()
    pad_s, pad_p = 0.1 * (s_hi - s_lo), 0.1 * (p_hi - p_lo)
    gs, gp = np.meshgrid(np.linspace(s_lo - pad_s, s_hi + pad_s, grid_n),
                         np.linspace(p_lo - pad_p, p_hi + pad_p, grid_n), indexing="ij")
    q.attach_grid(gs, gp)
    log_message(f"✅ 탈출 함수 구성 완료: 씨앗 {N}개, μ={mu:+.4f}")
    lab_logger.log_escape("탈출 함수 구성", mu=mu, seeds=[sd.to_dict() for sd in q.seeds])
    return q


# ---------------------------------------------------------------------- 검증
@dataclass
class ClauseResult:
    passed: bool
    value: float
    detail: str = ""


@dataclass
class EscapeReport:
    clauses: Dict[str, ClauseResult]
    c_min: float
    n_samples: int
    gamma_plus_trivial: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    @property
    def failures(self) -> List[str]:
        return [name for name, c in self.clauses.items() if not c.passed]

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed, "c_min": self.c_min, "n_samples": self.n_samples,
            "gamma_plus_trivial": self.gamma_plus_trivial,
            "clauses": {k: {"passed": v.passed, "value": v.value, "detail": v.detail}
                        for k, v in self.clauses.items()},
        }


def sample_tube(q: EscapeFunction, n_samples: int, seed: int = 0, plateau_only: bool = True):
    """
    관 위의 무작위 점 (y 는 평탄부 |y| ≤ r_plateau 에서)

    Returns:
        (s, σ, 관 시간, 씨앗 번호)
    """
    if not q.seeds:
        return np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
    rng = np.random.default_rng(seed)
    out_s, out_p, out_t, out_k = [], [], [], []
    per_seed = int(math.ceil(n_samples / len(q.seeds)))
    for k, sd in enumerate(q.seeds):
        y_max = sd.r_plateau if plateau_only else sd.r_prime
        n_y = 40
        ys = rng.uniform(-y_max, y_max, n_y)
        s0, p0 = sd.section_point(ys)
        layers = [(0.0, s0, p0)]
        for T in (sd.t_lo, sd.t_hi):
            _, _, _, _, hist = q.flow.flow_many(s0, p0, sd.rho.mu, T, record_every=1)
            layers.extend(hist)
        picks_layer = rng.integers(0, len(layers), per_seed)
        picks_y = rng.integers(0, n_y, per_seed)
        for li, yi in zip(picks_layer, picks_y):
            t, s, p = layers[li]
            out_s.append(s[yi])
            out_p.append(p[yi])
            out_t.append(t)
            out_k.append(k)
    return (np.array(out_s[:n_samples]), np.array(out_p[:n_samples]),
            np.array(out_t[:n_samples]), np.array(out_k[:n_samples]))


def _gradient_norm(q: EscapeFunction, s, p, delta: float):
    offsets = [(delta, 0.0), (-delta, 0.0), (0.0, delta), (0.0, -delta)]
    S = np.concatenate([s + a for a, _ in offsets])
    P = np.concatenate([p + b for _, b in offsets])
    vals = q.evaluate(S, P)
    n = s.size
    sq = np.sqrt(np.maximum(vals.q, 0.0)).reshape(4, n)
    sh = np.sqrt(np.maximum(-vals.Hq, 0.0)).reshape(4, n)
    g_q = np.hypot((sq[0] - sq[1]) / (2 * delta), (sq[2] - sq[3]) / (2 * delta))
    g_h = np.hypot((sh[0] - sh[1]) / (2 * delta), (sh[2] - sh[3]) / (2 * delta))
    return g_q, g_h


def verify_escape_function(q: EscapeFunction, n_samples: int = 1000, seed: int = 0,
                           delta: float = 1e-4) -> EscapeReport:
    """
    구성된 탈출 함수의 모든 성질을 표본으로 검사

    Args:
        q: 탈출 함수
        n_samples: 관 표본 수 (1000 이상)
        seed: 표본 시드
        delta: 기울기 감사 차분 간격

    Returns:
        EscapeReport (실패는 예외가 아니라 항목으로 남음)
    """
    if n_samples < 1000:
        raise InvalidParams(f"n_samples 는 1000 이상이어야 합니다: {n_samples}", invariant="n_samples ≥ 1000")
    clauses: Dict[str, ClauseResult] = {}

    # 관 위 H_p q ≤ 0
    ts, tp, tt, tk = sample_tube(q, n_samples, seed)
    if ts.size:
        tv = q.evaluate(ts, tp)
        worst = float(np.max(tv.Hq))
        clauses["tube_nonpositive"] = ClauseResult(worst <= 1e-10, worst, "max H_p q on Γ+ tube")
    else:
        tv = None
        clauses["tube_nonpositive"] = ClauseResult(True, 0.0, "관 없음 (공허)")

    # 고리 Γ+^{Ū0} \ U1 에서의 엄격한 감소와 q̃ 하한
    a_s, a_p = q.annulus_samples()
    if a_s.size:
        av = q.evaluate(a_s, a_p)
        c_min = float(np.min(-av.Hq))
        clauses["annulus_strict"] = ClauseResult(c_min > 0.0, c_min, "min -H_p q on annulus")
        floor_val = float(np.min(av.qtilde))
        clauses["floor"] = ClauseResult(floor_val >= -0.5, floor_val, "min q̃ on annulus")
    else:
        c_min = float("inf") if q.gamma_plus_trivial else 0.0
        clauses["annulus_strict"] = ClauseResult(q.gamma_plus_trivial and q.constant_value is None,
                                                 c_min, "고리 표본 없음")
        clauses["floor"] = ClauseResult(True, 0.0, "고리 표본 없음")

    # 격자: Γ 근방, U 밖, 값 범위
    gv = q.values if q.values is not None else q.evaluate(q.grid_s, q.grid_sigma)
    gs, gp = q.grid_s, q.grid_sigma
    in_gamma = q.regions.gamma.depth(gs, gp) >= 0
    gamma_dev = float(np.max(np.abs(gv.q[in_gamma] - 1.0))) if np.any(in_gamma) else 0.0
    clauses["gamma_plateau"] = ClauseResult(gamma_dev <= 1e-12, gamma_dev, "sup |q - 1| on Γ-box")
    if q.U is not None:
        outside = q.U.depth(gs, gp) <= 0
        out_val = float(np.max(np.abs(gv.q[outside]))) if np.any(outside) else 0.0
        clauses["outside_U"] = ClauseResult(out_val == 0.0, out_val, "sup |q| outside U")
    else:
        clauses["outside_U"] = ClauseResult(True, 0.0, "U 없음 (공허)")
    q_min, q_max = float(np.min(gv.q)), float(np.max(gv.q))
    clauses["range"] = ClauseResult(q_min >= 0.0 and q_max <= 1.0 + 1e-12, q_max, "0 ≤ q ≤ 1")

    # χ_ρ 와 f 의 모양
    shape_ok, shape_detail = True, ""
    t_grid = np.linspace(-3.0, 3.0, 601)
    f_vals = outer_profile(t_grid)
    if np.any(np.diff(f_vals) < -1e-14) or np.any(f_vals[t_grid <= -2.0] != 0.0) \
            or np.max(np.abs(f_vals[t_grid >= -0.5] - (t_grid[t_grid >= -0.5] + 1.0))) > 1e-12:
        shape_ok, shape_detail = False, "f 조건 위반"
    for sd in q.seeds:
        tt_ = np.linspace(sd.t_lo - 1.0, sd.t_hi, 2001)
        chi = sd.chi(tt_)
        window = (tt_ >= sd.times.T_V1) & (tt_ <= sd.times.T_V0)
        if (np.any(np.diff(chi) > 1e-14) or np.any(chi[tt_ <= sd.times.T_V1 - 0.5] != 0.0)
                or np.any(chi[window] < sd.floor - 1e-14)
                or np.any(np.abs(chi[tt_ >= sd.times.T_V0 + sd.eps] + 2.0) > 1e-12)
                or not (0.0 < sd.eps < 0.5)):
            shape_ok, shape_detail = False, f"χ_ρ 조건 위반 (씨앗 s={sd.rho.s:.4f})"
    clauses["profiles"] = ClauseResult(shape_ok, 0.0, shape_detail)

    # √q, √(-H_p q) 기울기 감사
    if ts.size:
        sub = np.arange(min(200, ts.size))
        gq1, gh1 = _gradient_norm(q, ts[sub], tp[sub], delta)
        gq2, gh2 = _gradient_norm(q, ts[sub], tp[sub], delta / 4.0)
        for name, g1, g2 in (("sqrt_q_smooth", gq1, gq2), ("sqrt_minus_Hq_smooth", gh1, gh2)):
            m1, m2 = float(np.max(g1)), float(np.max(g2))
            ok = m2 <= 1.5 * m1 + 1.0 and m2 <= 1e6
            clauses[name] = ClauseResult(ok, m2, f"max |∇| at δ={m1:.3e}, δ/4={m2:.3e}")
    else:
        clauses["sqrt_q_smooth"] = ClauseResult(True, 0.0, "관 없음")
        clauses["sqrt_minus_Hq_smooth"] = ClauseResult(True, 0.0, "관 없음")

    report = EscapeReport(clauses, c_min, int(ts.size), q.gamma_plus_trivial)
    if report.passed:
        log_message(f"✅ 탈출 함수 검증 통과 (c_min={c_min:.3e})")
    else:
        log_message(f"❌ 탈출 함수 검증 실패: {', '.join(report.failures)}")
    lab_logger.log_audit(LogCategory.ESCAPE, "탈출 함수 검증", **report.to_dict())
    return report


# ---------------------------------------------------------------------- 교환자 분해
@dataclass
class CommutatorDecomposition:
    """H_p q^2 = -b^2 + e 를 만드는 분할 φ+^2 + φ-^2 = 1 과 기호 b, e (격자 위)"""
    phi_plus_sq: np.ndarray
    phi_minus_sq: np.ndarray
    b: np.ndarray
    e: np.ndarray
    Hq2: np.ndarray
    residual: float

    @property
    def passed(self) -> bool:
        return self.residual <= 1e-10


def commutator_decomposition(q: EscapeFunction, U_minus: Optional[RegionSpec] = None,
                             U_plus: Optional[RegionSpec] = None) -> CommutatorDecomposition:
    """
    b = φ- √(-H_p q^2), e = φ+^2 H_p q^2

    Args:
        q: 탈출 함수 (격자 값 사용)
        U_minus, U_plus: 사용자 영역 (None 이면 χ_q 평탄부 ∪ 관 평탄부 로 정의)

    Returns:
        CommutatorDecomposition
    """
    gv = q.values if q.values is not None else q.evaluate(q.grid_s, q.grid_sigma)
    gs, gp = q.grid_s, q.grid_sigma
    Hq2 = 2.0 * gv.q * gv.Hq
    gamma_s, gamma_p = q.gamma_plus_samples()

    if U_minus is None and U_plus is None:
        u_minus = np.maximum(gv.plateau_depth, gv.tube_depth)
        widths = [sd.r_plateau for sd in q.seeds]
        delta = 0.5 * min(widths) if widths else 1e-2
        phi_minus_sq = smooth_step(u_minus / delta)
        phi_plus_sq = 1.0 - phi_minus_sq
        if gamma_s.size:
            gvals = q.evaluate(gamma_s, gamma_p)
            gu = np.maximum(gvals.plateau_depth, gvals.tube_depth)
            bad = (gu < delta) & (gvals.q > 0)
            if np.any(bad):
                k = int(np.nonzero(bad)[0][0])
                raise PreconditionError("Γ+ 표본이 U+ 의 닫힘에 닿습니다", invariant="Ū+ ∩ Γ+ = ∅",
                                        witness=(float(gamma_s[k]), float(gamma_p[k])))
    else:
        if U_minus is None or U_plus is None:
            raise PreconditionError("U- 와 U+ 를 함께 지정해야 합니다", invariant="U± pair")
        if gamma_s.size and np.any(U_plus.depth(gamma_s, gamma_p) >= 0):
            k = int(np.nonzero(U_plus.depth(gamma_s, gamma_p) >= 0)[0][0])
            raise PreconditionError("U+ 가 Γ+ 표본과 겹칩니다", invariant="Ū+ ∩ Γ+ = ∅",
                                    witness=(float(gamma_s[k]), float(gamma_p[k])))
        g_minus = psi(U_minus.depth(gs, gp))
        g_plus = psi(U_plus.depth(gs, gp))
        total = g_minus + g_plus
        support = gv.q > 0
        if np.any(support & (total <= 0)):
            k = tuple(np.argwhere(support & (total <= 0))[0])
            raise PartitionInfeasible("U+ ∪ U- 가 supp q 를 덮지 못합니다", invariant="U+ ∪ U- ⊇ supp q",
                                      witness=(float(gs[k]), float(gp[k])))
        safe = np.where(total > 0, total, 1.0)
        phi_minus_sq = np.where(total > 0, g_minus / safe, 0.0)
        phi_plus_sq = 1.0 - phi_minus_sq

    if np.any((phi_minus_sq > 0) & (-Hq2 < -1e-12)):
        k = tuple(np.argwhere((phi_minus_sq > 0) & (-Hq2 < -1e-12))[0])
        raise PreconditionError("U- 안에서 H_p q > 0 인 점이 있습니다", invariant="H_p q ≤ 0 on U-",
                                witness=(float(gs[k]), float(gp[k])))

    b = np.sqrt(phi_minus_sq) * np.sqrt(np.maximum(-Hq2, 0.0))
    e = phi_plus_sq * Hq2
    residual = float(np.max(np.abs(Hq2 - (-b ** 2 + e)))) if Hq2.size else 0.0
    decomposition = CommutatorDecomposition(phi_plus_sq, phi_minus_sq, b, e, Hq2, residual)
    lab_logger.log_escape("교환자 분해", residual=residual)
    return decomposition
