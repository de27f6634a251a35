# resolvent_lab.py - 각운동 모드별 절단 레졸벤트 노름 ‖A R_h(λ) B‖, h-스윕, 척도 적합
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigs

from config import config
from dynamics import ReducedFlow, PhasePoint, PointLabel, Stability, RegionSpec
from errors import (LabError, InvalidParams, DegenerateDesign, UnknownPreset, HypothesisAuditFailed,
                    ConstructionFailed)
from geometry import Profile, Potential, make_profile, make_potential, profile_from_dict, potential_from_dict
from log_manager import lab_logger, LogCategory
from quantize import (Grid1D, Absorber, SigmaProfile, CutoffSpec, CutoffOperator, BarrierSpec, ModeOperator,
                      build_cutoff, build_mode_operator, quantize_symbol)
from scheduler import map_parallel, progress_printer
from utils import log_message

DEFAULT_H_LIST = [0.04, 0.028, 0.02, 0.014, 0.01, 0.007, 0.005]
# 1/h 가 정수: 목 궤도의 각운동량 hm = 1 이 모든 h 에서 실제 모드
NECK_H_LIST = [1.0 / n for n in (25, 36, 50, 71, 100, 143, 200)]
LAM_RULES = ("zero", "stress", "quasimode")
PROPAGATION_RATIO = 100.0
OUTGOING_ALPHA_MAX = 1.15
CONVERGENCE_TOL = 0.02


class Prediction(Enum):
    """프리셋이 주장하는 척도"""
    NONTRAPPING_H_INV = "nontrapping_h_inv"
    LOG_LOSS = "log_loss"
    LOG2_LOSS = "log2_loss"
    MICROLOCAL_H_INV = "microlocal_h_inv"
    ELLIPTIC_BLOWUP = "elliptic_blowup"


# ---------------------------------------------------------------------- 모드별 노름
@dataclass
class NormEstimate:
    value: float
    iterations: int
    converged: bool
    change: float
    solve_residual: float = 0.0
    vector: Optional[np.ndarray] = field(default=None, repr=False)


def _adjoint(M):
    return None if M is None else sp.csr_matrix(M).getH().tocsr()


def power_norm(forward: Callable[[np.ndarray], np.ndarray], backward: Callable[[np.ndarray], np.ndarray],
               n: int, tol: float = 1e-6, max_iter: int = 500, seed: int = 0) -> NormEstimate:
    """
    선형 연산자 M 의 최대 특이값 (M*M 거듭제곱법, 행렬 없이 forward = M, backward = M*)

    Returns:
        NormEstimate: 연속 추정값의 상대 변화가 tol 이하이면 수렴
    """
    if not (1e-8 <= tol <= 1e-3):
        raise InvalidParams(f"tol={tol} 은 [1e-8, 1e-3] 범위여야 합니다", invariant="tol")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    prev = None
    value, change = 0.0, math.inf
    for k in range(1, max_iter + 1):
        y = forward(x)
        value = float(np.linalg.norm(y))
        if value == 0.0:
            return NormEstimate(0.0, k, True, 0.0)
        if prev is not None:
            change = abs(value - prev) / value
            if change <= tol:
                return NormEstimate(value, k, True, change, vector=x)
        prev = value
        z = backward(y)
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            return NormEstimate(value, k, True, 0.0, vector=x)
        x = z / nz
    return NormEstimate(value, max_iter, False, change, vector=x)


def mode_resolvent_norm(A_m, op: ModeOperator, B_m, tol: float = 1e-6, max_iter: int = 500,
                        seed: int = 0) -> NormEstimate:
    """
    M = A_m ∘ (P - λ)^{-1} ∘ B_m 의 최대 특이값

    Args:
        A_m, B_m: 모드 행렬 (None 이면 항등)
        op: 모드 연산자
        tol: 연속 추정값의 상대 변화 허용치 [1e-8, 1e-3]
        max_iter: 최대 반복 수
        seed: 시작 벡터 난수 시드

    Returns:
        NormEstimate: 수렴하지 않으면 converged=False 와 마지막 추정값
    """
    A_h, B_h = _adjoint(A_m), _adjoint(B_m)

    def forward(x):
        y = x if B_m is None else B_m @ x
        y = op.apply_inverse(y)
        return y if A_m is None else A_m @ y

    def backward(y):
        z = y if A_h is None else A_h @ y
        z = op.apply_inverse_adjoint(z)
        return z if B_h is None else B_h @ z

    estimate = power_norm(forward, backward, op.n, tol, max_iter, seed)
    if estimate.vector is not None:
        estimate.solve_residual = _solve_residual(op, B_m, estimate.vector)
    return estimate


def _solve_residual(op: ModeOperator, B_m, x: np.ndarray) -> float:
    rhs = x if B_m is None else B_m @ x
    scale = np.linalg.norm(rhs)
    if scale == 0.0:
        return 0.0
    u = op.apply_inverse(rhs)
    return float(np.linalg.norm(op.apply(u) - rhs) / scale)


def dense_norm_oracle(A_m, op: ModeOperator, B_m, max_n: int = 400) -> float:
    """밀집 특이값 분해로 계산한 ‖A (P-λ)^{-1} B‖ (n ≤ 400 전용)"""
    n = op.n
    if n > max_n:
        raise InvalidParams(f"밀집 오라클은 n ≤ {max_n} 에서만 씁니다 (n={n})", invariant="n ≤ 400")
    P = op.matrix.toarray()
    B = np.eye(n) if B_m is None else sp.csr_matrix(B_m).toarray()
    A = np.eye(n) if A_m is None else sp.csr_matrix(A_m).toarray()
    M = A @ scipy.linalg.solve(P, B)
    return float(scipy.linalg.svdvals(M)[0])


# ---------------------------------------------------------------------- 모드 정책
@dataclass
class ModePolicy:
    """
    포함할 모드 집합

    kind:
        shell: |hm| ≤ (절단 지지 위 껍질 μ 최댓값) + margin
        target: m = round(target_mu / h) 하나
        explicit: modes 그대로
    """

    kind: str = "shell"
    margin: float = 0.5
    target_mu: Optional[float] = None
    modes: Optional[List[int]] = None
    sentinel_count: int = 3

    def shell_mu_max(self, profile: Profile, potential: Potential, energy: float, s_extent: float) -> float:
        extent = min(s_extent, profile.S)
        s = np.linspace(-extent, extent, 2001)
        gap = np.maximum(energy - potential.V(s), 0.0)
        return float(np.max(profile.a(s) * np.sqrt(gap)))

    def modes_for(self, spec: "ExperimentSpec", h: float) -> Tuple[List[int], List[int]]:
        """
        Returns:
            (포함 모드, 감시 모드)
        """
        if self.kind == "explicit":
            if not self.modes:
                raise InvalidParams("explicit 모드 정책에 modes 가 없습니다", invariant="modes")
            return sorted(int(m) for m in self.modes), []
        if self.kind == "target":
            if self.target_mu is None:
                raise InvalidParams("target 모드 정책에 target_mu 가 없습니다", invariant="target_mu")
            return [int(round(self.target_mu / h))], []
        if self.kind != "shell":
            raise InvalidParams(f"알 수 없는 모드 정책: {self.kind}", invariant="mode_policy")

        s_extent = max(spec.A.s_extent, spec.B.s_extent)
        mu_max = self.shell_mu_max(spec.profile, spec.potential, spec.energy, s_extent) + self.margin
        for cutoff in (spec.A, spec.B):
            if cutoff.mu_extent is not None:
                mu_max = min(mu_max, cutoff.mu_extent)
        m_max = int(math.floor(mu_max / h))
        lo = 0 if (spec.A.mode_factor_even and spec.B.mode_factor_even) else -m_max
        modes = list(range(lo, m_max + 1))
        sentinels = list(range(m_max + 1, m_max + 1 + self.sentinel_count))
        if spec.A.mu_extent is not None or spec.B.mu_extent is not None:
            sentinels = []
        return modes, sentinels

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "margin": self.margin, "target_mu": self.target_mu,
                "modes": self.modes, "sentinel_count": self.sentinel_count}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ModePolicy":
        data = data or {}
        return cls(kind=data.get("kind", "shell"), margin=float(data.get("margin", 0.5)),
                   target_mu=data.get("target_mu"), modes=data.get("modes"),
                   sentinel_count=int(data.get("sentinel_count", 3)))


# ---------------------------------------------------------------------- 실험 명세
@dataclass
class ExperimentSpec:
    """h-스윕 실험 하나"""

    name: str
    profile: Profile
    potential: Potential
    A: CutoffSpec
    B: CutoffSpec
    prediction: Prediction
    h_list: List[float] = field(default_factory=lambda: list(DEFAULT_H_LIST))
    claim: str = ""
    anchor: str = ""
    contrast: Optional[str] = None
    energy: float = 1.0
    barrier: Optional[BarrierSpec] = None
    lam_rule: str = "zero"
    mode_policy: ModePolicy = field(default_factory=ModePolicy)
    absorber: Absorber = field(default_factory=Absorber)
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 20240611
    convexity: Optional[Tuple[str, List[Tuple[float, float]]]] = None
    audit: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def validate(self):
        if not self.h_list:
            raise InvalidParams("h 목록이 비어 있습니다", invariant="h_list")
        if any(not (0.0 < h < 1.0) for h in self.h_list):
            raise InvalidParams(f"h 는 (0, 1) 안에 있어야 합니다: {self.h_list}", invariant="0 < h < 1")
        if any(b >= a for a, b in zip(self.h_list, self.h_list[1:])):
            raise InvalidParams(f"h 목록이 순감소가 아닙니다: {self.h_list}", invariant="h_list decreasing")
        if self.lam_rule not in LAM_RULES:
            raise InvalidParams(f"알 수 없는 λ 규칙: {self.lam_rule}", invariant="lam_rule")
        if self.lam_rule == "quasimode" and self.mode_policy.target_mu is None:
            raise InvalidParams("quasimode λ 에는 target_mu 가 필요합니다", invariant="target_mu")

    def flow(self) -> ReducedFlow:
        return ReducedFlow(self.profile, self.potential, energy=self.energy)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "profile": self.profile.to_dict(),
            "potential": self.potential.to_dict(),
            "A": self.A.to_dict(),
            "B": self.B.to_dict(),
            "prediction": self.prediction.value,
            "h_list": list(self.h_list),
            "claim": self.claim,
            "anchor": self.anchor,
            "contrast": self.contrast,
            "energy": self.energy,
            "barrier": self.barrier.to_dict() if self.barrier is not None else None,
            "lam_rule": self.lam_rule,
            "mode_policy": self.mode_policy.to_dict(),
            "absorber": self.absorber.to_dict(),
            "tol": self.tol,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "convexity": [self.convexity[0], [list(iv) for iv in self.convexity[1]]] if self.convexity else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentSpec":
        for key in ("profile", "A", "B", "prediction"):
            if key not in data:
                raise InvalidParams(f"실험 설정에 키가 없습니다: {key}", invariant=key)
        try:
            prediction = Prediction(data["prediction"])
        except ValueError:
            raise InvalidParams(f"알 수 없는 예측: {data['prediction']}", invariant="prediction")
        convexity = data.get("convexity")
        spec = cls(
            name=data.get("name", "custom"),
            profile=profile_from_dict(data["profile"]),
            potential=potential_from_dict(data.get("potential")),
            A=CutoffSpec.from_dict(data["A"]),
            B=CutoffSpec.from_dict(data["B"]),
            prediction=prediction,
            h_list=[float(h) for h in data.get("h_list", DEFAULT_H_LIST)],
            claim=data.get("claim", ""),
            anchor=data.get("anchor", ""),
            contrast=data.get("contrast"),
            energy=float(data.get("energy", 1.0)),
            barrier=BarrierSpec.from_dict(data["barrier"]) if data.get("barrier") else None,
            lam_rule=data.get("lam_rule", "zero"),
            mode_policy=ModePolicy.from_dict(data.get("mode_policy")),
            absorber=Absorber.from_dict(data.get("absorber")),
            tol=float(data.get("tol", 1e-6)),
            max_iter=int(data.get("max_iter", 500)),
            seed=int(data.get("seed", 20240611)),
            convexity=(convexity[0], [tuple(iv) for iv in convexity[1]]) if convexity else None,
        )
        spec.validate()
        return spec


# ---------------------------------------------------------------------- 가설 검사
def _clause(passed: bool, value: Any = None, detail: str = "") -> Dict[str, Any]:
    return {"passed": bool(passed), "value": value, "detail": detail}


def hypothesis_audit(spec: ExperimentSpec) -> Dict[str, Dict[str, Any]]:
    """
    예측 태그의 동역학 가설을 확인

    Returns:
        dict: 조항 이름 → {passed, value, detail}
    """
    flow = spec.flow()
    audit: Dict[str, Dict[str, Any]] = {}
    orbits = [o for o in flow.classify_orbits() if not o.continuum]

    def damped(orbit) -> bool:
        return spec.barrier is not None and float(spec.barrier.w(orbit.s_star, 0.0)) >= 0.5

    undamped = [o for o in orbits if not damped(o)]

    if spec.barrier is not None:
        s0 = spec.profile.s0
        if s0 is None:
            audit["barrier_profile"] = _clause(False, detail="장벽 가설은 double_well 프로파일에서만 정의됩니다")
        else:
            for name, result in spec.barrier.check_clauses(flow, s0).items():
                audit[f"barrier_{name}"] = _clause(result["passed"], result["value"])

    if spec.prediction is Prediction.NONTRAPPING_H_INV:
        hits = [o.orbit_id for o in undamped
                if float(spec.A.spatial(o.s_star)) > 0 or float(spec.B.spatial(o.s_star)) > 0]
        audit["supports_avoid_trapped"] = _clause(not hits, hits, "절단 지지가 닫힌 궤도를 피함")
    elif spec.prediction is Prediction.MICROLOCAL_H_INV:
        hits = [o.orbit_id for o in undamped if float(spec.A.value(o.s_star, 0.0, o.mu)) > 1e-12]
        audit["A_avoids_trapped"] = _clause(not hits, hits, "A 의 기호가 감쇠되지 않은 궤도에서 0")
        if spec.barrier is None:
            audit.update(_microlocal_sample_audit(spec, flow))
    elif spec.prediction in (Prediction.LOG_LOSS, Prediction.LOG2_LOSS):
        covered = [o.orbit_id for o in undamped
                   if float(spec.A.spatial(o.s_star)) == 1.0 and float(spec.B.spatial(o.s_star)) == 1.0]
        hyperbolic = [o.orbit_id for o in undamped if o.stability is Stability.HYPERBOLIC]
        audit["cutoffs_cover_hyperbolic"] = _clause(bool(hyperbolic) and set(hyperbolic) <= set(covered),
                                                    hyperbolic, "쌍곡 궤도를 절단이 덮음")
        elliptic = [o.orbit_id for o in undamped if o.stability is Stability.ELLIPTIC]
        audit["no_undamped_elliptic"] = _clause(not elliptic, elliptic, "타원 포획이 없음 (또는 장벽이 감쇠)")
    elif spec.prediction is Prediction.ELLIPTIC_BLOWUP:
        mu = spec.mode_policy.target_mu
        point = flow.on_shell(0.0, mu)
        label = flow.classify_point(point).label
        confined = label is PointLabel.TRAPPED or flow.bounded_component(point)
        audit["target_trapped"] = _clause(confined, label.value, "목표 μ 의 s=0 점이 유계 허용 구간에 갇힘")
        audit["cutoffs_cover_well"] = _clause(float(spec.A.spatial(0.0)) == 1.0 and float(spec.B.spatial(0.0)) == 1.0,
                                              detail="절단이 s=0 우물을 덮음")

    if spec.convexity is not None:
        mode, intervals = spec.convexity
        report = flow.check_convexity(RegionSpec.s_band(f"{spec.name} 절단 지지", intervals), mode=mode)
        audit[f"{mode}_on_support"] = _clause(report.holds and not report.vacuous, report.n_samples,
                                              f"{len(report.witnesses)}개 위반")

    passed = all(c["passed"] for c in audit.values())
    lab_logger.log_audit(LogCategory.RESOLVENT, f"가설 검사 {spec.name}", passed=passed, audit=audit)
    return audit


def _microlocal_sample_audit(spec: ExperimentSpec, flow: ReducedFlow, n: int = 5,
                             horizon: float = 50.0) -> Dict[str, Dict[str, Any]]:
    """A 지지 위 껍질 표본이 갇힌 점이 아님을 분류로 확인"""
    lo, hi = spec.A.support
    if spec.A.mu_support is not None:
        mu_lo, mu_hi = spec.A.mu_support
    else:
        mu_hi = spec.mode_policy.shell_mu_max(spec.profile, spec.potential, spec.energy, spec.A.s_extent)
        mu_lo = -mu_hi
    barrier = spec.barrier.w if spec.barrier is not None else None
    trapped = []
    checked = 0
    for s in np.linspace(lo, hi, n)[1:-1]:
        for mu in np.linspace(mu_lo, mu_hi, n)[1:-1]:
            if float(spec.A.spatial(s)) == 0.0 or float(spec.A.mode_factor(mu)) == 0.0:
                continue
            for sign in (1.0, -1.0):
                try:
                    point = flow.on_shell(float(s), float(mu), sign)
                except InvalidParams:
                    continue
                label = flow.classify_point(point, barrier_symbol=barrier, horizon=horizon).label
                checked += 1
                if label is PointLabel.TRAPPED or (label is PointLabel.UNDETERMINED_AT_HORIZON
                                                   and flow.bounded_component(point)):
                    trapped.append([float(s), float(point.sigma), float(mu)])
    return {"A_samples_not_trapped": _clause(not trapped, checked, f"갇힌 표본 {len(trapped)}개")}


# ---------------------------------------------------------------------- 한 h 에서의 노름
@dataclass
class ResolventNorm:
    norm: float
    m_star: Optional[int]
    per_mode: Dict[int, NormEstimate]
    sentinels: Dict[int, NormEstimate]

    @property
    def sentinel_ok(self) -> bool:
        return all(est.value <= self.norm for est in self.sentinels.values())

    @property
    def converged(self) -> bool:
        return all(est.converged for est in self.per_mode.values())


def choose_lambda(spec: ExperimentSpec, h: float, grid: Grid1D, barrier_matrix=None) -> complex:
    """λ 규칙 적용 (zero, stress = i·h^4, quasimode)"""
    if spec.lam_rule == "zero":
        return 0j
    if spec.lam_rule == "stress":
        return 1j * h ** 4
    m = int(round(spec.mode_policy.target_mu / h))
    op = build_mode_operator(spec.profile, spec.potential, h, m, 0.0, grid, spec.absorber, barrier_matrix)
    values = eigs(op.matrix, k=min(8, op.n - 2), sigma=0.0, return_eigenvectors=False)
    near = [z for z in values if abs(z.real) <= 2.0 * h]
    if not near:
        raise ConstructionFailed(f"|Re z| ≤ 2h 인 준모드가 없습니다 (h={h}, m={m})", invariant="quasimode",
                                 witness=[complex(z) for z in values])
    best = max(near, key=lambda z: z.imag)
    lab_logger.log_resolvent("준모드 λ 선택", h=h, m=m, eigenvalue=[best.real, best.imag])
    return complex(best.real, 0.0)


def resolvent_norm(A: CutoffOperator, B: CutoffOperator, h: float, lam: complex, spec: ExperimentSpec,
                   grid: Grid1D, barrier_matrix=None, threads: int = 1,
                   modes: Optional[Sequence[int]] = None, sentinels: Optional[Sequence[int]] = None) -> ResolventNorm:
    """
    포함 모드에 대한 max_m ‖A_m R_m(λ) B_m‖

    Args:
        A, B: 모드 대각 절단 연산자
        h: 준고전 매개변수
        lam: 스펙트럼 매개변수
        spec: 실험 명세 (퍼텐셜, 흡수대, 반복 설정)
        grid: 격자
        barrier_matrix: 미리 양자화한 장벽 W
        threads: 동시 실행 수
        modes, sentinels: 모드 정책 대신 직접 지정

    Returns:
        ResolventNorm: 최대 노름, 가장 작은 |m| 으로 정한 m*, 모드별 추정값
    """
    if modes is None:
        modes, default_sentinels = spec.mode_policy.modes_for(spec, h)
        sentinels = default_sentinels if sentinels is None else sentinels
    sentinels = list(sentinels or [])
    active = [m for m in modes if m in A.weights and m in B.weights]

    def one(m: int) -> Tuple[int, NormEstimate]:
        op = build_mode_operator(spec.profile, spec.potential, h, m, lam, grid, spec.absorber, barrier_matrix)
        A_m = A.weights.get(m, float(A.spec.mode_factor(h * m))) * A.base.matrix
        B_m = B.weights.get(m, float(B.spec.mode_factor(h * m))) * B.base.matrix
        return m, mode_resolvent_norm(A_m, op, B_m, spec.tol, spec.max_iter, spec.seed)

    results = map_parallel(one, active + sentinels, threads, progress_printer(f"h={h} 모드", every=50))
    per_mode = dict(sorted(results[:len(active)]))
    sentinel_est = dict(sorted(results[len(active):]))
    if not per_mode:
        return ResolventNorm(0.0, None, per_mode, sentinel_est)
    norm = max(est.value for est in per_mode.values())
    m_star = min((m for m, est in per_mode.items() if est.value == norm), key=lambda m: (abs(m), m))
    return ResolventNorm(norm, m_star, per_mode, sentinel_est)


# ---------------------------------------------------------------------- 스윕
@dataclass
class SweepRow:
    h: float
    norm: float
    m_star: Optional[int]
    iterations: int
    residual: float
    converged: bool
    lam: complex = 0j
    n_modes: int = 0
    sentinel_ok: bool = True
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "h": self.h, "norm": self.norm, "m_star": self.m_star, "iterations": self.iterations,
            "residual": self.residual, "converged": self.converged,
            "lam_re": self.lam.real, "lam_im": self.lam.imag,
            "n_modes": self.n_modes, "sentinel_ok": self.sentinel_ok, "error": self.error,
        }


@dataclass
class ScalingFit:
    """log N = α log(1/h) + β log log(1/h) + c"""
    alpha: float
    beta: float
    c: float
    residual: float
    n: int
    fixed_beta: Optional[float]
    power_alpha: float
    power_c: float
    power_residual: float

    @property
    def best(self) -> str:
        return "power" if self.power_residual <= self.residual + 1e-12 else "log_power"

    @property
    def best_residual(self) -> float:
        return min(self.residual, self.power_residual)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha, "beta": self.beta, "c": self.c, "residual": self.residual, "n": self.n,
            "fixed_beta": self.fixed_beta, "power_alpha": self.power_alpha, "power_c": self.power_c,
            "power_residual": self.power_residual, "best": self.best, "best_residual": self.best_residual,
        }


def fit_scaling(rows: Sequence[Tuple[float, float]], fix_beta: Optional[float] = None) -> ScalingFit:
    """
    최소제곱 척도 적합

    Args:
        rows: (h, norm) 목록 (양의 노름, 서로 다른 h 4개 이상, h < 1/e)
        fix_beta: 주어지면 β 를 고정하고 α, c 만 적합

    Returns:
        ScalingFit: 두 변수 적합과 순수 거듭제곱 적합, 각각의 잔차 RMS
    """
    data = [(float(h), float(n)) for h, n in rows if n is not None and np.isfinite(n)]
    hs = np.array([h for h, _ in data])
    if len(np.unique(hs)) < 4:
        raise DegenerateDesign(f"서로 다른 h 가 4개 미만입니다 ({len(np.unique(hs))}개)",
                               invariant="≥ 4 distinct h", witness=hs.tolist())
    norms = np.array([n for _, n in data])
    if np.any(norms <= 0):
        raise DegenerateDesign("노름이 양수가 아닙니다", invariant="norm > 0", witness=norms.tolist())
    if np.any(hs >= math.exp(-1.0)):
        raise DegenerateDesign("log log(1/h) 를 쓰려면 h < 1/e 이어야 합니다", invariant="h < 1/e",
                               witness=hs.tolist())
    x1 = np.log(1.0 / hs)
    x2 = np.log(x1)
    y = np.log(norms)

    def rms(design, target, coef):
        return float(np.sqrt(np.mean((design @ coef - target) ** 2)))

    power_design = np.column_stack([x1, np.ones_like(x1)])
    power_coef = np.linalg.lstsq(power_design, y, rcond=None)[0]
    power_res = rms(power_design, y, power_coef)

    if fix_beta is None:
        design = np.column_stack([x1, x2, np.ones_like(x1)])
        coef = np.linalg.lstsq(design, y, rcond=None)[0]
        alpha, beta, c = (float(v) for v in coef)
        residual = rms(design, y, coef)
    else:
        target = y - fix_beta * x2
        coef = np.linalg.lstsq(power_design, target, rcond=None)[0]
        alpha, c = float(coef[0]), float(coef[1])
        beta = float(fix_beta)
        residual = rms(power_design, target, coef)
    return ScalingFit(alpha, beta, c, residual, len(data), fix_beta,
                      float(power_coef[0]), float(power_coef[1]), power_res)


@dataclass
class SweepResult:
    name: str
    prediction: Prediction
    claim: str
    seed: int
    rows: List[SweepRow]
    fit: Optional[ScalingFit]
    fit_fixed: Optional[ScalingFit]
    audit: Dict[str, Dict[str, Any]]
    prediction_check: Dict[str, Any]
    notes: List[str] = field(default_factory=list)
    contrast: Optional[Dict[str, Any]] = None

    @property
    def all_converged(self) -> bool:
        return all(r.converged and r.error is None for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.all_converged and bool(self.prediction_check.get("passed", False))

    def curve(self) -> List[Tuple[float, float]]:
        """(log(1/h), log(norm)) 그림용 점"""
        return [(math.log(1.0 / r.h), math.log(r.norm)) for r in self.rows
                if r.error is None and r.norm > 0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "prediction": self.prediction.value,
            "rows": [r.to_dict() for r in self.rows],
            "fit": self.fit.to_dict() if self.fit else None,
            "fit_fixed": self.fit_fixed.to_dict() if self.fit_fixed else None,
            "audit": self.audit,
            "prediction_check": self.prediction_check,
            "all_converged": self.all_converged,
            "notes": list(self.notes),
            "contrast": self.contrast,
        }


def _sweep_row(spec: ExperimentSpec, h: float, threads: int, A_spec: Optional[CutoffSpec] = None,
               B_spec: Optional[CutoffSpec] = None, grid: Optional[Grid1D] = None) -> SweepRow:
    A_spec = spec.A if A_spec is None else A_spec
    B_spec = spec.B if B_spec is None else B_spec
    try:
        grid = Grid1D.for_h(spec.profile.S, h) if grid is None else grid
        modes, sentinels = spec.mode_policy.modes_for(
            ExperimentSpec(spec.name, spec.profile, spec.potential, A_spec, B_spec, spec.prediction,
                           mode_policy=spec.mode_policy, energy=spec.energy), h)
        all_modes = modes + sentinels
        A = build_cutoff(A_spec, h, all_modes, grid, config.BAND_TOL)
        B = build_cutoff(B_spec, h, all_modes, grid, config.BAND_TOL)
        for sentinel in sentinels:
            A.weights.setdefault(sentinel, float(A_spec.mode_factor(h * sentinel)))
            B.weights.setdefault(sentinel, float(B_spec.mode_factor(h * sentinel)))
        W = spec.barrier.quantize(h, grid, config.BAND_TOL) if spec.barrier is not None else None
        lam = choose_lambda(spec, h, grid, W)
        result = resolvent_norm(A, B, h, lam, spec, grid, W, threads, modes, sentinels)
        iterations = result.per_mode[result.m_star].iterations if result.m_star is not None else 0
        residual = max((est.solve_residual for est in result.per_mode.values()), default=0.0)
        return SweepRow(h, result.norm, result.m_star, iterations, residual, result.converged, lam,
                        len(result.per_mode), result.sentinel_ok)
    except LabError as e:
        lab_logger.log_error(f"스윕 행 실패 h={h}", category=LogCategory.RESOLVENT, error=e.to_dict())
        log_message(f"❌ h={h}: {e}")
        return SweepRow(h, float("nan"), None, 0, float("nan"), False, error=str(e))


def resolve_at(spec: ExperimentSpec, h: float, threads: int = 1) -> SweepRow:
    """h 하나에서 ‖A R_h(λ) B‖ (스윕 행과 같은 규칙)"""
    spec.validate()
    if not (0.0 < h < 1.0):
        raise InvalidParams(f"h 는 (0, 1) 안에 있어야 합니다: {h}", invariant="0 < h < 1")
    return _sweep_row(spec, h, threads)


def mode_operator_at(spec: ExperimentSpec, h: float, m: int, lam: complex = 0.0) -> ModeOperator:
    """스윕 행과 같은 격자, 장벽으로 만든 모드 m 연산자 (디버그 덤프용)"""
    grid = Grid1D.for_h(spec.profile.S, h)
    W = spec.barrier.quantize(h, grid, config.BAND_TOL) if spec.barrier is not None else None
    return build_mode_operator(spec.profile, spec.potential, h, m, lam, grid, spec.absorber, W)


def check_prediction(spec: ExperimentSpec, rows: Sequence[SweepRow], fit: Optional[ScalingFit],
                     fit_fixed: Optional[ScalingFit]) -> Dict[str, Any]:
    """예측 태그별 한쪽 경계 검사"""
    p = spec.prediction
    if p is Prediction.ELLIPTIC_BLOWUP:
        good = [r for r in rows if r.error is None]
        if not good:
            return {"passed": False, "detail": "성공한 행이 없습니다"}
        smallest = min(good, key=lambda r: r.h)
        bound = smallest.h ** -3
        return {"passed": smallest.norm > bound, "h": smallest.h, "norm": smallest.norm, "bound": bound,
                "detail": "가장 작은 h 에서 norm > h^-3"}
    if fit is None or fit_fixed is None:
        return {"passed": False, "detail": "적합할 행이 부족합니다"}
    if p is Prediction.NONTRAPPING_H_INV:
        ok = 0.85 <= fit_fixed.alpha <= 1.15
        return {"passed": ok, "alpha": fit_fixed.alpha, "detail": "β=0 고정 α ∈ [0.85, 1.15]"}
    if p is Prediction.MICROLOCAL_H_INV:
        return {"passed": fit_fixed.alpha <= 1.15, "alpha": fit_fixed.alpha, "detail": "β=0 고정 α ≤ 1.15"}
    if p is Prediction.LOG_LOSS:
        return {"passed": fit_fixed.alpha <= 1.15, "alpha": fit_fixed.alpha, "beta": fit_fixed.beta,
                "detail": "β=1 고정 α ≤ 1.15"}
    ok = fit.alpha <= 1.15 and fit.beta <= 2.5
    return {"passed": ok, "alpha": fit.alpha, "beta": fit.beta, "detail": "자유 적합 α ≤ 1.15, β ≤ 2.5"}


def _fixed_beta(prediction: Prediction) -> float:
    return 1.0 if prediction is Prediction.LOG_LOSS else 0.0


def run_sweep(spec: ExperimentSpec, threads: int = 1, seed: Optional[int] = None, force: bool = False) -> SweepResult:
    """
    h 목록을 따라 노름을 재고 척도를 적합

    Args:
        spec: 실험 명세
        threads: 모드 병렬 수
        seed: 거듭제곱법 시드 (None 이면 spec.seed)
        force: 가설 검사가 실패해도 실행

    Returns:
        SweepResult: 행마다 실패를 기록하고 계속 진행한다
    """
    spec.validate()
    if seed is not None:
        spec.seed = int(seed)
    if not spec.audit:
        spec.audit = hypothesis_audit(spec)
    failed = [name for name, clause in spec.audit.items() if not clause["passed"]]
    notes = []
    if failed:
        if not force:
            raise HypothesisAuditFailed(f"{spec.name} 가설 검사 실패: {', '.join(failed)}",
                                        invariant=failed[0], witness=spec.audit[failed[0]])
        notes.append(f"forced: {', '.join(failed)}")
        log_message(f"⚠️ 가설 검사 실패를 무시하고 진행: {', '.join(failed)}")

    log_message(f"🔄 스윕 시작: {spec.name} (h {len(spec.h_list)}개)")
    rows = []
    for h in spec.h_list:
        row = _sweep_row(spec, h, threads)
        rows.append(row)
        if row.error is None:
            log_message(f"✅ h={h}: norm={row.norm:.6e}, m*={row.m_star}")

    good = [(r.h, r.norm) for r in rows if r.error is None and r.norm > 0]
    fit = fit_fixed = None
    try:
        if spec.prediction is not Prediction.ELLIPTIC_BLOWUP or len(good) >= 4:
            fit = fit_scaling(good)
            fit_fixed = fit_scaling(good, fix_beta=_fixed_beta(spec.prediction))
    except DegenerateDesign as e:
        notes.append(str(e))
    if any(not r.sentinel_ok for r in rows):
        notes.append("sentinel mode exceeded the shell maximum")

    result = SweepResult(spec.name, spec.prediction, spec.claim, spec.seed, rows, fit, fit_fixed,
                         spec.audit, check_prediction(spec, rows, fit, fit_fixed), notes)
    if spec.contrast is not None and spec.contrast != spec.name:
        reference = preset(spec.contrast, audit=False)
        reference.h_list = list(spec.h_list)
        log_message(f"🔄 대비 스윕: {spec.name} / {reference.name}")
        reference_result = run_sweep(reference, threads, spec.seed, force)
        trend = ratio_trend(result, reference_result)
        result.contrast = {"reference": reference_result.to_dict(), "ratio_trend": trend}
        result.prediction_check["contrast"] = {"reference": reference.name, **trend}
        result.prediction_check["passed"] = (bool(result.prediction_check.get("passed"))
                                             and trend["strictly_increasing"]
                                             and reference_result.all_converged)
    lab_logger.log_resolvent(f"스윕 완료 {spec.name}", passed=result.passed,
                             fit=fit.to_dict() if fit else None, check=result.prediction_check)
    return result


# ---------------------------------------------------------------------- 부가 검사
def ratio_trend(full: SweepResult, micro: SweepResult) -> Dict[str, Any]:
    """같은 h 에서 norm_full / norm_micro 가 h 감소에 따라 순증가하는지"""
    micro_by_h = {r.h: r.norm for r in micro.rows if r.error is None}
    pairs = sorted(((r.h, r.norm / micro_by_h[r.h]) for r in full.rows
                    if r.error is None and r.h in micro_by_h and micro_by_h[r.h] > 0), reverse=True)
    ratios = [ratio for _, ratio in pairs]
    increasing = len(ratios) >= 2 and all(b > a for a, b in zip(ratios, ratios[1:]))
    return {"h": [h for h, _ in pairs], "ratios": ratios, "strictly_increasing": increasing}


def point_cutoff(s: float, sigma: float, mu: Optional[float] = None, half_s: float = 0.3,
                 half_sigma: float = 0.2, sigma_width: float = 0.05) -> CutoffSpec:
    """(s, σ, μ) 근처에 미시국소화한 절단"""
    mu_plateau = mu_support = None
    if mu is not None:
        mu_plateau = (mu - 0.05, mu + 0.05)
        mu_support = (mu - 0.1, mu + 0.1)
    return CutoffSpec(plateau=(s - 0.5 * half_s, s + 0.5 * half_s), support=(s - half_s, s + half_s),
                      sigma=SigmaProfile("box", sigma - half_sigma, sigma + half_sigma, sigma_width),
                      mu_plateau=mu_plateau, mu_support=mu_support)


@dataclass
class PropagationReport:
    h: float
    m: int
    downstream_mass: float
    unreachable_mass: float
    ratio: float

    @property
    def passed(self) -> bool:
        return self.ratio >= PROPAGATION_RATIO

    def to_dict(self) -> Dict[str, Any]:
        return {"h": self.h, "m": self.m, "downstream_mass": self.downstream_mass,
                "unreachable_mass": self.unreachable_mass, "ratio": self.ratio, "passed": self.passed}


def propagation_contrast(profile: Profile, potential: Optional[Potential], h: float, mu: float = 0.5,
                         s_source: float = -3.0, s_target: float = 3.0, absorber: Optional[Absorber] = None,
                         band_tol: float = 1e-10) -> PropagationReport:
    """
    역방향 비갇힘 점의 결맞음 상태를 원천으로 풀고, 순방향 하류 점과
    같은 껍질의 도달 불가 점 (하류 위치, 반대 σ) 에서의 질량을 비교

    Returns:
        PropagationReport: ratio = 하류 질량 / 도달 불가 질량
    """
    potential = potential if potential is not None else make_potential("zero")
    flow = ReducedFlow(profile, potential)
    sig_src = flow.shell_sigma(s_source, mu, +1.0)
    sig_dst = flow.shell_sigma(s_target, mu, +1.0)

    grid = Grid1D.for_h(profile.S, h)
    m = int(round(mu / h))
    op = build_mode_operator(profile, potential, h, m, 0.0, grid, absorber)
    s = grid.nodes
    packet = np.exp(1j * sig_src * (s - s_source) / h - (s - s_source) ** 2 / (2.0 * h))
    B = quantize_symbol(point_cutoff(s_source, sig_src).symbol(), h, grid, band_tol).matrix
    u = op.apply_inverse(B @ packet)

    down = quantize_symbol(point_cutoff(s_target, sig_dst).symbol(), h, grid, band_tol).matrix
    away = quantize_symbol(point_cutoff(s_target, -sig_dst).symbol(), h, grid, band_tol).matrix
    down_mass = float(np.linalg.norm(down @ u))
    away_mass = float(np.linalg.norm(away @ u))
    ratio = down_mass / away_mass if away_mass > 0 else math.inf
    report = PropagationReport(h, m, down_mass, away_mass, ratio)
    lab_logger.log_audit(LogCategory.RESOLVENT, "전파 대비 검사", **report.to_dict())
    return report


@dataclass
class OutgoingReport:
    b_label: str
    alphas: Dict[str, float]
    rows: Dict[str, List[SweepRow]]

    @property
    def passed(self) -> bool:
        return bool(self.alphas) and all(a <= OUTGOING_ALPHA_MAX for a in self.alphas.values())

    def to_dict(self) -> Dict[str, Any]:
        return {"b_label": self.b_label, "alphas": self.alphas, "passed": self.passed,
                "rows": {k: [r.to_dict() for r in v] for k, v in self.rows.items()}}


def outgoing_audit(spec: ExperimentSpec, A_specs: Dict[str, CutoffSpec], B: CutoffSpec,
                   threads: int = 1) -> OutgoingReport:
    """
    역방향 비갇힘 지지의 B 에 대해 모든 A 가 α ≤ 1.15 인지 확인

    B 중심 (지지 중점, σ 상자 중점, μ 창 중점) 을 먼저 분류한다.
    """
    flow = spec.flow()
    s_c = 0.5 * (B.support[0] + B.support[1])
    sig_c = 0.5 * (B.sigma.lo + B.sigma.hi) if B.sigma is not None else 0.0
    mu_c = 0.5 * (B.mu_support[0] + B.mu_support[1]) if B.mu_support is not None else 0.0
    label = flow.classify_point(PhasePoint(s_c, sig_c, mu_c)).label
    if label is not PointLabel.BACKWARD_NONTRAPPED:
        raise HypothesisAuditFailed(f"B 의 중심이 역방향 비갇힘이 아닙니다 ({label.value})",
                                    invariant="backward_nontrapped", witness=[s_c, sig_c, mu_c])
    alphas, rows = {}, {}
    for name, A in A_specs.items():
        rows[name] = [_sweep_row(spec, h, threads, A, B) for h in spec.h_list]
        good = [(r.h, r.norm) for r in rows[name] if r.error is None and r.norm > 0]
        try:
            alphas[name] = fit_scaling(good, fix_beta=0.0).alpha
        except DegenerateDesign as e:
            log_message(f"⚠️ {name}: {e}")
    report = OutgoingReport(f"({s_c:.3f}, {sig_c:.3f}, {mu_c:.3f})", alphas, rows)
    lab_logger.log_audit(LogCategory.RESOLVENT, "나가는 성질 검사", passed=report.passed, alphas=alphas)
    return report


@dataclass
class ConvergenceReport:
    h: float
    norm_coarse: float
    norm_fine: float

    @property
    def relative_change(self) -> float:
        return abs(self.norm_fine - self.norm_coarse) / max(abs(self.norm_fine), 1e-300)

    @property
    def passed(self) -> bool:
        return self.relative_change <= CONVERGENCE_TOL

    def to_dict(self) -> Dict[str, Any]:
        return {"h": self.h, "norm_coarse": self.norm_coarse, "norm_fine": self.norm_fine,
                "relative_change": self.relative_change, "passed": self.passed}


def convergence_audit(spec: ExperimentSpec, h: Optional[float] = None, threads: int = 1) -> ConvergenceReport:
    """가장 성긴 h (기본값) 에서 Δs 와 Δs/2 의 노름 비교"""
    h = max(spec.h_list) if h is None else h
    grid = Grid1D.for_h(spec.profile.S, h)
    coarse = _sweep_row(spec, h, threads, grid=grid)
    fine = _sweep_row(spec, h, threads, grid=grid.refined())
    report = ConvergenceReport(h, coarse.norm, fine.norm)
    lab_logger.log_audit(LogCategory.RESOLVENT, "격자 수렴 검사", **report.to_dict())
    return report


# ---------------------------------------------------------------------- 프리셋
def _spatial(plateau: float, support: float, **kwargs) -> CutoffSpec:
    return CutoffSpec(plateau=(-plateau, plateau), support=(-support, support), **kwargs)


def _mirrored(plateau: Tuple[float, float], support: Tuple[float, float]) -> CutoffSpec:
    return CutoffSpec(plateau=plateau, support=support, mirrored=True)


def _nontrapping_baseline() -> ExperimentSpec:
    cut = _spatial(2.0, 3.0)
    return ExperimentSpec("nontrapping_baseline", make_profile("nontrapping_monotone"), make_potential("zero"),
                          cut, cut, Prediction.NONTRAPPING_H_INV,
                          claim="without trapping, compactly cut-off resolvents grow like 1/h",
                          anchor="nontrapping reference bound for compactly cut-off resolvents")


def _catenoid_full() -> ExperimentSpec:
    cut = _spatial(1.0, 1.5)
    return ExperimentSpec("catenoid_full", make_profile("catenoid"), make_potential("zero"), cut, cut,
                          Prediction.LOG_LOSS, h_list=list(NECK_H_LIST),
                          claim="cutoffs over the hyperbolic neck orbits lose a factor |log h| over 1/h",
                          anchor="normally hyperbolic trapping: log loss over the neck orbits",
                          contrast="catenoid_microlocal")


def _catenoid_microlocal() -> ExperimentSpec:
    mu_window = dict(mu_plateau=(0.85, 1.15), mu_support=(0.7, 1.3))
    A = CutoffSpec(plateau=(1.2, 1.8), support=(1.0, 2.0), **mu_window)
    B = CutoffSpec(plateau=(-0.3, 0.3), support=(-0.6, 0.6),
                   sigma=SigmaProfile("outside", -0.35, 0.35, 0.1), **mu_window)
    return ExperimentSpec("catenoid_microlocal", make_profile("catenoid"), make_potential("zero"), A, B,
                          Prediction.MICROLOCAL_H_INV, h_list=list(NECK_H_LIST),
                          claim="cutoffs off the trapped set and vanishing near the orbit keep the 1/h bound",
                          anchor="main microlocal estimate near a hyperbolic orbit")


def _catenoid_far_cutoffs() -> ExperimentSpec:
    cut = _mirrored((3.5, 4.5), (3.0, 5.0))
    return ExperimentSpec("catenoid_far_cutoffs", make_profile("catenoid"), make_potential("zero"), cut, cut,
                          Prediction.NONTRAPPING_H_INV,
                          claim="cutoffs supported far from the neck see nontrapping 1/h growth",
                          anchor="cutoffs outside the trapped set's backward and forward reach")


def _catenoid_annulus() -> ExperimentSpec:
    cut = _mirrored((1.2, 1.8), (1.0, 2.0))
    return ExperimentSpec("catenoid_annulus", make_profile("catenoid"), make_potential("zero"), cut, cut,
                          Prediction.NONTRAPPING_H_INV,
                          claim="cutoffs on a convex annulus around the neck see 1/h growth",
                          anchor="convex region estimate away from the trapped set",
                          convexity=("convinf", [(1.0, 2.0), (-2.0, -1.0)]))


def _double_well(A: CutoffSpec, prediction: Prediction, name: str, claim: str, anchor: str) -> ExperimentSpec:
    return ExperimentSpec(name, make_profile("double_well"), make_potential("zero"), A, A, prediction,
                          claim=claim, anchor=anchor, barrier=BarrierSpec())


def _double_well_off_latitudes() -> ExperimentSpec:
    return _double_well(_spatial(1.0, 1.4), Prediction.MICROLOCAL_H_INV, "double_well_off_latitudes",
                        "with the σ-barrier over s = 0, cutoffs avoiding |s| = s0 keep the 1/h bound",
                        "barrier-regularized double well: cutoffs away from the hyperbolic latitudes")


def _double_well_full() -> ExperimentSpec:
    return _double_well(_spatial(2.2, 2.6), Prediction.LOG2_LOSS, "double_well_full",
                        "with the σ-barrier, cutoffs over all latitude orbits lose at most log^2(1/h)",
                        "gluing of two hyperbolic latitude estimates: squared log loss")


def _elliptic_blowup() -> ExperimentSpec:
    cut = _spatial(0.5, 1.0)
    return ExperimentSpec("elliptic_blowup", make_profile("double_well"), make_potential("zero"), cut, cut,
                          Prediction.ELLIPTIC_BLOWUP, h_list=[0.1, 0.08, 0.064, 0.05],
                          claim="stable trapping without a barrier gives resolvent growth beyond any power",
                          anchor="stable (elliptic) trapping without the barrier: quasimode blow-up",
                          lam_rule="quasimode", mode_policy=ModePolicy(kind="target", target_mu=1.2))


PRESETS: Dict[str, Callable[[], ExperimentSpec]] = {
    "nontrapping_baseline": _nontrapping_baseline,
    "catenoid_full": _catenoid_full,
    "catenoid_microlocal": _catenoid_microlocal,
    "catenoid_far_cutoffs": _catenoid_far_cutoffs,
    "catenoid_annulus": _catenoid_annulus,
    "double_well_off_latitudes": _double_well_off_latitudes,
    "double_well_full": _double_well_full,
    "elliptic_blowup": _elliptic_blowup,
}

# 외부에서 쓰는 별칭 -> 프리셋 이름
PRESET_ALIASES: Dict[str, str] = {
    "catenoid_thm1": "catenoid_microlocal",
    "prop53": "double_well_off_latitudes",
    "lemma52_full": "double_well_full",
}


def preset(name: str, audit: bool = True) -> ExperimentSpec:
    """
    이름으로 실험 명세 생성 (가설 검사 결과 포함)

    Args:
        name: PRESETS 의 키 또는 PRESET_ALIASES 의 별칭
        audit: False 면 가설 검사를 미룬다 (run_sweep 이 수행)

    Returns:
        ExperimentSpec
    """
    resolved = PRESET_ALIASES.get(name, name)
    if resolved not in PRESETS:
        known = ", ".join(list(PRESETS) + list(PRESET_ALIASES))
        raise UnknownPreset(f"알 수 없는 프리셋: {name} (가능: {known})", invariant="preset", witness=name)
    spec = PRESETS[resolved]()
    spec.validate()
    if audit:
        spec.audit = hypothesis_audit(spec)
    return spec


def preset_list() -> List[Dict[str, str]]:
    entries = []
    for name, builder in PRESETS.items():
        spec = builder()
        entries.append({"name": name, "prediction": spec.prediction.value, "claim": spec.claim,
                        "anchor": spec.anchor})
    for alias, target in PRESET_ALIASES.items():
        spec = PRESETS[target]()
        entries.append({"name": alias, "alias_of": target, "prediction": spec.prediction.value,
                        "claim": spec.claim, "anchor": spec.anchor})
    return entries
