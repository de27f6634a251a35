# gluing.py - 상보적 장벽을 둔 두 모형 레졸벤트로 만든 오른쪽 파라메트릭스와 나머지항 검증
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from config import config
from errors import GridTooCoarse, PreconditionError, LabError, DegenerateDesign, InvalidParams
from geometry import Profile, Potential, make_potential
from log_manager import lab_logger, LogCategory
from quantize import Grid1D, Absorber, BarrierSpec, ModeOperator, build_mode_operator, solve
from resolvent_lab import power_norm, fit_scaling, DEFAULT_H_LIST
from scheduler import map_parallel
from utils import ramp, even_window, log_message

POINTS_PER_SEGMENT = 50
IDENTITY_TOL = 1e-10
SQUARE_TOL = 1e-12
DISCREPANCY_TOL = 0.05
DECAY_MIN = 3.0
# 이 아래의 나머지항은 반올림 수준으로 보고 감쇠 적합 대신 통과시킨다
REMAINDER_FLOOR = 1e-9
# 고전 귀환 경로가 없는 지배 각운동량 (μ < 1 이면 모든 광선이 탈출)
GLUING_MU = 0.8
ORACLE_MAX_N = 2000


def _diag(values: np.ndarray) -> sp.csr_matrix:
    return sp.diags(np.asarray(values, dtype=complex)).tocsr()


@dataclass
class GluedModels:
    """
    P0 = P - iW0, P1 = P - iW1 과 절단 χ̃0, χ̃1 = 1 - χ̃0 (모두 |s| 의 함수)

    χ0s = χ̃0(|s| - s0/7), χ1s = χ̃1(|s| + s0/7) 는 각각 χ̃0, χ̃1 의 지지 위에서 1.
    """

    s0: float
    h: float
    m: int
    lam: complex
    grid: Grid1D
    P: ModeOperator
    P0: ModeOperator
    P1: ModeOperator
    chi0: np.ndarray
    chi1: np.ndarray
    chi0_shift: np.ndarray
    chi1_shift: np.ndarray
    W0: np.ndarray
    W1: np.ndarray
    C0: sp.csr_matrix = field(repr=False)
    C1: sp.csr_matrix = field(repr=False)

    @property
    def n(self) -> int:
        return self.grid.n

    # A0 v = [P, χ0s] R0 χ0 v,  A1 v = [P, χ1s] R1 χ1 v
    def A0(self, v: np.ndarray) -> np.ndarray:
        return self.C0 @ self.P0.apply_inverse(self.chi0 * v)

    def A1(self, v: np.ndarray) -> np.ndarray:
        return self.C1 @ self.P1.apply_inverse(self.chi1 * v)

    def A0_adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.chi0 * self.P0.apply_inverse_adjoint(self.C0.getH() @ v)

    def A1_adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.chi1 * self.P1.apply_inverse_adjoint(self.C1.getH() @ v)


def gluing_cutoffs(s, s0: float) -> Dict[str, np.ndarray]:
    """
    χ̃0: |s| ≤ 3s0/7 + δ 에서 1, |s| ≥ 4s0/7 - δ 에서 0 (δ = s0/70)
    W0: |s| ≤ 5s0/7 에서 0, |s| ≥ 6s0/7 에서 1
    W1: |s| ≤ s0/7 에서 1, |s| ≥ 2s0/7 에서 0
    """
    x = np.abs(np.asarray(s, dtype=float))
    step = s0 / 7.0
    delta = s0 / 70.0

    def chi0_tilde(y):
        return ramp(y, 4.0 * step - delta, 3.0 * step + delta)

    chi0 = chi0_tilde(x)
    return {
        "chi0": chi0,
        "chi1": 1.0 - chi0,
        "chi0_shift": chi0_tilde(x - step),
        "chi1_shift": 1.0 - chi0_tilde(x + step),
        "W0": ramp(x, 5.0 * step, 6.0 * step),
        "W1": ramp(x, 2.0 * step, step),
    }


def build_glued_models(profile: Profile, h: float, m: int, lam: complex, grid: Grid1D,
                       potential: Optional[Potential] = None, barrier: Optional[BarrierSpec] = None,
                       absorber: Optional[Absorber] = None) -> GluedModels:
    """
    접합용 두 모형 연산자와 교환자

    Args:
        profile: double_well 프로파일
        h: 준고전 매개변수
        m: 모드
        lam: 스펙트럼 매개변수
        grid: 격자 (s0/7 구간마다 절점 50개 이상)
        potential: 퍼텐셜 (None 이면 0)
        barrier: σ 장벽 (None 이면 BarrierSpec.for_gluing(s0))
        absorber: 흡수대

    Returns:
        GluedModels: 두 모형 모두 탐침 풀이로 가역성 확인됨
    """
    s0 = profile.s0
    if s0 is None:
        raise PreconditionError(f"접합 모형에는 double_well 프로파일이 필요합니다 ({profile.kind.value})",
                                invariant="double_well")
    step = s0 / 7.0
    if step / grid.ds < POINTS_PER_SEGMENT:
        raise GridTooCoarse(f"s0/7 구간에 절점 {step / grid.ds:.1f}개 (< {POINTS_PER_SEGMENT})",
                            invariant="≥ 50 points per s0/7", witness={"ds": grid.ds, "s0": s0})
    barrier = BarrierSpec.for_gluing(s0) if barrier is None else barrier
    if barrier.zeta_support >= 2.0 * step + s0 / 70.0:
        raise PreconditionError("장벽 지지가 χ̃1(|s| + s0/7) = 0 인 영역 밖으로 나갑니다",
                                invariant="barrier ⊂ {χ1s = 0}", witness=barrier.zeta_support)

    potential = potential if potential is not None else make_potential("zero")
    W = barrier.quantize(h, grid, config.BAND_TOL)
    P = build_mode_operator(profile, potential, h, m, lam, grid, absorber, W)
    cut = gluing_cutoffs(grid.nodes, s0)

    P0 = ModeOperator(h, m, complex(lam), (P.matrix - 1j * _diag(cut["W0"])).tocsc(), grid, P.absorber)
    P1 = ModeOperator(h, m, complex(lam), (P.matrix - 1j * _diag(cut["W1"])).tocsc(), grid, P.absorber)

    Pm = P.matrix.tocsr()
    X0, X1 = _diag(cut["chi0_shift"]), _diag(cut["chi1_shift"])
    C0 = (Pm @ X0 - X0 @ Pm).tocsr()
    C1 = (Pm @ X1 - X1 @ Pm).tocsr()
    C0.eliminate_zeros()
    C1.eliminate_zeros()

    rng = np.random.default_rng(7)
    probe = rng.standard_normal(grid.n) + 0j
    for name, op in (("P0", P0), ("P1", P1)):
        result = solve(op, probe)
        if not result.ok:
            log_message(f"⚠️ 모형 {name} 탐침 잔차 {result.residual:.2e}")

    return GluedModels(s0, h, int(m), complex(lam), grid, P, P0, P1, cut["chi0"], cut["chi1"],
                       cut["chi0_shift"], cut["chi1_shift"], cut["W0"], cut["W1"], C0, C1)


def build_parametrix(models: GluedModels, rhs: np.ndarray) -> np.ndarray:
    """F v = χ0s R0 χ0 v + χ1s R1 χ1 v"""
    rhs = np.asarray(rhs, dtype=complex)
    return (models.chi0_shift * models.P0.apply_inverse(models.chi0 * rhs)
            + models.chi1_shift * models.P1.apply_inverse(models.chi1 * rhs))


def iterated_correction(models: GluedModels, v: np.ndarray) -> np.ndarray:
    """(Id - A0 - A1 + A1A0 + A0A1 - A0A1A0 - A1A0A1) v"""
    A0, A1 = models.A0, models.A1
    a0, a1 = A0(v), A1(v)
    a1a0, a0a1 = A1(a0), A0(a1)
    return v - a0 - a1 + a1a0 + a0a1 - A0(a1a0) - A1(a0a1)


def identity_residuals(models: GluedModels, seed: int = 0) -> Dict[str, float]:
    """
    무작위 벡터에서 정확한 대수 항등식의 상대 잔차

    잔차는 ‖v‖ + ‖P-λ‖₁‖Fv‖ 로 나눈 값 (풀이의 후방 오차 척도).

    Returns:
        dict: first ((P-λ)F - Id - A0 - A1), iterated, A0_sq, A1_sq
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(models.n) + 1j * rng.standard_normal(models.n)
    nv = np.linalg.norm(v)
    P = models.P
    p_norm = float(sp.linalg.norm(P.matrix, 1))
    A0, A1 = models.A0, models.A1

    Fv = build_parametrix(models, v)
    first = np.linalg.norm(P.apply(Fv) - v - A0(v) - A1(v)) / (nv + p_norm * np.linalg.norm(Fv))

    Fw = build_parametrix(models, iterated_correction(models, v))
    quad = A1(A0(A1(A0(v)))) + A0(A1(A0(A1(v))))
    iterated = np.linalg.norm(P.apply(Fw) - v + quad) / (nv + p_norm * np.linalg.norm(Fw))

    return {
        "first": float(first),
        "iterated": float(iterated),
        "A0_sq": float(np.linalg.norm(A0(A0(v))) / nv),
        "A1_sq": float(np.linalg.norm(A1(A1(v))) / nv),
    }


def dense_gluing_oracle(models: GluedModels, max_n: int = ORACLE_MAX_N) -> Dict[str, float]:
    """
    성긴 격자에서 A0, A1, F 를 밀집 행렬로 만들어 구한 노름과 항등식 잔차

    Returns:
        dict: A0, A1, A0A1 노름과 first (‖(P-λ)F - Id - A0 - A1‖ / ‖F‖)
    """
    n = models.n
    if n > max_n:
        raise InvalidParams(f"밀집 오라클은 n ≤ {max_n} 에서만 씁니다 (n={n})", invariant=f"n ≤ {max_n}")
    P = models.P.matrix.toarray()
    R0 = scipy.linalg.solve(models.P0.matrix.toarray(), np.diag(models.chi0.astype(complex)))
    R1 = scipy.linalg.solve(models.P1.matrix.toarray(), np.diag(models.chi1.astype(complex)))
    A0 = models.C0.toarray() @ R0
    A1 = models.C1.toarray() @ R1
    F = models.chi0_shift[:, None] * R0 + models.chi1_shift[:, None] * R1
    first = np.linalg.norm(P @ F - np.eye(n) - A0 - A1, 2) / max(np.linalg.norm(F, 2), 1.0)
    return {
        "A0": float(scipy.linalg.svdvals(A0)[0]),
        "A1": float(scipy.linalg.svdvals(A1)[0]),
        "A0A1": float(scipy.linalg.svdvals(A0 @ A1)[0]),
        "first": float(first),
    }


@dataclass
class GluingRow:
    h: float
    m: int
    norms: Dict[str, float] = field(default_factory=dict)
    residuals: Dict[str, float] = field(default_factory=dict)
    oracle: Dict[str, float] = field(default_factory=dict)
    parametrix_norm: float = float("nan")
    direct_norm: float = float("nan")
    converged: bool = True
    error: Optional[str] = None

    @property
    def discrepancy(self) -> float:
        if not (self.direct_norm > 0):
            return float("nan")
        return abs(self.parametrix_norm - self.direct_norm) / self.direct_norm

    @property
    def passed(self) -> bool:
        if self.error is not None:
            return False
        return (self.residuals.get("first", math.inf) <= IDENTITY_TOL
                and self.residuals.get("iterated", math.inf) <= IDENTITY_TOL
                and self.residuals.get("A0_sq", math.inf) <= SQUARE_TOL
                and self.residuals.get("A1_sq", math.inf) <= SQUARE_TOL
                and self.discrepancy <= DISCREPANCY_TOL)

    def to_dict(self) -> Dict[str, Any]:
        return {"h": self.h, "m": self.m, "norms": self.norms, "residuals": self.residuals,
                "oracle": self.oracle,
                "parametrix_norm": self.parametrix_norm, "direct_norm": self.direct_norm,
                "discrepancy": self.discrepancy, "converged": self.converged, "passed": self.passed,
                "error": self.error}


@dataclass
class GluingReport:
    rows: List[GluingRow]
    decay: Dict[str, Optional[float]]
    required: Sequence[str] = ("A1A0A1A0_chi0", "A0A1A0A1")

    def smallest_norm(self, name: str) -> float:
        """가장 작은 h 의 정상 행에서 잰 노름 (없으면 inf)"""
        rows = [r for r in self.rows if r.error is None and name in r.norms]
        if not rows:
            return float("inf")
        return float(min(rows, key=lambda r: r.h).norms[name])

    @property
    def failures(self) -> List[str]:
        failures = [f"row h={r.h}" for r in self.rows if not r.passed]
        for name in self.required:
            exponent = self.decay.get(name)
            if exponent is not None and exponent >= DECAY_MIN:
                continue
            if self.smallest_norm(name) <= REMAINDER_FLOOR:
                continue
            failures.append(f"decay {name}")
        return failures

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": [r.to_dict() for r in self.rows], "decay": self.decay,
                "required": list(self.required), "passed": self.passed, "failures": self.failures}


def _outer_cutoff(models: GluedModels) -> np.ndarray:
    """모든 위도 궤도를 덮는 비교용 절단 χ0 (|s| ≤ 1.1 s0 에서 1)"""
    return even_window(models.grid.nodes, 1.1 * models.s0, 1.3 * models.s0)


def gluing_norms(models: GluedModels, tol: float = 1e-6, max_iter: int = 500, seed: int = 0) -> GluingRow:
    """한 (h, m) 에서 나머지항 노름과 파라메트릭스 대 직접 노름"""
    n = models.n
    A0, A1 = models.A0, models.A1
    A0h, A1h = models.A0_adjoint, models.A1_adjoint
    chi = _outer_cutoff(models)

    operators = {
        "A0": (A0, A0h),
        "A1": (A1, A1h),
        "A0A1": (lambda v: A0(A1(v)), lambda v: A1h(A0h(v))),
        "A1A0A1A0_chi0": (lambda v: A1(A0(A1(A0(chi * v)))), lambda v: chi * A0h(A1h(A0h(A1h(v))))),
        "A0A1A0A1": (lambda v: A0(A1(A0(A1(v)))), lambda v: A1h(A0h(A1h(A0h(v))))),
    }
    row = GluingRow(models.h, models.m)
    for name, (fwd, bwd) in operators.items():
        est = power_norm(fwd, bwd, n, tol, max_iter, seed)
        row.norms[name] = est.value
        row.converged &= est.converged

    P = models.P
    direct = power_norm(lambda v: chi * P.apply_inverse(chi * v),
                        lambda v: chi * P.apply_inverse_adjoint(chi * v), n, tol, max_iter, seed)

    def glued(v):
        return chi * build_parametrix(models, iterated_correction(models, chi * v))

    def glued_adjoint(v):
        # 각 항의 수반을 역순으로
        w = chi * v
        F_h = (models.chi0 * models.P0.apply_inverse_adjoint(models.chi0_shift * w)
               + models.chi1 * models.P1.apply_inverse_adjoint(models.chi1_shift * w))
        a0, a1 = A0h(F_h), A1h(F_h)
        a0a1, a1a0 = A1h(a0), A0h(a1)
        return chi * (F_h - a0 - a1 + a0a1 + a1a0 - A1h(A0h(a1)) - A0h(A1h(a0)))

    param = power_norm(glued, glued_adjoint, n, tol, max_iter, seed)
    row.direct_norm = direct.value
    row.parametrix_norm = param.value
    row.converged &= direct.converged and param.converged
    row.residuals = identity_residuals(models, seed)
    if n <= ORACLE_MAX_N:
        row.oracle = dense_gluing_oracle(models)
    return row


def verify_gluing(profile: Profile, h_list: Optional[Sequence[float]] = None, lam: complex = 0.0,
                  m: Optional[int] = None, mu_star: float = GLUING_MU, potential: Optional[Potential] = None,
                  threads: int = 1, tol: float = 1e-6, seed: int = 0) -> GluingReport:
    """
    h 목록에서 접합 항등식, 나머지항 노름, 감쇠 적합을 검증

    Args:
        profile: double_well 프로파일
        h_list: 준고전 매개변수 목록 (기본 스윕)
        lam: 스펙트럼 매개변수
        m: 모드 (주어지면 모든 h 에 같은 m, 없으면 round(mu_star/h))
        mu_star: 지배적 껍질 각운동량
        potential: 퍼텐셜
        threads: h 병렬 수
        tol: 거듭제곱법 허용치
        seed: 시작 벡터 시드

    Returns:
        GluingReport: h 별 실패는 행에 기록된다
    """
    h_list = list(DEFAULT_H_LIST if h_list is None else h_list)

    def one(h: float) -> GluingRow:
        mode = int(m) if m is not None else int(round(mu_star / h))
        try:
            grid = Grid1D.for_h(profile.S, h)
            models = build_glued_models(profile, h, mode, lam, grid, potential)
            return gluing_norms(models, tol=tol, seed=seed)
        except LabError as e:
            lab_logger.log_error(f"접합 검증 실패 h={h}", category=LogCategory.GLUING, error=e.to_dict())
            return GluingRow(h, mode, converged=False, error=str(e))

    log_message(f"🔄 접합 검증: h {len(h_list)}개")
    rows = map_parallel(one, h_list, threads)

    decay: Dict[str, Optional[float]] = {}
    for name in ("A0", "A1", "A0A1", "A1A0A1A0_chi0", "A0A1A0A1"):
        points = [(r.h, r.norms[name]) for r in rows if r.error is None and r.norms.get(name, 0.0) > 0]
        try:
            decay[name] = -fit_scaling(points, fix_beta=0.0).alpha
        except DegenerateDesign:
            decay[name] = None

    report = GluingReport(rows, decay)
    if report.passed:
        log_message("✅ 접합 검증 통과")
    else:
        log_message(f"❌ 접합 검증 실패: {', '.join(report.failures)}")
    lab_logger.log_audit(LogCategory.GLUING, "접합 검증", passed=report.passed, decay=decay,
                         failures=report.failures)
    return report
