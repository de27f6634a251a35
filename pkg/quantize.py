# quantize.py - 각운동 모드별 P - λ 이산화와 위상공간 기호의 바이엘(Weyl) 양자화
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, norm as sparse_norm

from dynamics import ReducedFlow
from errors import (GridTooCoarse, AbsorberOverlap, UnsupportedSymbol, SingularError, InvalidParams)
from geometry import Profile, Potential, make_potential
from log_manager import lab_logger, LogCategory
from utils import smooth_step, smooth_window, even_window, erf_box, log_message

SIGMA_WINDOW = 2.0
POINTS_PER_H = 8
ABSORBER_FRACTION = 0.15
C_ABS = 1.0
KERNEL_REACH = 120          # h 단위
SIGMA_STEP = 2.0 * math.pi / (4 * KERNEL_REACH)
SINGULAR_COND = 1e14
RESIDUAL_TOL = 1e-10


# ---------------------------------------------------------------------- 격자
@dataclass(frozen=True)
class Grid1D:
    """[-S, S] 위의 균등 격자 (양 끝 디리클레)"""

    S: float
    n: int

    def __post_init__(self):
        if self.n < 2 or self.S <= 0:
            raise InvalidParams(f"격자 S={self.S}, n={self.n} 가 올바르지 않습니다", invariant="n ≥ 2, S > 0")

    @property
    def ds(self) -> float:
        return 2.0 * self.S / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.S, self.S, self.n)

    @classmethod
    def for_h(cls, S: float, h: float, points_per_h: int = POINTS_PER_H) -> "Grid1D":
        """Δs ≤ h/points_per_h 를 만족하는 가장 성긴 격자"""
        n = int(math.ceil(2.0 * S * points_per_h / h)) + 1
        return cls(float(S), n)

    def check(self, h: float):
        if self.ds > h / POINTS_PER_H * (1.0 + 1e-9):
            raise GridTooCoarse(f"Δs={self.ds:.3e} > h/{POINTS_PER_H}={h / POINTS_PER_H:.3e}",
                                invariant="Δs ≤ h/8", witness={"ds": self.ds, "h": h})

    def refined(self) -> "Grid1D":
        """간격을 절반으로 (기존 절점 유지)"""
        return Grid1D(self.S, 2 * self.n - 1)

    def to_dict(self) -> Dict[str, Any]:
        return {"S": self.S, "n": self.n, "ds": self.ds}


@dataclass(frozen=True)
class Absorber:
    """
    양 끝의 흡수 대각항 -i·C_abs·η(s)

    η 는 |s| = (1 - fraction)·S 에서 0, |s| = S 에서 1 로 오르는 ψ-램프.
    """

    fraction: float = ABSORBER_FRACTION
    strength: float = C_ABS
    enabled: bool = True

    def start(self, S: float) -> float:
        return (1.0 - self.fraction) * S

    def validate(self, S: float):
        if not self.enabled:
            return
        if not (0.0 < self.fraction < 1.0) or self.strength < 0:
            raise InvalidParams(f"흡수대 설정 fraction={self.fraction}, strength={self.strength}",
                                invariant="0 < fraction < 1, strength ≥ 0")
        if self.start(S) < 0.5 * S:
            raise AbsorberOverlap(f"흡수대 시작 {self.start(S):.3f} 가 관심 영역 [-S/2, S/2] 와 겹칩니다",
                                  invariant="absorber ⊂ {|s| > S/2}", witness=self.start(S))

    def eta(self, s, S: float) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if not self.enabled:
            return np.zeros_like(s)
        start = self.start(S)
        return smooth_step((np.abs(s) - start) / (S - start))

    def to_dict(self) -> Dict[str, Any]:
        return {"fraction": self.fraction, "strength": self.strength, "enabled": self.enabled}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "Absorber":
        if data is None:
            return cls()
        return cls(float(data.get("fraction", ABSORBER_FRACTION)), float(data.get("strength", C_ABS)),
                   bool(data.get("enabled", True)))


# ---------------------------------------------------------------------- 기호
@dataclass(frozen=True)
class SigmaProfile:
    """
    σ 방향 기호 인자 g(σ)

    kind:
        box: erf 상자 (가우시안으로 완화한 [lo, hi] 지시함수), 닫힌 형태의 커널
        outside: 1 - box
        callable: fn(σ), [-2, 2] 밖에서 0 이어야 함 (사다리꼴 적분)
    """

    kind: str = "box"
    lo: float = -1.0
    hi: float = 1.0
    width: float = 0.1
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def validate(self):
        if self.kind in ("box", "outside"):
            if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
                raise UnsupportedSymbol(f"σ 상자 [{self.lo}, {self.hi}] 가 유계가 아닙니다",
                                        invariant="bounded σ-support")
            if self.hi <= self.lo or self.width <= 0:
                raise InvalidParams(f"σ 상자 lo={self.lo}, hi={self.hi}, width={self.width}")
        elif self.kind == "callable":
            if self.fn is None:
                raise InvalidParams("callable σ 프로파일에 함수가 없습니다")
            edge = np.abs(np.asarray(self.fn(np.array([-SIGMA_WINDOW, SIGMA_WINDOW])), dtype=complex))
            if not np.all(np.isfinite(edge)) or np.max(edge) > 1e-8:
                raise UnsupportedSymbol(f"σ 기호가 |σ| = {SIGMA_WINDOW} 에서 사라지지 않습니다",
                                        invariant="σ-support ⊂ [-2, 2]", witness=edge.tolist())
        else:
            raise InvalidParams(f"알 수 없는 σ 프로파일: {self.kind}")

    def __call__(self, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        if self.kind == "box":
            return erf_box(sigma, self.lo, self.hi, self.width)
        if self.kind == "outside":
            return 1.0 - erf_box(sigma, self.lo, self.hi, self.width)
        return np.asarray(self.fn(sigma))

    def box_transform(self, x: np.ndarray, h: float) -> np.ndarray:
        """
        T(x) = ∫ e^{iσx/h} box(σ) dσ

        = e^{-(wx/2h)^2} (e^{i·hi·x/h} - e^{i·lo·x/h}) / (ix/h), T(0) = hi - lo
        """
        x = np.asarray(x, dtype=float)
        xi = x / h
        out = np.empty(x.shape, dtype=complex)
        zero = xi == 0
        out[zero] = self.hi - self.lo
        z = xi[~zero]
        out[~zero] = (np.exp(-(self.width * z / 2.0) ** 2)
                      * (np.exp(1j * self.hi * z) - np.exp(1j * self.lo * z)) / (1j * z))
        return out

    def box_reach(self, h: float, band_tol: float) -> float:
        """가우시안 인자가 band_tol·10^-2 아래로 떨어지는 |x|"""
        return 2.0 * h / self.width * math.sqrt(math.log(100.0 / band_tol))

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "callable":
            raise InvalidParams("callable σ 프로파일은 직렬화할 수 없습니다")
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "width": self.width}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SigmaProfile":
        return cls(data.get("kind", "box"), float(data.get("lo", -1.0)), float(data.get("hi", 1.0)),
                   float(data.get("width", 0.1)))


SymbolTerm = Tuple[Callable[[np.ndarray], np.ndarray], Optional[SigmaProfile]]


@dataclass
class Symbol:
    """
    위상공간 기호 a(s, σ)

    분리형 항들의 합 Σ f_i(s)·g_i(σ) (g_i 가 None 이면 σ 에 무관) 이거나,
    일반 함수 general(s, σ) 하나.
    """

    terms: List[SymbolTerm] = field(default_factory=list)
    general: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    real: bool = True

    @classmethod
    def spatial(cls, f: Callable[[np.ndarray], np.ndarray]) -> "Symbol":
        return cls(terms=[(f, None)])

    @classmethod
    def separable(cls, f: Callable[[np.ndarray], np.ndarray], g: SigmaProfile) -> "Symbol":
        return cls(terms=[(f, g)])

    @property
    def spatial_only(self) -> bool:
        return self.general is None and all(g is None for _, g in self.terms)

    def __call__(self, s, sigma) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if self.general is not None:
            return np.asarray(self.general(s, sigma))
        total = np.zeros(np.broadcast(s, sigma).shape, dtype=complex if not self.real else float)
        for f, g in self.terms:
            total = total + f(s) * (1.0 if g is None else g(sigma))
        return total


# ---------------------------------------------------------------------- 양자화
@dataclass
class QuantizedSymbol:
    """격자 위 바이엘 양자화 행렬 (띠 절단)"""

    symbol: Symbol
    h: float
    grid: Grid1D
    band_tol: float
    band: int
    matrix: sp.csr_matrix

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_self_adjoint(self, tol: float = 1e-12) -> bool:
        diff = self.matrix - self.matrix.getH()
        if diff.nnz == 0:
            return True
        return float(np.max(np.abs(diff.data))) <= tol


def _offset_band(values: np.ndarray, band_tol: float) -> int:
    """|T_d| > band_tol·max|T| 인 마지막 d"""
    mags = np.abs(values)
    peak = float(np.max(mags)) if mags.size else 0.0
    if peak == 0.0:
        return 0
    keep = np.nonzero(mags > band_tol * peak)[0]
    return int(keep[-1]) if keep.size else 0


def _callable_transform(g: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    """[-2, 2] 위 사다리꼴 적분으로 T(x) = ∫ e^{iσx/h} g(σ) dσ"""
    n_sigma = int(math.ceil(2.0 * SIGMA_WINDOW / SIGMA_STEP)) + 1
    sigma = np.linspace(-SIGMA_WINDOW, SIGMA_WINDOW, n_sigma)
    weights = np.full(n_sigma, sigma[1] - sigma[0])
    weights[[0, -1]] *= 0.5
    gv = np.asarray(g(sigma), dtype=complex) * weights
    return np.exp(1j * np.outer(x, sigma) / h) @ gv


def _kernel_offsets(g: SigmaProfile, h: float, grid: Grid1D, band_tol: float) -> np.ndarray:
    """d = 0, 1, ... 에 대한 (Δs/2πh)·T(dΔs) (띠 절단 전)"""
    if g.kind == "callable":
        reach = KERNEL_REACH * h
    else:
        reach = g.box_reach(h, band_tol)
    d_max = min(grid.n - 1, int(math.ceil(reach / grid.ds)))
    x = np.arange(d_max + 1) * grid.ds
    if g.kind == "callable":
        values = _callable_transform(g.fn, x, h)
    else:
        values = g.box_transform(x, h)
    return grid.ds / (2.0 * math.pi * h) * values


def _assemble_separable(f: Callable[[np.ndarray], np.ndarray], kernel: np.ndarray, band: int,
                        grid: Grid1D, sign: float = 1.0):
    """K_jk = kernel_{j-k}·f((s_j + s_k)/2), 음의 오프셋은 켤레"""
    s = grid.nodes
    n = grid.n
    rows, cols, vals = [], [], []
    for d in range(-band, band + 1):
        j = np.arange(max(0, d), min(n, n + d))
        k = j - d
        fm = np.asarray(f(0.5 * (s[j] + s[k])), dtype=float)
        nz = fm != 0.0
        if not np.any(nz):
            continue
        t = kernel[d] if d >= 0 else np.conj(kernel[-d])
        rows.append(j[nz])
        cols.append(k[nz])
        vals.append(sign * t * fm[nz])
    return rows, cols, vals


def _assemble_general(symbol: Symbol, h: float, grid: Grid1D, band_tol: float):
    """비분리 기호: 오프셋마다 중점에서 σ-적분"""
    s = grid.nodes
    n = grid.n
    n_sigma = int(math.ceil(2.0 * SIGMA_WINDOW / SIGMA_STEP)) + 1
    sigma = np.linspace(-SIGMA_WINDOW, SIGMA_WINDOW, n_sigma)
    weights = np.full(n_sigma, sigma[1] - sigma[0])
    weights[[0, -1]] *= 0.5
    d_max = min(n - 1, int(math.ceil(KERNEL_REACH * h / grid.ds)))
    scale = grid.ds / (2.0 * math.pi * h)

    edge = np.abs(symbol.general(s[:, None], np.array([[-SIGMA_WINDOW, SIGMA_WINDOW]])))
    if np.max(edge) > 1e-8:
        raise UnsupportedSymbol(f"기호가 |σ| = {SIGMA_WINDOW} 에서 사라지지 않습니다",
                                invariant="σ-support ⊂ [-2, 2]", witness=float(np.max(edge)))

    blocks = {}
    for d in range(0, d_max + 1):
        j = np.arange(d, n)
        k = j - d
        mids = 0.5 * (s[j] + s[k])
        a = np.asarray(symbol.general(mids[:, None], sigma[None, :]), dtype=complex)
        phase = np.exp(1j * sigma * (d * grid.ds) / h)
        blocks[d] = (j, k, scale * (a @ (phase * weights)))
        if d > 0:
            blocks[-d] = (k, j, scale * (a @ (np.conj(phase) * weights)))

    peak = max(float(np.max(np.abs(v))) if v.size else 0.0 for _, _, v in blocks.values())
    rows, cols, vals = [], [], []
    band = 0
    for d, (j, k, v) in sorted(blocks.items()):
        keep = np.abs(v) > band_tol * peak
        if not np.any(keep):
            continue
        band = max(band, abs(d))
        rows.append(j[keep])
        cols.append(k[keep])
        vals.append(v[keep])
    return rows, cols, vals, band


def quantize_symbol(symbol: Symbol, h: float, grid: Grid1D, band_tol: float = 1e-10) -> QuantizedSymbol:
    """
    바이엘 양자화 K(s_j, s_k) = (Δs/2πh) ∫ e^{iσ(s_j-s_k)/h} a((s_j+s_k)/2, σ) dσ

    Args:
        symbol: 기호 a(s, σ)
        h: 준고전 매개변수
        grid: 격자
        band_tol: 띠 절단 허용치 (최대 성분 대비)

    Returns:
        QuantizedSymbol: CSR 행렬과 띠 폭
    """
    if not (0.0 < band_tol <= 1e-6):
        raise InvalidParams(f"band_tol={band_tol} 은 (0, 1e-6] 범위여야 합니다", invariant="band_tol")
    grid.check(h)
    n = grid.n
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    band = 0

    if symbol.general is not None:
        rows, cols, vals, band = _assemble_general(symbol, h, grid, band_tol)
    else:
        s = grid.nodes
        for f, g in symbol.terms:
            if g is None or g.kind == "outside":
                fv = np.asarray(f(s), dtype=float)
                idx = np.nonzero(fv)[0]
                rows.append(idx)
                cols.append(idx)
                vals.append(fv[idx].astype(complex))
                if g is None:
                    continue
            g.validate()
            kernel = _kernel_offsets(g, h, grid, band_tol)
            term_band = _offset_band(kernel, band_tol)
            band = max(band, term_band)
            r, c, v = _assemble_separable(f, kernel, term_band, grid,
                                          sign=-1.0 if g.kind == "outside" else 1.0)
            rows += r
            cols += c
            vals += v

    if rows:
        matrix = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(n, n), dtype=complex).tocsr()
        matrix.sum_duplicates()
    else:
        matrix = sp.csr_matrix((n, n), dtype=complex)
    return QuantizedSymbol(symbol, h, grid, band_tol, band, matrix)


# ---------------------------------------------------------------------- 절단 연산자
@dataclass
class CutoffSpec:
    """
    회전 불변 절단 Op(a)·b(hD_θ)

    a(s, σ) = χ(s)·g(σ): χ 는 plateau 에서 1, support 밖에서 0 인 창 (mirrored 이면 |s| 에 적용),
    g 는 선택적 σ 프로파일. b(μ) 는 mu_plateau/mu_support 로 정한 창 (없으면 1).
    """

    plateau: Tuple[float, float]
    support: Tuple[float, float]
    sigma: Optional[SigmaProfile] = None
    mu_plateau: Optional[Tuple[float, float]] = None
    mu_support: Optional[Tuple[float, float]] = None
    mirrored: bool = False

    def spatial(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        x = np.abs(s) if self.mirrored else s
        return smooth_window(x, self.plateau, self.support)

    def mode_factor(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if self.mu_plateau is None:
            return np.ones_like(mu)
        return smooth_window(mu, self.mu_plateau, self.mu_support)

    @property
    def mode_factor_even(self) -> bool:
        if self.mu_plateau is None:
            return True
        return (np.isclose(self.mu_plateau[0], -self.mu_plateau[1])
                and np.isclose(self.mu_support[0], -self.mu_support[1]))

    @property
    def mu_extent(self) -> Optional[float]:
        if self.mu_support is None:
            return None
        return float(max(abs(self.mu_support[0]), abs(self.mu_support[1])))

    @property
    def s_extent(self) -> float:
        return float(max(abs(self.support[0]), abs(self.support[1])))

    def symbol(self) -> Symbol:
        if self.sigma is None:
            return Symbol.spatial(self.spatial)
        return Symbol.separable(self.spatial, self.sigma)

    def value(self, s, sigma, mu) -> np.ndarray:
        """전체 기호 χ(s)·g(σ)·b(μ)"""
        g = 1.0 if self.sigma is None else self.sigma(sigma)
        return self.spatial(s) * g * self.mode_factor(mu)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "plateau": list(self.plateau),
            "support": list(self.support),
            "sigma": self.sigma.to_dict() if self.sigma is not None else None,
            "mu_plateau": list(self.mu_plateau) if self.mu_plateau is not None else None,
            "mu_support": list(self.mu_support) if self.mu_support is not None else None,
            "mirrored": self.mirrored,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CutoffSpec":
        def pair(value):
            if value is None:
                return None
            if isinstance(value, (int, float)):
                return (-float(value), float(value))
            return (float(value[0]), float(value[1]))

        try:
            return cls(
                plateau=pair(data["plateau"]),
                support=pair(data["support"]),
                sigma=SigmaProfile.from_dict(data["sigma"]) if data.get("sigma") else None,
                mu_plateau=pair(data.get("mu_plateau")),
                mu_support=pair(data.get("mu_support")),
                mirrored=bool(data.get("mirrored", False)),
            )
        except KeyError as e:
            raise InvalidParams(f"절단 설정에 키가 없습니다: {e.args[0]}", invariant=str(e.args[0]))


@dataclass
class CutoffOperator:
    """모드 m 마다 b(hm)·Weyl(a)"""

    spec: CutoffSpec
    h: float
    base: QuantizedSymbol
    weights: Dict[int, float]

    @property
    def active_modes(self) -> List[int]:
        return sorted(self.weights)

    def matrix(self, m: int) -> sp.csr_matrix:
        weight = self.weights.get(int(m), 0.0)
        if weight == 0.0:
            return sp.csr_matrix(self.base.matrix.shape, dtype=complex)
        return weight * self.base.matrix


def build_cutoff(spec: CutoffSpec, h: float, modes: Iterable[int], grid: Grid1D,
                 band_tol: float = 1e-10) -> CutoffOperator:
    """
    모드별 절단 연산자

    Args:
        spec: 절단 기호
        h: 준고전 매개변수
        modes: 고려할 모드 범위
        grid: 격자
        band_tol: 띠 절단 허용치

    Returns:
        CutoffOperator: b(hm) = 0 인 모드는 빠진다
    """
    base = quantize_symbol(spec.symbol(), h, grid, band_tol)
    weights = {}
    for m in modes:
        b = float(spec.mode_factor(h * m))
        if b != 0.0:
            weights[int(m)] = b
    return CutoffOperator(spec, h, base, weights)


# ---------------------------------------------------------------------- 흡수 장벽
@dataclass
class BarrierSpec:
    """
    σ 의존 장벽 w = g^2, g(s, σ) = χ_s(s)·χ_σ(σ)

    양자화는 W = (G·ζ)^H (G·ζ): G = Weyl(g), ζ 는 공간 창. W 는 정확히 양반정치이고
    supp ζ 안에 정확히 지지된다.
    """

    chi_plateau: float = 0.5
    chi_support: float = 0.9
    zeta_plateau: float = 0.9
    zeta_support: float = 0.98
    sigma_lo: float = -1.6
    sigma_hi: float = 0.45
    sigma_width: float = 0.1

    @classmethod
    def for_gluing(cls, s0: float) -> "BarrierSpec":
        """접합 모형용 좁은 장벽 (s0 = 2 기준 값을 비례 조정)"""
        k = s0 / 2.0
        return cls(chi_plateau=0.25 * k, chi_support=0.45 * k, zeta_plateau=0.45 * k, zeta_support=0.55 * k)

    @property
    def sigma_profile(self) -> SigmaProfile:
        return SigmaProfile("box", self.sigma_lo, self.sigma_hi, self.sigma_width)

    def chi_s(self, s) -> np.ndarray:
        return even_window(s, self.chi_plateau, self.chi_support)

    def zeta(self, s) -> np.ndarray:
        return even_window(s, self.zeta_plateau, self.zeta_support)

    def g(self, s, sigma) -> np.ndarray:
        return self.chi_s(s) * self.sigma_profile(sigma)

    def w(self, s, sigma) -> np.ndarray:
        return self.g(s, sigma) ** 2

    def quantize(self, h: float, grid: Grid1D, band_tol: float = 1e-10) -> sp.csr_matrix:
        G = quantize_symbol(Symbol.separable(self.chi_s, self.sigma_profile), h, grid, band_tol).matrix
        Gz = G @ sp.diags(self.zeta(grid.nodes).astype(complex))
        W = (Gz.getH() @ Gz).tocsr()
        W.sum_duplicates()
        return W

    def check_clauses(self, flow: ReducedFlow, s0: float, n_samples: int = 201) -> Dict[str, Dict[str, Any]]:
        """
        장벽 가설 세 가지를 껍질 표본으로 확인

        Returns:
            dict: unit_on_band, support_inside, corridor_clear 각각 {passed, value}
        """
        E = flow.energy
        v0 = float(flow.potential.V(0.0))
        sig = np.linspace(-math.sqrt(max(E - v0, 0.0)), 0.0, n_samples)
        unit = float(np.min(self.w(np.zeros_like(sig), sig)))

        extent = max(self.chi_support, self.zeta_support)

        mu_c = float(flow.profile.a(s0)) * math.sqrt(max(E - float(flow.potential.V(s0)), 0.0))
        s_corr = np.linspace(-s0, s0, n_samples)[1:-1]
        sig_corr = np.array([flow.shell_sigma(s, mu_c, +1.0) for s in s_corr])
        corridor = float(np.max(self.w(s_corr, sig_corr)))

        clauses = {
            "unit_on_band": {"passed": unit >= 1.0 - 1e-6, "value": unit},
            "support_inside": {"passed": extent < 0.5 * s0, "value": extent},
            "corridor_clear": {"passed": corridor <= 1e-6, "value": corridor},
        }
        lab_logger.log_audit(LogCategory.QUANTIZE, "장벽 가설 검사", s0=s0, mu_corridor=mu_c, **clauses)
        return clauses

    def to_dict(self) -> Dict[str, Any]:
        return {
            "chi_plateau": self.chi_plateau, "chi_support": self.chi_support,
            "zeta_plateau": self.zeta_plateau, "zeta_support": self.zeta_support,
            "sigma_lo": self.sigma_lo, "sigma_hi": self.sigma_hi, "sigma_width": self.sigma_width,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BarrierSpec":
        return cls(**{key: float(value) for key, value in data.items()})


# ---------------------------------------------------------------------- 모드 연산자
@dataclass
class ModeOperator:
    """
    모드 m 의 h^2 L_m + V - 1 - iC_abs·η - iW - λ (대칭화 형태)

    분해는 처음 풀 때 한 번만 만들고, 스레드 사이에서 공유하지 않는다.
    """

    h: float
    m: int
    lam: complex
    matrix: sp.csc_matrix
    grid: Optional[Grid1D] = None
    absorber: Optional[Absorber] = None
    _lu: Any = field(default=None, repr=False, compare=False)

    @classmethod
    def from_matrix(cls, matrix, h: float = 1.0, m: int = 0, lam: complex = 0.0) -> "ModeOperator":
        return cls(h, m, complex(lam), sp.csc_matrix(matrix, dtype=complex))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def factorize(self):
        if self._lu is not None:
            return self._lu
        try:
            lu = splu(self.matrix, permc_spec="NATURAL")
        except RuntimeError as e:
            lab_logger.log_error(f"특이 행렬 (m={self.m})", category=LogCategory.QUANTIZE,
                                 h=self.h, lam=self.lam, reason=str(e))
            raise SingularError(f"모드 m={self.m} 행렬이 특이합니다: {e}", invariant="invertible",
                                witness={"h": self.h, "m": self.m, "lam": self.lam})
        self._check_condition(lu)
        self._lu = lu
        return lu

    def _check_condition(self, lu):
        rng = np.random.default_rng(12345)
        trial = rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
        y = lu.solve(trial)
        if not np.all(np.isfinite(y)):
            raise SingularError(f"모드 m={self.m} 풀이가 유한하지 않습니다", invariant="invertible")
        cond = np.linalg.norm(y) / np.linalg.norm(trial) * float(sparse_norm(self.matrix, 1))
        if cond > SINGULAR_COND:
            raise SingularError(f"모드 m={self.m} 조건수 추정 {cond:.2e} > {SINGULAR_COND:.0e}",
                                invariant="invertible", witness=cond)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def apply_inverse(self, rhs: np.ndarray) -> np.ndarray:
        return self.factorize().solve(np.asarray(rhs, dtype=complex))

    def apply_inverse_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        return self.factorize().solve(np.asarray(rhs, dtype=complex), trans="H")


def absorber_part(grid: Grid1D, absorber: Absorber) -> sp.dia_matrix:
    """-i·C_abs·η(s) 대각 행렬"""
    return sp.diags(-1j * absorber.strength * absorber.eta(grid.nodes, grid.S))


def second_difference(grid: Grid1D) -> sp.csc_matrix:
    """3점 이차 차분 D2 (디리클레)"""
    n = grid.n
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    return (sp.diags([off, main, off], [-1, 0, 1]) / grid.ds ** 2).tocsc()


def build_mode_operator(profile: Profile, potential: Optional[Potential], h: float, m: int,
                        lam: complex, grid: Grid1D, absorber: Optional[Absorber] = None,
                        barrier: Union[None, BarrierSpec, sp.spmatrix] = None,
                        band_tol: float = 1e-10) -> ModeOperator:
    """
    -h^2 D2 + diag(h^2 m^2/a^2 - h^2 q_a + V - 1 - iC_abs·η) - iW - λ

    Args:
        profile: 휨 함수 (격자 S 는 profile.S 이하)
        potential: 퍼텐셜 (None 이면 0)
        h: 준고전 매개변수 (0, 1)
        m: 각운동 모드
        lam: 스펙트럼 매개변수
        grid: 격자 (Δs ≤ h/8)
        absorber: 흡수대 (None 이면 기본값)
        barrier: 장벽 설정 또는 미리 양자화한 W 행렬

    Returns:
        ModeOperator
    """
    if not (0.0 < h < 1.0):
        raise InvalidParams(f"h={h} 는 (0, 1) 안에 있어야 합니다", invariant="0 < h < 1")
    grid.check(h)
    if grid.S > profile.S * (1.0 + 1e-12):
        raise InvalidParams(f"격자 S={grid.S} 가 프로파일 영역 S={profile.S} 를 넘습니다", invariant="domain")
    absorber = Absorber() if absorber is None else absorber
    absorber.validate(grid.S)
    potential = potential if potential is not None else make_potential("zero")

    s = grid.nodes
    a = profile.a(s)
    diag = (h * m) ** 2 / a ** 2 - h ** 2 * profile.q_a(s) + potential.V(s) - 1.0 - complex(lam)
    matrix = (-h ** 2 * second_difference(grid) + sp.diags(diag.astype(complex))).tocsc()
    if absorber.enabled:
        matrix = matrix + absorber_part(grid, absorber)

    if barrier is not None:
        W = barrier.quantize(h, grid, band_tol) if isinstance(barrier, BarrierSpec) else barrier
        matrix = matrix - 1j * W
    return ModeOperator(h, int(m), complex(lam), sp.csc_matrix(matrix, dtype=complex), grid, absorber)


@dataclass
class SolveResult:
    u: np.ndarray
    residual: float

    @property
    def ok(self) -> bool:
        return self.residual <= RESIDUAL_TOL


def solve(op: ModeOperator, rhs: np.ndarray) -> SolveResult:
    """(P - λ)u = rhs 를 풀고 상대 잔차를 보고"""
    rhs = np.asarray(rhs, dtype=complex)
    u = op.apply_inverse(rhs)
    if not np.all(np.isfinite(u)):
        raise SingularError(f"모드 m={op.m} 풀이가 유한하지 않습니다", invariant="invertible")
    scale = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(op.apply(u) - rhs) / scale) if scale > 0 else 0.0
    if residual > RESIDUAL_TOL:
        log_message(f"⚠️ 모드 m={op.m} 잔차 {residual:.2e} > {RESIDUAL_TOL:.0e}", level=2)
    return SolveResult(u, residual)


def dump_triplets(matrix: sp.spmatrix, path: str):
    """
    디버그용 삼중항 텍스트: 첫 줄 '# n_rows n_cols nnz', 이후 'i j re im'
    """
    coo = sp.coo_matrix(matrix)
    data = np.column_stack([coo.row, coo.col, coo.data.real, coo.data.imag]) if coo.nnz else np.zeros((0, 4))
    header = f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"
    np.savetxt(path, data, fmt=["%d", "%d", "%.17e", "%.17e"], header=header)
