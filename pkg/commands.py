# commands.py - 명령줄 명령 등록과 실행 (flow, classify, escape, resolve, sweep, glue, preset-list)
from dataclasses import asdict
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

from config import RunConfig, COMMANDS
from dynamics import ReducedFlow, PhasePoint, Stability, ClosedOrbit
from errors import ConfigError, PreconditionError, InvalidParams
from escape import (nested_regions, iterate_regions, build_escape_function, verify_escape_function,
                    commutator_decomposition)
from geometry import profile_from_dict, potential_from_dict, make_profile, audit_profile
from gluing import verify_gluing, GLUING_MU
from log_manager import lab_logger
from quantize import BarrierSpec, CutoffSpec
from resolvent_lab import (ExperimentSpec, preset, preset_list, run_sweep, resolve_at, ratio_trend,
                           convergence_audit, propagation_contrast, outgoing_audit, mode_operator_at)
from results_manager import ResultsManager
from utils import log_message

# 명령 이름 → 처리 함수 (RunConfig, ResultsManager) → 성공 여부
Handler = Callable[[RunConfig, ResultsManager], bool]
REGISTRY: Dict[str, Handler] = {}
CLAIMS: Dict[str, str] = {
    "flow": "reduced geodesic flow conserves the shell energy",
    "classify": "latitude orbit census and point classification on the energy shell",
    "escape": "escape function is 1 near the trapped set and decreases strictly along its outgoing tail",
    "glue": "parametrix from two barrier models reproduces the resolvent with rapidly decaying remainders",
    "preset-list": "available experiments",
}


def command(name: str):
    """처리 함수를 명령 이름으로 등록"""
    if name not in COMMANDS:
        raise ValueError(f"알 수 없는 명령: {name}")

    def decorator(fn: Handler) -> Handler:
        REGISTRY[name] = fn
        return fn

    return decorator


def _flow_from_body(body: Dict[str, Any]) -> ReducedFlow:
    try:
        profile = profile_from_dict(body["profile"])
        potential = potential_from_dict(body.get("potential"))
    except InvalidParams as e:
        raise ConfigError(f"profile 설정 오류: {e.message}", invariant=e.invariant or "profile")
    return ReducedFlow(profile, potential, energy=float(body.get("energy", 1.0)))


def _points(body: Dict[str, Any], flow: ReducedFlow) -> List[PhasePoint]:
    """[s, σ, μ] 목록 또는 {"on_shell": true, s, mu, sign} 객체"""
    points = []
    for raw in body.get("points", []):
        if isinstance(raw, dict) and raw.get("on_shell"):
            points.append(flow.on_shell(float(raw["s"]), float(raw["mu"]), float(raw.get("sign", 1.0))))
        elif isinstance(raw, (list, tuple)) and len(raw) == 3:
            points.append(PhasePoint(float(raw[0]), float(raw[1]), float(raw[2])))
        else:
            raise ConfigError(f"점 형식 오류: {raw} ([s, sigma, mu] 또는 on_shell 객체)", invariant="points")
    return points


def _spec_from_body(run_config: RunConfig) -> ExperimentSpec:
    body = run_config.body
    if "preset" in body:
        spec = preset(str(body["preset"]), audit=False)
    elif "experiment" in body:
        try:
            spec = ExperimentSpec.from_dict(body["experiment"])
        except InvalidParams as e:
            raise ConfigError(f"experiment 설정 오류: {e.message}", invariant=e.invariant or "experiment")
    else:
        raise ConfigError("필수 키가 없습니다: preset 또는 experiment", invariant="preset")
    if "h_list" in body:
        spec.h_list = [float(h) for h in body["h_list"]]
    spec.seed = run_config.seed
    return spec


@command("flow")
def cmd_flow(run_config: RunConfig, results: ResultsManager) -> bool:
    """점마다 궤적을 적분하고 에너지 변동을 보고"""
    run_config.require("profile")
    body = run_config.body
    flow = _flow_from_body(body)
    T = float(body.get("T", 20.0))
    audit = audit_profile(flow.profile, seed=run_config.seed)
    summary = []
    for k, point in enumerate(_points(body, flow)):
        traj = flow.flow(point, T, dt=body.get("dt"), check_drift=False)
        ok = traj.energy_drift <= traj.tolerance
        summary.append({"index": k, "s": point.s, "sigma": point.sigma, "mu": point.mu,
                        "energy_drift": traj.energy_drift, "exit_reason": traj.exit_reason.value,
                        "passed": ok})
        results.write_csv(f"flow_{k:03d}", traj.to_rows(), ["t", "s", "sigma"])
        log_message(f"{'✅' if ok else '❌'} 점 {k}: 에너지 변동 {traj.energy_drift:.2e}")
    passed = audit.passed and all(row["passed"] for row in summary)
    results.write_json("flow", {"profile_audit": asdict(audit), "trajectories": summary}, passed=passed)
    return passed


@command("classify")
def cmd_classify(run_config: RunConfig, results: ResultsManager) -> bool:
    """위도 궤도 목록과 주어진 점들의 분류"""
    run_config.require("profile")
    body = run_config.body
    flow = _flow_from_body(body)
    window = tuple(body["mu_window"]) if "mu_window" in body else None
    orbits = flow.classify_orbits(mu_window=window)
    barrier = BarrierSpec.from_dict(body["barrier"]) if "barrier" in body else None
    horizon = float(body.get("horizon", 200.0))

    orbit_rows = [{"orbit_id": o.orbit_id, "s_star": o.s_star, "mu": o.mu, "stability": o.stability.value,
                   "curvature": o.curvature, "continuum": o.continuum} for o in orbits]
    point_rows = []
    for point in _points(body, flow):
        pc = flow.classify_point(point, barrier.w if barrier else None, horizon)
        point_rows.append({"s": point.s, "sigma": point.sigma, "mu": point.mu, "label": pc.label.value,
                           "orbit_id": pc.orbit_id, "forward_limit": pc.forward_limit, "reason": pc.reason})
    census = {st.value: sum(1 for o in orbits if o.stability is st) for st in Stability}
    log_message(f"📋 궤도 {len(orbits)}개: {census}")
    results.write_csv("orbits", orbit_rows, ["orbit_id", "s_star", "mu", "stability", "curvature", "continuum"])
    if point_rows:
        results.write_csv("points", point_rows,
                          ["s", "sigma", "mu", "label", "orbit_id", "forward_limit", "reason"])
    results.write_json("classify", {"orbits": orbit_rows, "census": census, "points": point_rows})
    return True


def _pick_orbits(flow: ReducedFlow, body: Dict[str, Any]) -> List[ClosedOrbit]:
    """body.orbit = {s, mu} 에 가장 가까운 궤도 (기본: μ > 0 인 첫 쌍곡 궤도)"""
    orbits = [o for o in flow.classify_orbits() if not o.continuum]
    if not orbits:
        raise PreconditionError("닫힌 궤도가 없습니다", invariant="Γ nonempty")
    wanted = body.get("orbit")
    if wanted is None:
        hyperbolic = [o for o in orbits if o.stability is Stability.HYPERBOLIC and o.mu > 0]
        chosen = hyperbolic[0] if hyperbolic else orbits[0]
    else:
        chosen = min(orbits, key=lambda o: (o.s_star - float(wanted.get("s", 0.0))) ** 2
                     + (o.mu - float(wanted.get("mu", 1.0))) ** 2)
    return [chosen]


@command("escape")
def cmd_escape(run_config: RunConfig, results: ResultsManager) -> bool:
    """탈출 함수를 만들고 검증, q 격자와 보고서 저장"""
    run_config.require("profile")
    body = run_config.body
    flow = _flow_from_body(body)
    orbits = _pick_orbits(flow, body)
    regions = nested_regions(orbits[0], **body.get("regions", {}))
    n_samples = int(body.get("n_samples", 1000))

    steps = int(body.get("iterations", 1))
    passed = True
    reports = []
    for step in range(steps):
        q = build_escape_function(flow, orbits, regions, floor=body.get("floor"))
        report = verify_escape_function(q, n_samples=n_samples, seed=run_config.seed)
        decomposition = commutator_decomposition(q)
        ok = report.passed and decomposition.passed
        passed &= ok
        reports.append({"step": step, "report": report.to_dict(),
                        "commutator_residual": decomposition.residual, "passed": ok})
        results.write_csv(f"escape_q_{step}", q.grid_rows(), ["s", "sigma", "q", "Hp_q"])
        if ok:
            log_message(f"✅ 탈출 함수 단계 {step} 검증 통과")
        else:
            log_message(f"❌ 탈출 함수 단계 {step} 실패: {', '.join(report.failures) or 'commutator'}")
        if step + 1 < steps:
            regions = iterate_regions(regions, q)
    results.write_json("escape", {"orbit": orbits[0].orbit_id, "steps": reports}, passed=passed)
    return passed


@command("resolve")
def cmd_resolve(run_config: RunConfig, results: ResultsManager) -> bool:
    """h 하나에서 절단 레졸벤트 노름"""
    run_config.require("h")
    spec = _spec_from_body(run_config)
    results.claim = spec.claim
    results.anchor = spec.anchor
    row = resolve_at(spec, float(run_config.body["h"]), run_config.threads)
    results.write_json("resolve", {"spec": spec.to_dict(), "row": row.to_dict()}, passed=row.converged)
    results.write_csv("resolve", [row.to_dict()])
    if row.error is None:
        log_message(f"✅ h={row.h}: norm={row.norm:.6e}, m*={row.m_star}")
    if run_config.body.get("dump_operator") and row.m_star is not None:
        op = mode_operator_at(spec, row.h, row.m_star, row.lam)
        results.write_triplets(f"operator_m{row.m_star}", op.matrix)
    return row.converged and row.error is None


def _outgoing_cutoffs(raw: Dict[str, Any], spec: ExperimentSpec) -> Tuple[CutoffSpec, Dict[str, CutoffSpec]]:
    """body.outgoing = {"B": 절단, "A": {이름: 절단}} (A 기본: 프리셋의 A)"""
    try:
        B = CutoffSpec.from_dict(raw["B"])
        A_specs = {str(name): CutoffSpec.from_dict(value) for name, value in raw.get("A", {}).items()}
    except KeyError as e:
        raise ConfigError(f"outgoing 설정에 필수 키가 없습니다: {e}", invariant="outgoing")
    except InvalidParams as e:
        raise ConfigError(f"outgoing 설정 오류: {e.message}", invariant=e.invariant or "outgoing")
    return B, A_specs or {"A": spec.A}


@command("sweep")
def cmd_sweep(run_config: RunConfig, results: ResultsManager) -> bool:
    """h-스윕, 척도 적합, 선택적 부가 검사"""
    spec = _spec_from_body(run_config)
    results.claim = spec.claim
    results.anchor = spec.anchor
    body = run_config.body
    result = run_sweep(spec, run_config.threads, run_config.seed, run_config.force)
    passed = result.passed
    data: Dict[str, Any] = {"sweep": result.to_dict()}
    if result.contrast is not None:
        log_message(f"📋 비율 추세 (대비 {spec.contrast}): {result.contrast['ratio_trend']['ratios']}")

    if "compare" in body:
        other = preset(str(body["compare"]), audit=False)
        other.h_list = list(spec.h_list)
        other_result = run_sweep(other, run_config.threads, run_config.seed, run_config.force)
        trend = ratio_trend(result, other_result)
        data["compare"] = {"sweep": other_result.to_dict(), "ratio_trend": trend}
        passed &= bool(trend["strictly_increasing"])
    audits = body.get("audits", [])
    if "convergence" in audits:
        report = convergence_audit(spec, threads=run_config.threads)
        data["convergence"] = report.to_dict()
        passed &= report.passed
    if "propagation" in audits:
        report = propagation_contrast(spec.profile, spec.potential, max(spec.h_list))
        data["propagation"] = report.to_dict()
        passed &= report.passed
    if "outgoing" in body:
        B, A_specs = _outgoing_cutoffs(body["outgoing"], spec)
        report = outgoing_audit(spec, A_specs, B, run_config.threads)
        data["outgoing"] = report.to_dict()
        passed &= report.passed

    results.write_csv("sweep", [r.to_dict() for r in result.rows],
                      ["h", "norm", "m_star", "iterations", "residual", "converged", "lam_re", "lam_im",
                       "n_modes", "sentinel_ok", "error"], preset=spec.name)
    results.write_curve("sweep_curve", result.curve(), preset=spec.name)
    results.write_json("sweep", data, preset=spec.name, passed=passed)
    if result.fit is not None:
        log_message(f"📋 적합: α={result.fit.alpha:.3f}, β={result.fit.beta:.3f} "
                    f"(β 고정 α={result.fit_fixed.alpha:.3f})")
    log_message(f"{'✅' if passed else '❌'} {spec.name}: {result.prediction_check.get('detail', '')}")
    return passed


@command("glue")
def cmd_glue(run_config: RunConfig, results: ResultsManager) -> bool:
    """접합 파라메트릭스 항등식과 나머지항 감쇠"""
    body = run_config.body
    profile = profile_from_dict(body["profile"]) if "profile" in body else make_profile("double_well")
    lam = body.get("lam", 0.0)
    lam = complex(lam[0], lam[1]) if isinstance(lam, (list, tuple)) else complex(lam)
    report = verify_gluing(profile, body.get("h_list"), lam, body.get("m"), float(body.get("mu_star", GLUING_MU)),
                           threads=run_config.threads, seed=run_config.seed)
    rows = []
    for r in report.rows:
        row = {"h": r.h, "m": r.m, "parametrix_norm": r.parametrix_norm, "direct_norm": r.direct_norm,
               "discrepancy": r.discrepancy, "passed": r.passed, "error": r.error}
        row.update({f"norm_{k}": v for k, v in r.norms.items()})
        row.update({f"residual_{k}": v for k, v in r.residuals.items()})
        rows.append(row)
    fieldnames = list(rows[0].keys()) if rows else None
    for row in rows:
        for key in row:
            if fieldnames is not None and key not in fieldnames:
                fieldnames.append(key)
    results.write_csv("glue", rows, fieldnames)
    for name in ("A0A1", "A0A1A0A1"):
        points = [(np.log(1.0 / r.h), np.log(r.norms[name])) for r in report.rows
                  if r.error is None and r.norms.get(name, 0.0) > 0]
        results.write_curve(f"glue_{name}", points, y_label=f"log‖{name}‖")
    results.write_json("glue", report.to_dict(), passed=report.passed)
    return report.passed


@command("preset-list")
def cmd_preset_list(run_config: RunConfig, results: ResultsManager) -> bool:
    items = preset_list()
    for item in items:
        alias = f" (= {item['alias_of']})" if "alias_of" in item else ""
        log_message(f"📋 {item['name']}{alias} [{item['prediction']}] {item['claim']}")
    results.write_json("presets", items)
    return True


def dispatch(run_config: RunConfig) -> Tuple[bool, List[str]]:
    """
    등록된 명령 실행

    Returns:
        (성공 여부, 저장된 파일 목록). 설정 오류는 ConfigError 로 올라간다.
    """
    handler = REGISTRY.get(run_config.command)
    if handler is None:
        raise ConfigError(f"등록되지 않은 명령: {run_config.command}", invariant="command")
    results = ResultsManager(run_config.output_dir, run_config, CLAIMS.get(run_config.command, ""))
    lab_logger.log_cli(f"명령 시작: {run_config.command}", config_hash=run_config.config_hash(),
                       seed=run_config.seed, threads=run_config.threads)
    results.save_config()
    passed = handler(run_config, results)
    lab_logger.log_cli(f"명령 종료: {run_config.command}", passed=passed, files=results.written)
    return passed, results.written
