import math

import numpy as np
import pytest
import scipy.sparse as sp

from errors import InvalidParams, DegenerateDesign, UnknownPreset, HypothesisAuditFailed
from geometry import make_profile
from quantize import ModeOperator, CutoffSpec
from resolvent_lab import (
    Prediction, ModePolicy, ExperimentSpec, SweepRow, SweepResult, power_norm, mode_resolvent_norm,
    dense_norm_oracle, fit_scaling, check_prediction, hypothesis_audit, run_sweep, resolve_at, ratio_trend,
    propagation_contrast, outgoing_audit, preset, preset_list, PRESETS, PRESET_ALIASES, DEFAULT_H_LIST, NECK_H_LIST,
)


def _test_operator(n=50, seed=1):
    rng = np.random.default_rng(seed)
    main = np.arange(1.0, n + 1.0)
    off = 0.05 * (rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1))
    return ModeOperator.from_matrix(sp.diags([off, main, off.conj()], [-1, 0, 1]))


def test_power_norm_diagonal():
    d = np.array([0.5, 3.0, -2.0, 1.0])
    est = power_norm(lambda x: d * x, lambda y: d * y, 4, tol=1e-8)
    assert est.converged
    assert est.value == pytest.approx(3.0, rel=1e-6)


def test_power_norm_zero_operator():
    est = power_norm(lambda x: 0 * x, lambda y: 0 * y, 5)
    assert est.value == 0.0 and est.converged


@pytest.mark.parametrize("tol", [1e-9, 1e-2])
def test_power_norm_tol_range(tol):
    with pytest.raises(InvalidParams):
        power_norm(lambda x: x, lambda y: y, 3, tol=tol)


def test_mode_norm_matches_dense_oracle():
    op = _test_operator()
    est = mode_resolvent_norm(None, op, None, tol=1e-8)
    oracle = dense_norm_oracle(None, op, None)
    assert est.converged
    assert est.value == pytest.approx(oracle, rel=1e-6)
    assert est.solve_residual <= 1e-10


def test_mode_norm_with_cutoffs_matches_oracle():
    op = _test_operator(40, seed=2)
    A = sp.diags(np.linspace(0.0, 1.0, 40))
    B = sp.diags(np.linspace(1.0, 0.0, 40))
    est = mode_resolvent_norm(A, op, B, tol=1e-8)
    assert est.value == pytest.approx(dense_norm_oracle(A, op, B), rel=1e-5)


def test_dense_oracle_size_limit():
    with pytest.raises(InvalidParams):
        dense_norm_oracle(None, _test_operator(60), None, max_n=50)


H_LIST = [0.04, 0.028, 0.02, 0.014, 0.01]


def test_fit_recovers_log_loss():
    rows = [(h, 2.0 / h * math.log(1.0 / h)) for h in H_LIST]
    fit = fit_scaling(rows)
    assert fit.alpha == pytest.approx(1.0, abs=1e-8)
    assert fit.beta == pytest.approx(1.0, abs=1e-8)
    assert fit.c == pytest.approx(math.log(2.0), abs=1e-8)
    fixed = fit_scaling(rows, fix_beta=1.0)
    assert fixed.alpha == pytest.approx(1.0, abs=1e-10)
    assert fixed.residual <= 1e-10


def test_fit_prefers_power_law_for_power_data():
    fit = fit_scaling([(h, 3.0 / h) for h in H_LIST])
    assert fit.power_alpha == pytest.approx(1.0)
    assert fit.best == "power"
    assert fit.to_dict()["best_residual"] <= 1e-10


@pytest.mark.parametrize("rows", [
    [(0.04, 1.0), (0.02, 2.0), (0.01, 4.0)],
    [(0.5, 1.0), (0.04, 1.0), (0.02, 2.0), (0.01, 4.0)],
    [(0.04, 1.0), (0.03, -1.0), (0.02, 2.0), (0.01, 4.0)],
])
def test_fit_degenerate_designs(rows):
    with pytest.raises(DegenerateDesign):
        fit_scaling(rows)


def test_check_prediction_nontrapping_band():
    spec = PRESETS["nontrapping_baseline"]()
    rows = [SweepRow(h, 1.0 / h, 0, 10, 0.0, True) for h in H_LIST]
    good = [(r.h, r.norm) for r in rows]
    check = check_prediction(spec, rows, fit_scaling(good), fit_scaling(good, fix_beta=0.0))
    assert check["passed"]
    rows = [SweepRow(h, h ** -2, 0, 10, 0.0, True) for h in H_LIST]
    good = [(r.h, r.norm) for r in rows]
    check = check_prediction(spec, rows, fit_scaling(good), fit_scaling(good, fix_beta=0.0))
    assert not check["passed"]


def test_check_prediction_elliptic_blowup():
    spec = PRESETS["elliptic_blowup"]()
    rows = [SweepRow(0.1, 1e2, 12, 5, 0.0, True), SweepRow(0.05, 1e5, 24, 5, 0.0, True)]
    assert check_prediction(spec, rows, None, None)["passed"]
    rows[1] = SweepRow(0.05, 10.0, 24, 5, 0.0, True)
    assert not check_prediction(spec, rows, None, None)["passed"]


def test_mode_policy_shell_and_sentinels():
    spec = PRESETS["catenoid_full"]()
    modes, sentinels = spec.mode_policy.modes_for(spec, 0.1)
    mu_max = math.sqrt(1.0 + 1.5 ** 2) + 0.5
    m_max = int(math.floor(mu_max / 0.1))
    assert modes == list(range(0, m_max + 1))
    assert sentinels == [m_max + 1, m_max + 2, m_max + 3]


def test_mode_policy_variants():
    spec = PRESETS["catenoid_full"]()
    assert ModePolicy(kind="target", target_mu=1.2).modes_for(spec, 0.05) == ([24], [])
    assert ModePolicy(kind="explicit", modes=[3, 1]).modes_for(spec, 0.05) == ([1, 3], [])
    with pytest.raises(InvalidParams):
        ModePolicy(kind="explicit").modes_for(spec, 0.05)
    with pytest.raises(InvalidParams):
        ModePolicy(kind="lattice").modes_for(spec, 0.05)


def test_mode_window_drops_sentinels():
    spec = PRESETS["catenoid_microlocal"]()
    modes, sentinels = spec.mode_policy.modes_for(spec, 0.1)
    assert sentinels == []
    assert modes[0] < 0
    assert modes[0] == -modes[-1]


def test_experiment_spec_round_trip():
    spec = PRESETS["double_well_full"]()
    again = ExperimentSpec.from_dict(spec.to_dict())
    assert again.name == spec.name
    assert again.prediction is Prediction.LOG2_LOSS
    assert again.barrier == spec.barrier
    assert again.A == spec.A
    assert again.h_list == spec.h_list


@pytest.mark.parametrize("changes", [
    {"h_list": []},
    {"h_list": [0.02, 0.04]},
    {"h_list": [1.5, 0.5]},
    {"lam_rule": "random"},
    {"lam_rule": "quasimode"},
])
def test_experiment_spec_validation(changes):
    data = PRESETS["catenoid_full"]().to_dict()
    data.update(changes)
    with pytest.raises(InvalidParams):
        ExperimentSpec.from_dict(data)


def test_experiment_spec_missing_key():
    data = PRESETS["catenoid_full"]().to_dict()
    del data["A"]
    with pytest.raises(InvalidParams):
        ExperimentSpec.from_dict(data)


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("torus_full")


def test_preset_list_entries():
    entries = preset_list()
    assert [e["name"] for e in entries] == list(PRESETS) + list(PRESET_ALIASES)
    assert all(e["claim"] and e["prediction"] and e["anchor"] for e in entries)
    aliases = {e["name"]: e["alias_of"] for e in entries if "alias_of" in e}
    assert aliases == PRESET_ALIASES


@pytest.mark.parametrize("alias, target", sorted(PRESET_ALIASES.items()))
def test_preset_aliases_resolve(alias, target):
    spec = preset(alias, audit=False)
    assert spec.name == target
    assert spec.to_dict() == PRESETS[target]().to_dict()


def test_unknown_preset_lists_aliases():
    with pytest.raises(UnknownPreset) as info:
        preset("catenoid_thm2")
    assert "catenoid_thm1" in str(info.value)


def test_default_h_list():
    assert DEFAULT_H_LIST == [0.04, 0.028, 0.02, 0.014, 0.01, 0.007, 0.005]
    assert PRESETS["double_well_full"]().h_list == DEFAULT_H_LIST
    assert PRESETS["double_well_off_latitudes"]().h_list == DEFAULT_H_LIST


def test_neck_h_list_keeps_the_neck_mode():
    assert len(NECK_H_LIST) == len(DEFAULT_H_LIST)
    for h in NECK_H_LIST:
        assert 1.0 / h == pytest.approx(round(1.0 / h), abs=1e-9)
    assert PRESETS["catenoid_full"]().h_list == NECK_H_LIST
    assert PRESETS["catenoid_full"]().contrast == "catenoid_microlocal"


@pytest.mark.parametrize("name", ["nontrapping_baseline", "catenoid_full", "catenoid_far_cutoffs",
                                  "double_well_off_latitudes", "double_well_full"])
def test_preset_hypotheses_hold(name):
    audit = preset(name).audit
    assert audit
    assert all(clause["passed"] for clause in audit.values()), audit


def test_elliptic_target_is_trapped():
    audit = preset("elliptic_blowup").audit
    assert audit["target_trapped"]["passed"]


def test_nontrapping_claim_on_catenoid_neck_is_refused():
    spec = PRESETS["catenoid_full"]()
    spec.prediction = Prediction.NONTRAPPING_H_INV
    audit = hypothesis_audit(spec)
    assert not audit["supports_avoid_trapped"]["passed"]
    with pytest.raises(HypothesisAuditFailed):
        run_sweep(spec)


def test_resolve_at_single_h():
    spec = preset("nontrapping_baseline")
    row = resolve_at(spec, 0.2)
    assert row.error is None
    assert row.norm > 0
    assert row.n_modes > 0
    assert row.m_star is not None
    assert row.residual <= 1e-10
    with pytest.raises(InvalidParams):
        resolve_at(spec, 1.2)


def _result(norms):
    rows = [SweepRow(h, n, 0, 1, 0.0, True) for h, n in zip(H_LIST, norms)]
    return SweepResult("x", Prediction.LOG_LOSS, "", 0, rows, None, None, {}, {"passed": True})


def test_ratio_trend():
    micro = _result([1.0 / h for h in H_LIST])
    full = _result([math.log(1.0 / h) / h for h in H_LIST])
    trend = ratio_trend(full, micro)
    assert trend["strictly_increasing"]
    assert trend["h"] == sorted(H_LIST, reverse=True)
    flat = ratio_trend(micro, micro)
    assert not flat["strictly_increasing"]


def test_sweep_result_curve_skips_failed_rows():
    result = _result([1.0 / h for h in H_LIST])
    result.rows[0] = SweepRow(H_LIST[0], float("nan"), None, 0, float("nan"), False, error="boom")
    assert len(result.curve()) == len(H_LIST) - 1
    assert not result.passed


def test_propagation_contrast_on_catenoid():
    report = propagation_contrast(make_profile("catenoid"), None, 0.05)
    assert report.m == 10
    assert report.passed, report.to_dict()


def test_outgoing_audit_refuses_trapped_B():
    spec = PRESETS["catenoid_full"]()
    neck = CutoffSpec(plateau=(-0.2, 0.2), support=(-0.4, 0.4), mu_plateau=(0.95, 1.05), mu_support=(0.9, 1.1))
    with pytest.raises(HypothesisAuditFailed) as info:
        outgoing_audit(spec, {"A": spec.A}, neck)
    assert info.value.invariant == "backward_nontrapped"


def test_run_sweep_nontrapping_success():
    spec = preset("nontrapping_baseline")
    spec.h_list = [0.1, 0.08, 0.064, 0.05]
    result = run_sweep(spec, threads=2)
    assert result.all_converged
    assert result.fit is not None and result.fit_fixed is not None
    assert len(result.curve()) == 4
    assert 0.7 <= result.fit_fixed.alpha <= 1.3
    assert result.contrast is None
    assert result.to_dict()["rows"][0]["h"] == 0.1


def test_resolve_at_is_thread_independent():
    spec = preset("catenoid_full", audit=False)
    one = resolve_at(spec, 0.1, threads=1)
    three = resolve_at(spec, 0.1, threads=3)
    assert one.error is None
    assert one.m_star == three.m_star
    assert one.norm == three.norm
    assert one.n_modes == three.n_modes


def test_full_over_microlocal_ratio_grows():
    spec = preset("catenoid_full")
    spec.h_list = [1.0 / n for n in (25, 36, 50, 71)]
    result = run_sweep(spec, threads=2)
    contrast = result.prediction_check["contrast"]
    assert contrast["reference"] == "catenoid_microlocal"
    assert len(contrast["ratios"]) == 4
    assert contrast["strictly_increasing"], contrast["ratios"]
    assert result.contrast["reference"]["name"] == "catenoid_microlocal"
