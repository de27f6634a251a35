import numpy as np
import pytest

from errors import GridTooCoarse, PreconditionError, InvalidParams
from geometry import make_profile
from gluing import (
    gluing_cutoffs, build_glued_models, build_parametrix, identity_residuals, dense_gluing_oracle,
    gluing_norms, verify_gluing, GluingRow, GluingReport, GLUING_MU, REMAINDER_FLOOR,
)
from quantize import Grid1D, BarrierSpec

H = 0.045
# s0/7 구간마다 51개 남짓, 밀집 오라클이 가능한 크기
GRID = Grid1D(5.0, 1801)


@pytest.fixture(scope="module")
def profile():
    return make_profile("double_well", S=5.0)


@pytest.fixture(scope="module")
def models(profile):
    return build_glued_models(profile, H, int(round(1.0 / H)), 0.0, GRID)


def test_cutoffs_partition_and_supports():
    s = np.linspace(-3.0, 3.0, 6001)
    cut = gluing_cutoffs(s, 2.0)
    assert np.all(cut["chi0"] + cut["chi1"] == 1.0)
    assert np.all(cut["W0"] * cut["W1"] == 0.0)
    assert np.all(cut["chi0_shift"] * cut["W0"] == 0.0)
    assert np.all(cut["chi0_shift"][cut["chi0"] > 0] == 1.0)
    assert np.all(cut["chi1_shift"][cut["chi1"] > 0] == 1.0)
    assert cut["W1"][3000] == 1.0
    assert cut["W0"][0] == 1.0


def test_models_share_grid(models):
    assert models.n == GRID.n
    assert models.s0 == 2.0
    assert models.m == 22
    assert models.C0.nnz > 0 and models.C1.nnz > 0


def test_identities_hold(models):
    residuals = identity_residuals(models)
    assert residuals["first"] <= 1e-10
    assert residuals["iterated"] <= 1e-10
    assert residuals["A0_sq"] <= 1e-12
    assert residuals["A1_sq"] <= 1e-12


def test_parametrix_of_zero(models):
    assert np.all(build_parametrix(models, np.zeros(models.n)) == 0)


def test_power_norms_match_dense_oracle(models):
    row = gluing_norms(models)
    assert row.error is None
    assert row.oracle
    for name in ("A0", "A1", "A0A1"):
        assert row.norms[name] == pytest.approx(row.oracle[name], rel=1e-2)
    assert row.oracle["first"] <= 1e-10
    assert np.isfinite(row.discrepancy)
    assert row.to_dict()["residuals"] == row.residuals


def test_dense_oracle_size_limit(models):
    with pytest.raises(InvalidParams):
        dense_gluing_oracle(models, max_n=100)


def test_coarse_grid_rejected(profile):
    with pytest.raises(GridTooCoarse):
        build_glued_models(profile, 0.2, 5, 0.0, Grid1D(5.0, 401))


def test_requires_double_well():
    with pytest.raises(PreconditionError):
        build_glued_models(make_profile("catenoid", S=5.0), H, 22, 0.0, GRID)


def test_wide_barrier_rejected(profile):
    with pytest.raises(PreconditionError):
        build_glued_models(profile, H, 22, 0.0, GRID, barrier=BarrierSpec())


def test_failed_rows_are_recorded():
    report = verify_gluing(make_profile("catenoid"), h_list=[0.04, 0.03, 0.02, 0.015])
    assert not report.passed
    assert all(row.error for row in report.rows)
    assert report.decay["A0A1A0A1"] is None
    assert "decay A0A1A0A1" in report.failures


def test_row_and_report_flags():
    row = GluingRow(0.04, 25)
    assert np.isnan(row.discrepancy)
    assert not row.passed
    report = GluingReport([], {"A1A0A1A0_chi0": 4.0, "A0A1A0A1": 3.5})
    assert report.passed
    report = GluingReport([], {"A1A0A1A0_chi0": 2.0, "A0A1A0A1": None})
    assert report.failures == ["decay A1A0A1A0_chi0", "decay A0A1A0A1"]


def _clean_row(h: float, norms: dict) -> GluingRow:
    row = GluingRow(h, int(round(GLUING_MU / h)), norms=dict(norms), parametrix_norm=1.0, direct_norm=1.0)
    row.residuals = {"first": 0.0, "iterated": 0.0, "A0_sq": 0.0, "A1_sq": 0.0}
    return row


def test_remainder_floor_passes_flat_decay():
    tiny = {"A1A0A1A0_chi0": 0.1 * REMAINDER_FLOOR, "A0A1A0A1": 0.5 * REMAINDER_FLOOR}
    rows = [_clean_row(0.04, tiny), _clean_row(0.02, tiny)]
    assert GluingReport(rows, {"A1A0A1A0_chi0": 0.2, "A0A1A0A1": None}).passed

    loud = {"A1A0A1A0_chi0": 1e-3, "A0A1A0A1": 0.5 * REMAINDER_FLOOR}
    rows = [_clean_row(0.04, loud), _clean_row(0.02, loud)]
    report = GluingReport(rows, {"A1A0A1A0_chi0": 0.2, "A0A1A0A1": 0.2})
    assert report.failures == ["decay A1A0A1A0_chi0"]
    assert report.smallest_norm("A1A0A1A0_chi0") == 1e-3


def test_gluing_passes_on_double_well(profile):
    report = verify_gluing(profile, h_list=[0.04, 0.028, 0.02, 0.014], mu_star=GLUING_MU, threads=2)
    assert all(row.error is None for row in report.rows)
    assert [row.m for row in report.rows] == [int(round(GLUING_MU / h)) for h in (0.04, 0.028, 0.02, 0.014)]
    for row in report.rows:
        assert row.residuals["first"] <= 1e-10
        assert row.discrepancy <= 0.05
    assert report.passed, report.failures
