import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynamics import (
    ReducedFlow, PhasePoint, ExitReason, Stability, PointLabel, RegionSpec,
)
from errors import InvalidParams, IntegrationFailed
from escape import nested_regions
from geometry import make_profile


@pytest.fixture(scope="module")
def catenoid_flow():
    return ReducedFlow(make_profile("catenoid"))


@pytest.fixture(scope="module")
def double_well_flow():
    return ReducedFlow(make_profile("double_well"))


def test_energy_drift_on_shell_points(catenoid_flow):
    rng = np.random.default_rng(0)
    n = 1000
    s = rng.uniform(-3.0, 3.0, n)
    mu = rng.uniform(-0.95, 0.95, n)
    sign = rng.choice([-1.0, 1.0], n)
    sigma = sign * np.sqrt(1.0 - mu ** 2 / catenoid_flow.profile.a(s) ** 2)
    _, _, _, drift, _ = catenoid_flow.flow_many(s, sigma, mu, 50.0)
    assert np.max(drift) <= 1e-8


def test_flow_records_monotone_time(catenoid_flow):
    point = catenoid_flow.on_shell(0.5, 0.3)
    forward = catenoid_flow.flow(point, 2.0)
    backward = catenoid_flow.flow(point, -2.0)
    assert np.all(np.diff(forward.t) > 0)
    assert np.all(np.diff(backward.t) < 0)
    assert forward.direction == 1 and backward.direction == -1
    assert forward.exit_reason is ExitReason.HORIZON
    assert forward.energy_drift <= forward.tolerance


@settings(max_examples=25, deadline=None)
@given(s=st.floats(-2.0, 2.0), u=st.floats(-0.9, 0.9), T=st.floats(0.5, 2.0),
       sign=st.sampled_from([-1.0, 1.0]))
def test_time_reversal(s, u, T, sign):
    flow = ReducedFlow(make_profile("catenoid"))
    start = flow.on_shell(s, u, sign)
    there = flow.flow(start, T).final
    back = flow.flow(there.reflected(), T).final
    assert back.s == pytest.approx(start.s, abs=1e-7)
    assert -back.sigma == pytest.approx(start.sigma, abs=1e-7)


def test_absorber_stops_flow():
    flow = ReducedFlow(make_profile("flat"), absorber_start=2.0)
    traj = flow.flow(PhasePoint(0.0, 1.0, 0.0), 10.0)
    assert traj.exit_reason is ExitReason.ENTERED_ABSORBER
    assert abs(traj.s[-1]) > 2.0
    assert traj.t[-1] < 10.0


def test_large_step_fails_drift_check():
    flow = ReducedFlow(make_profile("catenoid"), dt=0.2, drift_tol=1e-12)
    with pytest.raises(IntegrationFailed):
        flow.flow(flow.on_shell(0.3, 0.9), 20.0)


def test_invalid_step():
    with pytest.raises(InvalidParams):
        ReducedFlow(make_profile("catenoid"), dt=0.0)


def test_inaccessible_shell_point(catenoid_flow):
    with pytest.raises(InvalidParams):
        catenoid_flow.on_shell(0.0, 2.0)


def test_catenoid_census(catenoid_flow):
    orbits = catenoid_flow.classify_orbits()
    assert len(orbits) == 2
    assert [o.mu for o in orbits] == pytest.approx([-1.0, 1.0])
    for orbit in orbits:
        assert orbit.s_star == pytest.approx(0.0, abs=1e-10)
        assert orbit.stability is Stability.HYPERBOLIC
        assert orbit.curvature == pytest.approx(-2.0)


def test_double_well_census(double_well_flow):
    orbits = double_well_flow.classify_orbits()
    elliptic = [o for o in orbits if o.stability is Stability.ELLIPTIC]
    hyperbolic = [o for o in orbits if o.stability is Stability.HYPERBOLIC]
    assert len(elliptic) == 2
    assert len(hyperbolic) == 4
    assert all(o.s_star == pytest.approx(0.0, abs=1e-10) for o in elliptic)
    assert sorted(abs(o.mu) for o in elliptic) == pytest.approx([2.0, 2.0])
    assert sorted(round(o.s_star, 6) for o in hyperbolic) == [-2.0, -2.0, 2.0, 2.0]
    assert all(abs(o.mu) == pytest.approx(1.0) for o in hyperbolic)


def test_census_mu_window(double_well_flow):
    orbits = double_well_flow.classify_orbits(mu_window=(0.5, 1.5))
    assert len(orbits) == 2
    assert all(o.mu == pytest.approx(1.0) for o in orbits)


def test_flat_profile_is_continuum():
    orbits = ReducedFlow(make_profile("flat")).classify_orbits()
    assert len(orbits) == 1
    assert orbits[0].continuum
    assert orbits[0].orbit_id == "continuum"
    assert orbits[0].stability is Stability.DEGENERATE


def test_classify_off_shell(catenoid_flow):
    result = catenoid_flow.classify_point(PhasePoint(0.0, 0.5, 0.0))
    assert result.label is PointLabel.ELLIPTIC_OFF_SHELL


def test_classify_escaping_point(catenoid_flow):
    result = catenoid_flow.classify_point(catenoid_flow.on_shell(1.0, 0.5))
    assert result.label is PointLabel.BACKWARD_NONTRAPPED
    assert result.witness["s"]


def test_classify_barrier_hit(catenoid_flow):
    barrier = lambda s, sigma: (np.abs(s) > 0.8).astype(float)
    result = catenoid_flow.classify_point(catenoid_flow.on_shell(0.0, 0.5), barrier_symbol=barrier)
    assert result.label is PointLabel.BACKWARD_NONTRAPPED
    assert "장벽" in result.reason


def test_classify_orbit_point_is_trapped(double_well_flow):
    result = double_well_flow.classify_point(PhasePoint(0.0, 0.0, 2.0))
    assert result.label is PointLabel.TRAPPED
    assert result.orbit_id == result.forward_limit


def test_classify_outgoing_branch(catenoid_flow):
    orbit = [o for o in catenoid_flow.classify_orbits() if o.mu > 0][0]
    result = catenoid_flow.classify_point(catenoid_flow.on_shell(0.5, 1.0, +1.0))
    assert result.label is PointLabel.FORWARD_FLOWOUT
    assert result.orbit_id == orbit.orbit_id


def test_convinf_on_catenoid(catenoid_flow):
    report = catenoid_flow.check_convexity([(0.5, 7.0), (-7.0, -0.5)], mode="convinf")
    assert report.holds
    assert not report.vacuous
    assert report.n_samples > 0


def test_convcompact_fails_where_convinf_holds(catenoid_flow):
    report = catenoid_flow.check_convexity([(0.5, 7.0)], mode="convcompact")
    assert not report.holds
    assert report.witnesses


def test_invalid_convexity_mode(catenoid_flow):
    with pytest.raises(InvalidParams):
        catenoid_flow.check_convexity([(0.0, 1.0)], mode="concave")


def test_convexity_accepts_region(catenoid_flow):
    region = RegionSpec.s_band("annulus", [(0.5, 7.0), (-7.0, -0.5)])
    from_region = catenoid_flow.check_convexity(region, mode="convinf")
    from_intervals = catenoid_flow.check_convexity([(0.5, 7.0), (-7.0, -0.5)], mode="convinf")
    assert from_region.holds
    assert from_region.n_samples == from_intervals.n_samples


def test_bounded_component_is_undetermined(double_well_flow):
    # μ = 1.2 에서 허용 구간은 s = 0 주변에 갇히지만 그 μ 에는 닫힌 궤도가 없다
    point = double_well_flow.on_shell(0.0, 1.2)
    assert double_well_flow.bounded_component(point)
    result = double_well_flow.classify_point(point)
    assert result.label is PointLabel.UNDETERMINED_AT_HORIZON
    assert result.orbit_id is None
    assert "유계" in result.reason


def test_escape_times_along_outgoing_branch(catenoid_flow):
    orbit = [o for o in catenoid_flow.classify_orbits() if o.mu > 0][0]
    regions = nested_regions(orbit)
    point = catenoid_flow.on_shell(0.6, 1.0, +1.0)
    times = catenoid_flow.escape_times(point, regions.V1, regions.V0, regions.U, horizon=30.0, orbits=[orbit])
    assert times.ordered
    assert times.T_V1 < 0.0 < times.T_V0 < times.T_U
