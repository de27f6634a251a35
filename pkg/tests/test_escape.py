import numpy as np
import pytest

from dynamics import ReducedFlow, RegionSpec, RegionRole, Stability
from errors import InvalidParams, PreconditionError
from escape import (
    outer_profile, outer_profile_prime, nested_regions, iterate_regions, build_escape_function,
    verify_escape_function, commutator_decomposition, EscapeFunction,
)
from geometry import make_profile


@pytest.fixture(scope="module")
def catenoid_setup():
    flow = ReducedFlow(make_profile("catenoid"))
    orbit = [o for o in flow.classify_orbits() if o.mu > 0][0]
    regions = nested_regions(orbit)
    q = build_escape_function(flow, [orbit], regions)
    return flow, orbit, regions, q


def test_outer_profile_shape():
    t = np.linspace(-3.0, 3.0, 601)
    f = outer_profile(t)
    assert np.all(f[t <= -1.45] == 0.0)
    assert np.allclose(f[t >= -0.55], t[t >= -0.55] + 1.0, atol=1e-12)
    assert np.all(np.diff(f) >= -1e-14)
    assert np.all(outer_profile_prime(t) >= 0.0)


def test_catenoid_escape_function_passes(catenoid_setup):
    _, _, _, q = catenoid_setup
    assert q.N > 0
    assert not q.gamma_plus_trivial
    report = verify_escape_function(q, n_samples=1000)
    assert report.passed, report.failures
    assert report.c_min > 0.0
    assert report.n_samples == 1000


def test_constant_function_fails_only_annulus(catenoid_setup):
    _, _, _, q = catenoid_setup
    report = verify_escape_function(EscapeFunction.constant(q, 1.0))
    assert report.failures == ["annulus_strict"]


def test_floor_too_low_is_reported(catenoid_setup):
    flow, orbit, regions, _ = catenoid_setup
    q = build_escape_function(flow, [orbit], regions, floor=-1.0)
    report = verify_escape_function(q)
    assert "floor" in report.failures


def test_nesting_violation(catenoid_setup):
    flow, orbit, _, _ = catenoid_setup
    regions = nested_regions(orbit, gamma=0.6, U1=0.5)
    with pytest.raises(PreconditionError):
        build_escape_function(flow, [orbit], regions)


def test_mixed_mu_orbits_rejected(catenoid_setup):
    flow, _, _, _ = catenoid_setup
    orbits = flow.classify_orbits()
    with pytest.raises(PreconditionError):
        build_escape_function(flow, orbits, nested_regions(orbits[0]))


def test_too_few_samples(catenoid_setup):
    with pytest.raises(InvalidParams):
        verify_escape_function(catenoid_setup[3], n_samples=999)


def test_commutator_residual(catenoid_setup):
    decomposition = commutator_decomposition(catenoid_setup[3])
    assert decomposition.passed
    assert decomposition.residual <= 1e-10
    assert np.allclose(decomposition.phi_plus_sq + decomposition.phi_minus_sq, 1.0)
    assert np.all(decomposition.b >= 0.0)


def test_zero_function_has_trivial_decomposition(catenoid_setup):
    zero = EscapeFunction.constant(catenoid_setup[3], 0.0)
    decomposition = commutator_decomposition(zero)
    assert np.all(decomposition.b == 0.0)
    assert np.all(decomposition.e == 0.0)


def test_u_plus_overlapping_outgoing_set(catenoid_setup):
    _, _, regions, q = catenoid_setup
    U_minus = RegionSpec.centered_box("U-", RegionRole.U_MINUS, (0.0, 0.0), 0.2, 0.2)
    U_plus = RegionSpec("U+", RegionRole.U_PLUS, regions.U.boxes)
    with pytest.raises(PreconditionError):
        commutator_decomposition(q, U_minus, U_plus)


def test_iterated_regions_nest(catenoid_setup):
    _, _, regions, q = catenoid_setup
    nxt = iterate_regions(regions, q)
    assert nxt.U1.boxes == regions.gamma.boxes
    s_lo, s_hi, p_lo, p_hi = nxt.U.bounding_box()
    assert (s_hi - s_lo) == pytest.approx(1.5 * 4.0)
    assert (p_hi - p_lo) == pytest.approx(1.5 * 3.0)


def test_elliptic_orbit_gives_trivial_outgoing_set():
    flow = ReducedFlow(make_profile("double_well"))
    orbit = [o for o in flow.classify_orbits()
             if o.stability is Stability.ELLIPTIC and o.mu > 0][0]
    q = build_escape_function(flow, [orbit], nested_regions(orbit))
    assert q.gamma_plus_trivial
    assert q.N == 0
    report = verify_escape_function(q)
    assert report.passed, report.failures


def test_grid_rows_cover_grid(catenoid_setup):
    q = catenoid_setup[3]
    rows = q.grid_rows()
    assert len(rows) == q.grid_s.size
    assert set(rows[0]) == {"s", "sigma", "q", "Hp_q"}
