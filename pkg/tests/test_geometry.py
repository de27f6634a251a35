import numpy as np
import pytest

from errors import InvalidParams
from geometry import (
    ProfileKind, make_profile, profile_from_dict, make_potential, potential_from_dict,
    effective_potential, effective_potential_prime, effective_potential_second, audit_profile,
    profile_from_callables,
)


def test_catenoid_values():
    p = make_profile("catenoid")
    assert p.a(0.0) == pytest.approx(1.0)
    assert p.a(1.0) == pytest.approx(np.sqrt(2.0))
    assert p.a_prime(0.0) == pytest.approx(0.0)
    assert p.a_second(0.0) == pytest.approx(1.0)
    assert p.s0 is None


def test_catenoid_effective_potential():
    p = make_profile(ProfileKind.CATENOID)
    assert effective_potential(p, None, 1.0, 0.0) == pytest.approx(1.0)
    assert effective_potential(p, None, 1.0, 1.0) == pytest.approx(0.5)
    assert effective_potential_prime(p, None, 1.0, 0.0) == pytest.approx(0.0)
    # s=0 에서 최대
    assert effective_potential_second(p, None, 1.0, 0.0) < 0


def test_double_well_critical_points():
    p = make_profile("double_well")
    assert p.s0 == 2.0
    assert p.a_prime(0.0) == pytest.approx(0.0)
    assert p.a_second(0.0) < 0
    assert p.a_prime(2.0) == pytest.approx(0.0)
    assert p.a_prime(-2.0) == pytest.approx(0.0)
    assert p.a(2.0) == pytest.approx(1.0)
    assert p.a(0.0) == pytest.approx(2.0)


@pytest.mark.parametrize("kind", ["catenoid", "hyperbolic_cylinder", "double_well",
                                  "nontrapping_monotone", "flat"])
def test_builtin_profiles_pass_audit(kind):
    audit = audit_profile(make_profile(kind))
    assert audit.passed, audit
    assert audit.samples == 1000


def test_custom_profile_from_coeffs():
    p = make_profile("custom", {"coeffs": [2.0, 0.0, 0.1]})
    assert p.a(1.0) == pytest.approx(2.1)
    assert p.a_prime(1.0) == pytest.approx(0.2)
    assert p.a_second(3.0) == pytest.approx(0.2)
    assert audit_profile(p).passed


def test_profile_errors():
    with pytest.raises(InvalidParams):
        make_profile("torus")
    with pytest.raises(InvalidParams):
        make_profile("custom", {})
    with pytest.raises(InvalidParams) as info:
        make_profile("double_well", {"s0": 4.0}, S=8.0)
    assert info.value.invariant == "s0 < S/2"
    with pytest.raises(InvalidParams):
        make_profile("hyperbolic_cylinder", {"beta": -1.0})
    with pytest.raises(InvalidParams):
        # a 가 0 을 지남
        make_profile("custom", {"coeffs": [0.5, 0.0, -0.1]})


def test_profile_round_trip():
    p = make_profile("double_well", {"s0": 1.5, "depth": 0.5}, S=6.0)
    q = profile_from_dict(p.to_dict())
    s = np.linspace(-6, 6, 13)
    assert q.kind is ProfileKind.DOUBLE_WELL
    assert np.allclose(q.a(s), p.a(s))
    assert q.S == 6.0


def test_profile_dict_without_kind():
    with pytest.raises(InvalidParams):
        profile_from_dict({"params": {}})


def test_effective_potential_outside_domain():
    p = make_profile("catenoid", S=4.0)
    with pytest.raises(InvalidParams):
        effective_potential(p, None, 1.0, 5.0)


def test_bump_potential_support():
    v = make_potential("bump", {"amp": 0.2, "center": 1.0, "width": 0.5})
    assert v.support == (0.5, 1.5)
    assert v.V(1.0) == pytest.approx(0.2)
    s = np.array([-1.0, 0.4, 0.5, 1.6, 3.0])
    assert np.all(v.V(s) == 0.0)
    assert np.all(v.V_prime(s) == 0.0)
    assert not v.is_zero


def test_bump_derivatives_match_finite_differences():
    v = make_potential("bump", {"amp": 0.3, "width": 1.0})
    s = np.linspace(-0.8, 0.8, 17)
    h = 1e-5
    fd1 = (v.V(s + h) - v.V(s - h)) / (2 * h)
    fd2 = (v.V(s + h) - 2 * v.V(s) + v.V(s - h)) / h ** 2
    assert np.allclose(fd1, v.V_prime(s), atol=1e-6)
    assert np.allclose(fd2, v.V_second(s), atol=1e-3)


def test_potential_from_dict_defaults_to_zero():
    assert potential_from_dict(None).is_zero
    assert potential_from_dict({"kind": "bump"}).kind == "bump"
    with pytest.raises(InvalidParams):
        make_potential("well")


def test_profile_from_callables():
    p = profile_from_callables(lambda s: np.sqrt(1.0 + s ** 2), lambda s: s / np.sqrt(1.0 + s ** 2),
                               lambda s: (1.0 + s ** 2) ** -1.5, S=4.0, label="catenoid_like")
    assert p.kind is ProfileKind.CUSTOM
    assert p.a(1.0) == pytest.approx(make_profile("catenoid").a(1.0))
    assert audit_profile(p).passed
    with pytest.raises(InvalidParams):
        profile_from_callables(lambda s: s, lambda s: np.ones_like(s), lambda s: np.zeros_like(s))
