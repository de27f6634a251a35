import numpy as np
import pytest
from hypothesis import given, strategies as st

from utils import (psi, smooth_step, smooth_step_prime, ramp, smooth_window, even_window, erf_box,
                   format_duration)


def test_psi_vanishes_on_nonpositive():
    x = np.array([-3.0, -1e-9, 0.0])
    assert np.all(psi(x) == 0.0)
    assert psi(1.0) == pytest.approx(np.exp(-1.0))


@given(st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
def test_smooth_step_range(x):
    value = float(smooth_step(x))
    assert 0.0 <= value <= 1.0
    if x <= 0.0:
        assert value == 0.0
    if x >= 1.0:
        assert value == 1.0


@given(st.floats(min_value=0.05, max_value=0.95))
def test_smooth_step_symmetry(x):
    assert float(smooth_step(x) + smooth_step(1.0 - x)) == pytest.approx(1.0, abs=1e-14)


@given(st.floats(min_value=0.02, max_value=0.98))
def test_smooth_step_prime_matches_difference(x):
    step = 1e-6
    fd = (smooth_step(x + step) - smooth_step(x - step)) / (2 * step)
    assert float(smooth_step_prime(x)) == pytest.approx(float(fd), rel=1e-5, abs=1e-7)


def test_ramp_direction():
    assert float(ramp(0.0, 0.0, 1.0)) == 0.0
    assert float(ramp(1.0, 0.0, 1.0)) == 1.0
    # 감소 방향
    assert float(ramp(0.0, 1.0, 0.0)) == 1.0
    assert float(ramp(2.0, 1.0, 0.0)) == 0.0


def test_smooth_window_plateau_and_support():
    x = np.linspace(-3, 3, 601)
    w = smooth_window(x, (-1.0, 1.0), (-2.0, 2.0))
    assert np.all(w[np.abs(x) <= 1.0] == 1.0)
    assert np.all(w[np.abs(x) >= 2.0] == 0.0)


def test_smooth_window_rejects_bad_nesting():
    with pytest.raises(ValueError):
        smooth_window(0.0, (-1.0, 1.0), (-0.5, 2.0))


def test_even_window_is_even():
    x = np.linspace(0, 2, 201)
    assert np.array_equal(even_window(x, 0.5, 1.0), even_window(-x, 0.5, 1.0))


def test_erf_box_center_and_tails():
    assert float(erf_box(0.0, -1.0, 1.0, 0.1)) == pytest.approx(1.0, abs=1e-12)
    assert float(erf_box(3.0, -1.0, 1.0, 0.1)) == pytest.approx(0.0, abs=1e-12)
    assert float(erf_box(1.0, -1.0, 1.0, 0.1)) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("seconds, expected", [
    (0, "즉시"),
    (5, "5초"),
    (65, "1분 5초"),
    (3600, "1시간"),
    (3725, "1시간 2분 5초"),
])
def test_format_duration(seconds, expected):
    assert format_duration(seconds) == expected
