"""Property-based checks for the small pure-math helpers."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from hamtomo.model import GaugePhases, traceless_levels
from hamtomo.reconstruction import wrap_angle
from hamtomo.spectral import PowerSpectrum

finite_angles = st.floats(min_value=-50.0, max_value=50.0,
                          allow_nan=False, allow_infinity=False)


@given(finite_angles)
def test_wrap_angle_range_and_equivalence(x):
    w = float(wrap_angle(x))
    assert -math.pi <= w < math.pi + 1e-12
    # wrapped value differs from the input by an integer number of turns
    turns = (x - w) / (2 * math.pi)
    assert abs(turns - round(turns)) < 1e-9


@given(finite_angles, finite_angles, finite_angles)
def test_gauge_wrapping_preserves_matrix(a, b, c):
    g = GaugePhases(a, b, c)
    w = g.wrapped()
    arr = w.as_array()
    assert np.all(arr >= 0.0) and np.all(arr < 2 * math.pi)
    assert np.max(np.abs(g.matrix() - w.matrix())) < 1e-9


@given(st.floats(min_value=0.05, max_value=5.0),
       st.floats(min_value=0.05, max_value=5.0),
       st.floats(min_value=0.05, max_value=5.0))
def test_traceless_levels_sum_and_gaps(g1, g2, g3):
    levels = traceless_levels(g1, g1 + g2, g1 + g2 + g3)
    assert abs(levels.sum()) < 1e-9
    assert np.allclose(np.diff(levels), [g1, g2, g3], atol=1e-9)


@settings(max_examples=25)
@given(st.integers(min_value=8, max_value=4096),
       st.floats(min_value=0.01, max_value=1.0),
       st.floats(min_value=0.0, max_value=30.0))
def test_leakage_envelope_bounded(n, dt, offset):
    spec = PowerSpectrum(omegas=np.array([0.0]), values=np.array([1.0]),
                         resolution=math.pi / ((n - 1) * dt),
                         n_samples=n, dt=dt)
    env = float(spec.leakage_envelope(offset))
    assert 0.0 <= env <= 1.0
    # at one linewidth the window bound has already dropped well below 1
    assert float(spec.leakage_envelope(2.0 * spec.resolution)) < 0.5
