import math

from scipy.integrate import trapezoid

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikefuse.errors import ShapeError
from spikefuse.neuron import (
    LifParams,
    LifState,
    boxcar_surrogate,
    lif_step,
    readout_step,
    relaxed_spike,
    squash_alpha,
    squash_alpha_grad,
    unsquash_alpha,
)


def state(v, s):
    return LifState(np.array([v], dtype=float), np.array([s], dtype=float))


def params(alpha):
    return LifParams.from_alpha(np.array([alpha]))


def test_squash_alpha_examples():
    assert squash_alpha(0.0) == pytest.approx(0.78, abs=1e-15)
    assert squash_alpha(np.inf) == 0.96
    assert squash_alpha(-np.inf) == 0.60
    # logistic(1) = 0.7310585786300049 (high-precision reference)
    expected = 0.60 + 0.36 * 0.7310585786300049
    assert squash_alpha(1.0) == pytest.approx(expected, abs=1e-15)
    assert squash_alpha(1.0) == pytest.approx(0.8632, abs=1e-4)


@given(st.floats(allow_nan=False))
def test_squash_alpha_range(x):
    a = float(squash_alpha(x))
    assert 0.60 <= a <= 0.96


def test_squash_alpha_monotone_and_invertible(rng):
    x = np.sort(rng.normal(0, 5, 1000))
    a = squash_alpha(x)
    assert np.all(np.diff(a) >= 0)
    inner = rng.normal(0, 3, 100)
    np.testing.assert_allclose(unsquash_alpha(squash_alpha(inner)), inner, rtol=1e-9, atol=1e-9)


def test_squash_alpha_grad_matches_finite_difference(rng):
    x = rng.normal(0, 2, 50)
    h = 1e-6
    fd = (squash_alpha(x + h) - squash_alpha(x - h)) / (2 * h)
    np.testing.assert_allclose(squash_alpha_grad(x), fd, rtol=1e-6)


@pytest.mark.parametrize(
    "alpha, v_prev, current, s_prev, v_new, s_new",
    [
        (0.8, 0.5, 1.0, 0, 0.6, 0),
        (0.8, 1.0, 3.0, 0, 1.4, 1),
        (0.9, 2.0, 0.0, 1, 0.8, 0),
        (0.7, 0.0, 0.0, 0, 0.0, 0),
    ],
)
def test_lif_step_examples(alpha, v_prev, current, s_prev, v_new, s_new):
    before = state(v_prev, s_prev)
    after = lif_step(before, np.array([current]), params(alpha))
    assert after.v[0] == pytest.approx(v_new, abs=1e-12)
    assert after.s[0] == s_new
    assert before.v[0] == v_prev  # input untouched


def test_lif_strict_threshold():
    # alpha = 0.75, v_prev = 0, I = 4 -> v = 1.0 exactly: no spike at equality
    out = lif_step(state(0.0, 0), np.array([4.0]), params(0.75))
    assert out.v[0] == 1.0
    assert out.s[0] == 0


def test_lif_step_dimension_mismatch():
    with pytest.raises(ShapeError):
        lif_step(LifState.zeros(3), np.zeros(2), LifParams(np.zeros(3)))


@pytest.mark.parametrize(
    "alpha, v_prev, current, expected",
    [(0.9, 1.0, 1.0, 1.0), (0.9, 0.0, 10.0, 1.0), (0.6, 5.0, 0.0, 3.0)],
)
def test_readout_step_examples(alpha, v_prev, current, expected):
    out = readout_step(np.array([v_prev]), np.array([current]), params(alpha))
    assert out[0] == pytest.approx(expected, abs=1e-12)


def test_readout_step_dimension_mismatch():
    with pytest.raises(ShapeError):
        readout_step(np.zeros(2), np.zeros(3), LifParams(np.zeros(2)))


@pytest.mark.parametrize("v, expected", [(1.0, 0.5), (1.5, 0.5), (0.5, 0.5), (1.5000001, 0.0), (0.4, 0.0)])
def test_boxcar_examples(v, expected):
    assert boxcar_surrogate(np.array([v]), 1.0)[0] == expected


def test_boxcar_mass():
    grid = np.linspace(-4.0, 6.0, 2_000_001)
    assert trapezoid(boxcar_surrogate(grid), grid) == pytest.approx(0.5, abs=1e-4)


def test_relaxed_spike_examples():
    assert relaxed_spike(1.0) == 0.25
    assert relaxed_spike(0.5) == 0.0
    assert relaxed_spike(1.5) == 0.5
    assert relaxed_spike(-3.0) == 0.0
    assert relaxed_spike(9.0) == 0.5


def test_relaxed_spike_slope_is_boxcar(rng):
    v = rng.uniform(-1, 3, 500)
    kinks = np.minimum(np.abs(v - 0.5), np.abs(v - 1.5))
    v = v[kinks > 1e-3]
    h = 1e-7
    fd = (relaxed_spike(v + h) - relaxed_spike(v - h)) / (2 * h)
    np.testing.assert_allclose(fd, boxcar_surrogate(v), atol=1e-7)


@settings(max_examples=200)
@given(
    st.floats(-50, 50), st.floats(-20, 20), st.floats(0, 10), st.floats(-5, 5), st.sampled_from([0.0, 1.0])
)
def test_lif_monotone_in_current(alpha_raw, v_prev, delta, current, s_prev):
    p = LifParams(np.array([alpha_raw]))
    lo = lif_step(state(v_prev, s_prev), np.array([current]), p)
    hi = lif_step(state(v_prev, s_prev), np.array([current + delta]), p)
    assert hi.v[0] >= lo.v[0]
    assert set(np.unique(hi.s)) <= {0.0, 1.0}


@settings(max_examples=200)
@given(st.floats(-50, 50), st.floats(-20, 20), st.floats(-5, 5))
def test_reset_subtracts_threshold(alpha_raw, v_prev, current):
    p = LifParams(np.array([alpha_raw]))
    quiet = lif_step(state(v_prev, 0), np.array([current]), p)
    fired = lif_step(state(v_prev, 1), np.array([current]), p)
    assert fired.v[0] == quiet.v[0] - 1.0


@settings(max_examples=100)
@given(st.floats(-50, 50), st.floats(-10, 1), st.integers(1, 60))
def test_geometric_decay(alpha_raw, v0, steps):
    p = LifParams(np.array([alpha_raw]))
    s = state(v0, 0)
    alpha = float(p.alpha[0])
    expected = v0
    for _ in range(steps):
        s = lif_step(s, np.zeros(1), p)
        expected = alpha * expected
        assert s.s[0] == 0
    assert s.v[0] == expected
    assert s.v[0] == pytest.approx(alpha**steps * v0, rel=1e-12, abs=1e-300)


def test_lif_params_threshold_fixed():
    with pytest.raises(ValueError):
        LifParams(np.zeros(2), v_th=2.0)
    assert math.isclose(LifParams(np.zeros(1)).v_th, 1.0)
