import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import build_cube
from oracles import sg_weights_fraction
from stgap.smoothing import SgParams, sg_coefficients, sg_smooth_cube, sg_smooth_series


def test_window3_order1_is_moving_average():
    got = sg_coefficients(3, 1)
    assert got == pytest.approx([1 / 3] * 3, abs=1e-12)


def test_window5_order2_matches_frozen_values():
    want = [-3 / 35, 12 / 35, 17 / 35, 12 / 35, -3 / 35]
    got = sg_coefficients(5, 2)
    assert got == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("window,order", [(3, 1), (5, 2), (7, 2), (7, 3),
                                          (9, 2), (9, 4), (11, 3)])
def test_coefficients_match_exact_rational_solution(window, order):
    want = sg_weights_fraction(window, order)
    got = sg_coefficients(window, order)
    assert got == pytest.approx(want, abs=1e-12)
    assert sum(got) == pytest.approx(1.0, abs=1e-12)


def test_coefficient_validation():
    with pytest.raises(ValueError):
        sg_coefficients(4, 2)  # window must be odd
    with pytest.raises(ValueError):
        sg_coefficients(5, 5)  # order must fit inside the window
    with pytest.raises(ValueError):
        sg_coefficients(1, 0)


@pytest.mark.parametrize("degree", [0, 1, 2])
def test_polynomial_reproduction_including_ends(degree):
    t = np.arange(40, dtype=np.float64)
    series = (0.3 + 0.02 * t - 0.0005 * t * t)[: None]
    series = np.polyval(np.polyfit(t, series, degree), t)
    params = SgParams(window=7, polyorder=2, pin_observed=False)
    out = sg_smooth_series(series, np.ones(40, dtype=bool), params)
    assert out == pytest.approx(series, abs=1e-9)


def test_cubic_survives_cubic_filter_at_ends():
    t = np.arange(25, dtype=np.float64)
    series = 1.0 - 0.1 * t + 0.01 * t ** 2 - 0.0002 * t ** 3
    params = SgParams(window=9, polyorder=3, pin_observed=False)
    out = sg_smooth_series(series, np.ones(25, dtype=bool), params)
    assert out == pytest.approx(series, abs=1e-9)


def test_linearity():
    rng = np.random.default_rng(3)
    a = rng.random(30)
    b = rng.random(30)
    obs = np.ones(30, dtype=bool)
    params = SgParams(window=7, polyorder=2, pin_observed=False)
    combined = sg_smooth_series(2.0 * a + b, obs, params)
    parts = 2.0 * sg_smooth_series(a, obs, params) + sg_smooth_series(b, obs, params)
    assert combined == pytest.approx(parts, abs=1e-12)


def test_pinning_keeps_observed_samples_bit_exact():
    rng = np.random.default_rng(5)
    series = rng.random(20).astype(np.float32).astype(np.float64)
    observed = rng.random(20) < 0.5
    observed[0] = True
    params = SgParams(window=5, polyorder=2, pin_observed=True)
    out = sg_smooth_series(series, observed, params)
    assert np.array_equal(out[observed], series[observed])
    free = sg_smooth_series(series, observed,
                            SgParams(window=5, polyorder=2, pin_observed=False))
    assert np.array_equal(out[~observed], free[~observed])


def test_constant_series_unchanged():
    series = np.full(15, 0.7)
    params = SgParams(window=7, polyorder=2, pin_observed=False)
    out = sg_smooth_series(series, np.ones(15, dtype=bool), params)
    assert out == pytest.approx(series, abs=1e-12)


def test_short_series_passthrough_and_shrink():
    params = SgParams(window=7, polyorder=2, pin_observed=False)
    one = sg_smooth_series(np.array([0.4]), np.ones(1, dtype=bool), params)
    assert np.array_equal(one, [0.4])
    two = sg_smooth_series(np.array([0.2, 0.8]), np.ones(2, dtype=bool), params)
    assert np.array_equal(two, [0.2, 0.8])
    # length 3 shrinks the window to 3; a line is degree <= order, so it
    # comes back unchanged
    line = np.array([0.1, 0.2, 0.3])
    got = sg_smooth_series(line, np.ones(3, dtype=bool), params)
    assert got == pytest.approx(line, abs=1e-12)


def test_noise_suppression_on_quadratic():
    rng = np.random.default_rng(12)
    t = np.arange(60, dtype=np.float64)
    clean = 0.2 + 0.02 * t - 0.0003 * t * t
    noisy = clean + rng.normal(0, 0.05, size=60)
    params = SgParams(window=9, polyorder=2, pin_observed=False)
    out = sg_smooth_series(noisy, np.ones(60, dtype=bool), params)
    assert np.std(out - clean) < np.std(noisy - clean)


def test_cube_equals_per_series_composition():
    rng = np.random.default_rng(8)
    values = rng.random((12, 3, 4), dtype=np.float32)
    valid = rng.random((12, 3, 4)) < 0.8
    cube = build_cube(values, valid=valid)
    params = SgParams(window=5, polyorder=2, pin_observed=True)
    out = sg_smooth_cube(cube, cube.valid, params)
    assert np.array_equal(out.valid, cube.valid)
    for m in range(3):
        for n in range(4):
            series = values[:, m, n].astype(np.float64)
            want = sg_smooth_series(series, valid[:, m, n], params,
                                    value_range=cube.value_range)
            assert np.array_equal(out.values[:, m, n],
                                  np.asarray(want, dtype=np.float32))


def test_cube_clamps_to_value_range():
    values = np.zeros((7, 1, 1), dtype=np.float32)
    values[3, 0, 0] = 0.1
    cube = build_cube(values, value_range=(0.0, 0.1))
    params = SgParams(window=7, polyorder=2, pin_observed=False)
    free = sg_smooth_series(values[:, 0, 0].astype(np.float64),
                            np.ones(7, dtype=bool), params)
    assert free.min() < 0, "test spike should overshoot below the range"
    out = sg_smooth_cube(cube, cube.valid, params)
    assert out.values.min() == np.float32(0.0)
    assert out.values.max() <= np.float32(0.1)
    assert out.values[int(np.argmin(free)), 0, 0] == np.float32(0.0)


def test_all_observed_with_pinning_is_identity():
    rng = np.random.default_rng(6)
    values = rng.random((10, 2, 2), dtype=np.float32)
    cube = build_cube(values)
    params = SgParams(window=5, polyorder=2, pin_observed=True)
    out = sg_smooth_cube(cube, cube.valid, params)
    assert np.array_equal(out.values, cube.values)


def test_param_validation():
    with pytest.raises(ValueError):
        SgParams(window=4, polyorder=2)
    with pytest.raises(ValueError):
        SgParams(window=5, polyorder=6)
    with pytest.raises(ValueError):
        SgParams(window=-3, polyorder=1)


@given(st.integers(0, 2 ** 32 - 1))
def test_smoothing_reduces_or_keeps_total_variation_of_line(seed):
    rng = np.random.default_rng(seed)
    slope = rng.uniform(-0.01, 0.01)
    t = np.arange(20, dtype=np.float64)
    series = 0.5 + slope * t
    params = SgParams(window=5, polyorder=2, pin_observed=False)
    out = sg_smooth_series(series, np.ones(20, dtype=bool), params)
    assert out == pytest.approx(series, abs=1e-9)
