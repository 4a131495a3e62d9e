"""Least-squares polynomial smoothing along the time axis.

Interior samples are smoothed by convolution with the classic symmetric
filter weights (the center-point evaluation of a least-squares polynomial
fit over the window). Positions within half a window of either end are the
evaluation of the polynomial fitted to the nearest full window, which keeps
the filter exact on polynomials up to the fit order at every position and
keeps the whole operator linear.

Series shorter than the window fall back to the largest usable odd window
(order < window <= length); when none exists the series passes through
unchanged. Optionally, originally observed samples are pinned back to their
input values after smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import RasterCube, clamp_to_range


@dataclass(frozen=True)
class SgParams:
    window: int = 7
    polyorder: int = 2
    pin_observed: bool = True

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.polyorder < 0 or self.polyorder >= self.window:
            raise ValueError("polyorder must satisfy 0 <= polyorder < window")


def sg_coefficients(window, polyorder) -> np.ndarray:
    """Symmetric smoothing weights for the window center.

    Row 0 of (A^T A)^-1 A^T for the Vandermonde A over offsets
    -h..h: weights sum to 1 and are symmetric.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    if not 0 <= polyorder < window:
        raise ValueError("polyorder must satisfy 0 <= polyorder < window")
    h = window // 2
    x = np.arange(-h, h + 1, dtype=np.float64)
    a = np.vander(x, N=polyorder + 1, increasing=True)
    return np.linalg.solve(a.T @ a, a.T)[0]


def _end_matrices(window, polyorder):
    """Linear maps from a full end window to the first/last h smoothed values."""
    h = window // 2
    x = np.arange(window, dtype=np.float64)
    a = np.vander(x, N=polyorder + 1, increasing=True)
    proj = a @ np.linalg.solve(a.T @ a, a.T)   # fit-and-evaluate over the window
    return proj[:h], proj[window - h:]


def _usable_window(length, window, polyorder):
    """Largest odd w with polyorder < w <= min(window, length), or 0."""
    w = min(window, length)
    if w % 2 == 0:
        w -= 1
    if w < 3 or w <= polyorder:
        return 0
    return w


def sg_smooth_series(series, observed, params: SgParams, value_range=None):
    """Smooth one 1-D series; `observed` marks samples to pin when enabled."""
    series = np.asarray(series, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if series.shape != observed.shape or series.ndim != 1:
        raise ValueError("series and observed must be equal-length 1-D arrays")
    out = _smooth_block(series[:, None], params)[:, 0]
    if value_range is not None:
        out = clamp_to_range(out, value_range)
    if params.pin_observed:
        out[observed] = series[observed]
    return out


def _smooth_block(block, params: SgParams):
    """Smooth every column of a (time, series) block."""
    length = block.shape[0]
    w = _usable_window(length, params.window, params.polyorder)
    if w == 0:
        return block.copy()
    h = w // 2
    coeff = sg_coefficients(w, params.polyorder)
    head, tail = _end_matrices(w, params.polyorder)
    out = np.empty_like(block)
    windows = np.lib.stride_tricks.sliding_window_view(block, w, axis=0)
    out[h:length - h] = np.einsum("tpk,k->tp", windows, coeff)
    out[:h] = head @ block[:w]
    out[length - h:] = tail @ block[length - w:]
    return out


def sg_smooth_cube(cube: RasterCube, observed, params: SgParams) -> RasterCube:
    """Smooth every pixel's time series; `observed` flags the samples to pin.

    The cube's own validity is preserved; values are clamped to the cube's
    range after smoothing and pinned samples are returned bit-exactly.
    """
    observed = np.asarray(observed, dtype=bool)
    if observed.shape != cube.shape:
        raise ValueError("observed mask shape differs from cube shape")
    T = cube.shape[0]
    flat = cube.values.reshape(T, -1).astype(np.float64)
    out = _smooth_block(flat, params)
    out = clamp_to_range(out, cube.value_range)
    if params.pin_observed:
        obs = observed.reshape(T, -1)
        out[obs] = flat[obs]
    return RasterCube(
        out.reshape(cube.shape).astype(np.float32), cube.valid.copy(),
        cube.days, cube.value_range, cube.tile_id, cube.layer_name,
    )
