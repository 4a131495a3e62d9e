"""Synthetic snow-index scenes with known ground truth.

A scene is a fully valid value cube plus matching auxiliary layers, built
from seeded lattice value-noise. Terrain comes first (DEM, then slope and
aspect derived from it); the snow index follows a sigmoid of elevation
around a seasonally moving snowline that sits higher at lower latitudes,
plus spatially correlated noise; albedo is coupled to the snow index. The
recipe makes the spatial/temporal neighborhood and albedo genuinely
predictive, which is what the reconstruction benchmarks exercise.

Everything is driven by one integer seed through named substreams, so a
SceneSpec is a complete, reproducible description of its scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import AuxLayers, Layer, RasterCube, clamp_to_range


@dataclass(frozen=True)
class SceneSpec:
    rows: int = 64
    cols: int = 64
    n_days: int = 60
    seed: int = 0
    relief: float = 1200.0          # DEM amplitude, meters
    cell_size: float = 500.0        # ground sample distance, meters
    snowline_base: float = 850.0    # lowest snowline elevation, meters
    snowline_amp: float = 450.0     # seasonal snowline rise, meters
    snowline_min_day: int = 212     # day-of-year of minimum snow cover
    lat_gradient: float = 300.0     # snowline rise per degree below lat0, m/deg
    sigmoid_scale: float = 90.0     # elevation width of the snow transition, m
    noise_sigma: float = 0.02       # sd of correlated noise added to the index
    corr_len: float = 8.0           # noise correlation length, cells
    albedo_coupling: float = 0.8    # index-to-albedo slope
    albedo_noise: float = 0.12      # sd of albedo's own correlated noise
    day_start: int = 60
    lat0: float = 66.0              # latitude of row 0 (top), degrees north
    lon0: float = -48.0
    cell_deg: float = 0.02          # degrees per cell for lat/lon planes
    value_range: tuple = (0.0, 1.0)
    tile_id: str = "synthetic"

    def __post_init__(self):
        if min(self.rows, self.cols, self.n_days) < 1:
            raise ValueError("rows, cols, and n_days must all be >= 1")
        if self.noise_sigma < 0 or self.albedo_noise < 0:
            raise ValueError("noise levels must be >= 0")
        if self.corr_len <= 0 or self.sigmoid_scale <= 0 or self.cell_size <= 0:
            raise ValueError("corr_len, sigmoid_scale, cell_size must be > 0")
        lo, hi = self.value_range
        if not lo < hi:
            raise ValueError(f"invalid value range: {self.value_range}")


def value_noise_2d(rows, cols, corr_len, rng, octaves=3):
    """Smooth random field: bilinear interpolation of seeded lattice noise.

    Octave o halves the lattice spacing and the amplitude of octave o-1.
    Zero-mean-ish, unnormalized; callers scale as needed. Also used by the
    blob mask generator.
    """
    if corr_len <= 0:
        raise ValueError("corr_len must be > 0")
    field = np.zeros((rows, cols))
    amp = 1.0
    spacing = float(corr_len)
    for _ in range(octaves):
        gr = int(np.ceil((rows - 1) / spacing)) + 2
        gc = int(np.ceil((cols - 1) / spacing)) + 2
        lattice = rng.standard_normal((gr, gc))
        ym = np.arange(rows) / spacing
        xn = np.arange(cols) / spacing
        y0 = np.floor(ym).astype(np.intp)
        x0 = np.floor(xn).astype(np.intp)
        fy = (ym - y0)[:, None]
        fx = (xn - x0)[None, :]
        a = lattice[np.ix_(y0, x0)]
        b = lattice[np.ix_(y0, x0 + 1)]
        c = lattice[np.ix_(y0 + 1, x0)]
        d = lattice[np.ix_(y0 + 1, x0 + 1)]
        field += amp * ((a * (1 - fx) + b * fx) * (1 - fy)
                        + (c * (1 - fx) + d * fx) * fy)
        amp *= 0.5
        spacing = max(1.0, spacing / 2.0)
    return field


def _unit_scaled(field):
    lo, hi = float(field.min()), float(field.max())
    if hi <= lo:
        return np.zeros_like(field)
    return (field - lo) / (hi - lo)


def _zero_mean_unit(field):
    sd = float(field.std())
    if sd == 0.0:
        return np.zeros_like(field)
    return (field - float(field.mean())) / sd


def derive_slope_aspect(dem, cell_size=1.0):
    """Slope (degrees) and downslope compass aspect from a DEM plane.

    Weighted 8-neighbor central differences; borders use odd-reflection
    padding, which turns the central difference into an exact one-sided
    difference there. Aspect is the bearing of steepest descent (north 0,
    east 90). Cells with gradient magnitude < 1e-9 get aspect 0 and are
    flagged in the returned flat mask.

    Returns (slope, aspect, flat).
    """
    dem = np.asarray(dem, dtype=np.float64)
    if dem.ndim != 2:
        raise ValueError("dem must be a 2-D plane")
    z = np.pad(dem, 1, mode="reflect", reflect_type="odd")
    # x east (columns), y south (rows)
    gx = ((z[:-2, 2:] + 2.0 * z[1:-1, 2:] + z[2:, 2:])
          - (z[:-2, :-2] + 2.0 * z[1:-1, :-2] + z[2:, :-2])) / 8.0
    gy = ((z[2:, :-2] + 2.0 * z[2:, 1:-1] + z[2:, 2:])
          - (z[:-2, :-2] + 2.0 * z[:-2, 1:-1] + z[:-2, 2:])) / 8.0
    gx /= cell_size
    gy /= cell_size
    mag = np.hypot(gx, gy)
    slope = np.degrees(np.arctan(mag))
    flat = mag < 1e-9
    # downslope vector is (-gx, -gy); its north component is +gy
    aspect = np.degrees(np.arctan2(-gx, gy)) % 360.0
    aspect[flat] = 0.0
    return slope, aspect, flat


def _snowline(day, lat_plane, spec):
    seasonal = 0.5 * (1.0 + np.cos(2.0 * np.pi * (day - spec.snowline_min_day) / 365.0))
    return (spec.snowline_base
            + spec.snowline_amp * seasonal
            + spec.lat_gradient * (spec.lat0 - lat_plane))


def generate_scene(spec: SceneSpec):
    """Build (RasterCube, AuxLayers); every cell is valid except flat-cell aspect."""
    rows, cols, T = spec.rows, spec.cols, spec.n_days
    root = np.random.SeedSequence(spec.seed)
    rng_dem, rng_noise, rng_albedo, rng_angles = (
        np.random.default_rng(s) for s in root.spawn(4)
    )
    days = tuple(range(spec.day_start, spec.day_start + T))

    terrain_corr = max(4.0, max(rows, cols) / 4.0)
    dem = spec.relief * _unit_scaled(value_noise_2d(rows, cols, terrain_corr, rng_dem))
    slope, aspect, flat = derive_slope_aspect(dem, spec.cell_size)

    m_idx = np.arange(rows)[:, None]
    n_idx = np.arange(cols)[None, :]
    lat = (spec.lat0 - spec.cell_deg * m_idx) + 0.0 * n_idx
    lon = (spec.lon0 + spec.cell_deg * n_idx) + 0.0 * m_idx
    landcover = np.digitize(dem, [spec.relief / 3.0, 2.0 * spec.relief / 3.0]) + 1.0

    lo, hi = spec.value_range
    span = hi - lo
    values = np.empty((T, rows, cols), dtype=np.float32)
    albedo = np.empty((T, rows, cols), dtype=np.float32)
    for t, day in enumerate(days):
        sl = _snowline(float(day), lat, spec)
        index = 1.0 / (1.0 + np.exp(-(dem - sl) / spec.sigmoid_scale))
        if spec.noise_sigma > 0:
            noise = _zero_mean_unit(value_noise_2d(rows, cols, spec.corr_len, rng_noise))
            index = index + spec.noise_sigma * noise
        values[t] = clamp_to_range(lo + span * index, spec.value_range)
        alb = spec.albedo_coupling * index + 0.15 * (1.0 - spec.albedo_coupling)
        alb = alb + spec.albedo_noise * _zero_mean_unit(
            value_noise_2d(rows, cols, spec.corr_len, rng_albedo)
        )
        albedo[t] = clamp_to_range(alb, (0.0, 1.0))

    day_arr = np.asarray(days, dtype=np.float64)[:, None, None]
    tilt = _zero_mean_unit(value_noise_2d(rows, cols, terrain_corr, rng_angles))
    sun_zen = 62.0 + 12.0 * np.cos(2.0 * np.pi * (day_arr - 172.0) / 365.0) \
        + 0.4 * (lat - spec.lat0) + 0.5 * tilt
    sun_az = 175.0 + 25.0 * np.sin(2.0 * np.pi * (day_arr - spec.day_start) / 365.0) \
        + 2.0 * tilt
    sensor_zen = 30.0 + 6.0 * np.sin(2.0 * np.pi * (day_arr - spec.day_start) / 16.0) \
        + 3.0 * tilt
    sensor_az = 98.0 + 15.0 * np.sin(2.0 * np.pi * (day_arr - spec.day_start) / 16.0 + 1.0) \
        + 4.0 * tilt
    ones = np.ones((T, rows, cols), dtype=bool)

    def dyn(x, rng_):
        x = np.broadcast_to(x, (T, rows, cols))
        return Layer(clamp_to_range(x, rng_).astype(np.float32), ones.copy(), rng_)

    plane_true = np.ones((rows, cols), dtype=bool)
    aux = AuxLayers(
        static={
            "dem": Layer(dem.astype(np.float32), plane_true.copy(), (-1000.0, 10000.0)),
            "aspect": Layer(aspect.astype(np.float32), ~flat, (0.0, 360.0)),
            "slope": Layer(slope.astype(np.float32), plane_true.copy(), (0.0, 90.0)),
            "lat": Layer(lat.astype(np.float32), plane_true.copy(), (-90.0, 90.0)),
            "lon": Layer(lon.astype(np.float32), plane_true.copy(), (-180.0, 180.0)),
            "landcover": Layer(landcover.astype(np.float32), plane_true.copy(), (0.0, 255.0)),
        },
        dynamic={
            "sun_zenith": dyn(sun_zen, (0.0, 180.0)),
            "sun_azimuth": dyn(sun_az, (0.0, 360.0)),
            "sensor_zenith": dyn(sensor_zen, (0.0, 180.0)),
            "sensor_azimuth": dyn(sensor_az, (0.0, 360.0)),
            "albedo": Layer(albedo, ones.copy(), (0.0, 1.0)),
        },
        days=days,
    )
    cube = RasterCube(values, np.ones((T, rows, cols), dtype=bool), days,
                      spec.value_range, spec.tile_id)
    return cube, aux
