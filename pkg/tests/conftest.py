import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stgap.grid import AuxLayers, Layer, RasterCube

settings.register_profile(
    "suite", max_examples=50, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def build_cube(values, valid=None, days=None, value_range=(0.0, 1.0),
               tile_id="test", layer_name="ndsi"):
    """Cube from a nested list or array, all-valid by default."""
    values = np.asarray(values, dtype=np.float32)
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
    if days is None:
        days = tuple(range(1, values.shape[0] + 1))
    return RasterCube(values, valid, tuple(days), value_range, tile_id,
                      layer_name)


def build_aux(rows, cols, n_times, days=None, fill=None):
    """All-valid aux stack with simple defaults; `fill` overrides per layer."""
    fill = fill or {}
    days = tuple(days) if days is not None else tuple(range(1, n_times + 1))

    def static(name, default):
        v = np.full((rows, cols), fill.get(name, default), dtype=np.float32)
        return Layer(v, np.ones((rows, cols), dtype=bool))

    def dynamic(name, default):
        v = np.full((n_times, rows, cols), fill.get(name, default),
                    dtype=np.float32)
        return Layer(v, np.ones((n_times, rows, cols), dtype=bool))

    return AuxLayers(
        static={
            "dem": static("dem", 100.0),
            "aspect": static("aspect", 90.0),
            "slope": static("slope", 5.0),
            "lat": static("lat", 66.0),
            "lon": static("lon", -48.0),
            "landcover": static("landcover", 1.0),
        },
        dynamic={
            "sun_zenith": dynamic("sun_zenith", 60.0),
            "sun_azimuth": dynamic("sun_azimuth", 180.0),
            "sensor_zenith": dynamic("sensor_zenith", 10.0),
            "sensor_azimuth": dynamic("sensor_azimuth", 100.0),
            "albedo": dynamic("albedo", 0.5),
        },
        days=days,
    )


@pytest.fixture(scope="session")
def small_scene():
    """A 16x16x12 generated scene shared by pipeline-level tests."""
    from stgap.synth import SceneSpec, generate_scene

    return generate_scene(SceneSpec(rows=16, cols=16, n_days=12, seed=11))
