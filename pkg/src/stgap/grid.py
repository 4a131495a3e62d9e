"""Gridded raster stacks: the in-memory cube/aux types and their file format.

A grid-stack file is a UTF-8 JSON header terminated by a newline and a NUL
byte, followed by raw float32 little-endian planes in header-declared order.
Static layers contribute one (rows x cols) plane, dynamic layers one plane
per time slice (t-major); every data plane is immediately followed by its
validity plane (one byte per cell, 0 or 1). The header carries a CRC-32 of
the whole payload so any byte corruption is detected deterministically.

Values at invalid cells are payload bytes like any other (round-trips are
bitwise), but every consumer in this package ignores them.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = "STGAP1"
DTYPE = "f32le"

# Canonical auxiliary layers and their value ranges. Angles are degrees;
# aspect/azimuth are compass bearings in [0, 360); landcover is a small
# integer category code stored as float like everything else.
STATIC_LAYERS = {
    "dem": (-1000.0, 10000.0),
    "aspect": (0.0, 360.0),
    "slope": (0.0, 90.0),
    "lat": (-90.0, 90.0),
    "lon": (-180.0, 180.0),
    "landcover": (0.0, 255.0),
}
DYNAMIC_LAYERS = {
    "sun_zenith": (0.0, 180.0),
    "sun_azimuth": (0.0, 360.0),
    "sensor_zenith": (0.0, 180.0),
    "sensor_azimuth": (0.0, 360.0),
    "albedo": (0.0, 1.0),
}

CUBE_LAYER = "ndsi"


def clamp_to_range(x, value_range):
    """Clamp a scalar or array into [lo, hi]. Idempotent."""
    lo, hi = value_range
    if not lo <= hi:
        raise ValueError(f"invalid range: {value_range}")
    return np.minimum(hi, np.maximum(lo, x))


def _check_days(days, n_times):
    days = tuple(int(d) for d in days)
    if len(days) != n_times:
        raise ValueError(f"expected {n_times} days, got {len(days)}")
    if any(b <= a for a, b in zip(days, days[1:])):
        raise ValueError("days must be strictly increasing")
    return days


def _check_plane_range(name, values, valid, value_range):
    """Reject valid cells outside the declared range (NaN counts as outside)."""
    lo, hi = value_range
    v = values[valid]
    ok = (v >= lo) & (v <= hi)
    if not ok.all():
        where = np.argwhere(valid)
        bad = tuple(int(i) for i in where[np.flatnonzero(~ok)[0]])
        raise ValueError(
            f"layer {name!r}: value {v[~ok][0]!r} at cell {bad} outside "
            f"range [{lo}, {hi}]"
        )


@dataclass(frozen=True)
class RasterCube:
    """A (n_times, rows, cols) float32 value cube with per-cell validity.

    `days` are strictly increasing integer day-of-year labels, one per slice.
    Invalid cells hold arbitrary storage; consumers must not read them.
    """

    values: np.ndarray
    valid: np.ndarray
    days: tuple
    value_range: tuple = (0.0, 1.0)
    tile_id: str = ""
    layer_name: str = CUBE_LAYER

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"cube must be (n_times, rows, cols), got {values.shape}")
        if valid.shape != values.shape:
            raise ValueError("validity shape differs from values shape")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "days", _check_days(self.days, values.shape[0]))
        lo, hi = self.value_range
        if not float(lo) <= float(hi):
            raise ValueError(f"invalid value range: {self.value_range}")
        object.__setattr__(self, "value_range", (float(lo), float(hi)))
        _check_plane_range(self.layer_name, values, valid, self.value_range)

    @property
    def n_times(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    def n_valid(self):
        return int(self.valid.sum())


@dataclass(frozen=True)
class Layer:
    """One named plane set: static (rows, cols) or dynamic (n_times, rows, cols).

    A None range defers to the canonical per-layer range tables above.
    """

    values: np.ndarray
    valid: np.ndarray
    value_range: tuple = None


@dataclass(frozen=True)
class AuxLayers:
    """Static terrain/location planes plus dynamic per-day geometry planes.

    static: dem, aspect, slope, lat, lon, landcover  -- (rows, cols)
    dynamic: sun_zenith, sun_azimuth, sensor_zenith, sensor_azimuth, albedo
             -- (n_times, rows, cols)
    """

    static: dict = field(default_factory=dict)
    dynamic: dict = field(default_factory=dict)
    days: tuple = ()

    def __post_init__(self):
        if set(self.static) != set(STATIC_LAYERS):
            raise ValueError(f"static layers must be {sorted(STATIC_LAYERS)}")
        if set(self.dynamic) != set(DYNAMIC_LAYERS):
            raise ValueError(f"dynamic layers must be {sorted(DYNAMIC_LAYERS)}")
        if len(self.days) < 1:
            raise ValueError("aux layers need at least one time slice")
        shape2 = np.asarray(self.static["dem"].values).shape
        for kind, registry in (("static", STATIC_LAYERS), ("dynamic", DYNAMIC_LAYERS)):
            table = getattr(self, kind)
            checked = {}
            for lname, layer in table.items():
                values = np.ascontiguousarray(layer.values, dtype=np.float32)
                valid = np.ascontiguousarray(layer.valid, dtype=bool)
                want = shape2 if kind == "static" else (len(self.days), *shape2)
                if values.shape != want or valid.shape != want:
                    raise ValueError(f"layer {lname!r}: shape {values.shape}, want {want}")
                rng = layer.value_range or registry[lname]
                _check_plane_range(lname, values, valid, rng)
                checked[lname] = Layer(values, valid, (float(rng[0]), float(rng[1])))
            table.clear()
            table.update(checked)
        object.__setattr__(self, "days", _check_days(self.days, len(self.days)))

    @property
    def shape(self):
        return next(iter(self.static.values())).values.shape


def cubes_bitwise_equal(a: RasterCube, b: RasterCube) -> bool:
    return (
        a.values.tobytes() == b.values.tobytes()
        and np.array_equal(a.valid, b.valid)
        and a.days == b.days
        and a.value_range == b.value_range
        and a.tile_id == b.tile_id
        and a.layer_name == b.layer_name
    )


# --- file format -----------------------------------------------------------

def _plane_bytes(values2d, valid2d):
    return values2d.astype("<f4", copy=False).tobytes() + valid2d.astype(np.uint8).tobytes()


def _layer_payload(layer_values, layer_valid, dynamic):
    if dynamic:
        return b"".join(
            _plane_bytes(layer_values[t], layer_valid[t])
            for t in range(layer_values.shape[0])
        )
    return _plane_bytes(layer_values, layer_valid)


def _write_stack(path, rows, cols, n_times, days, layers, tile_id):
    """layers: list of (name, kind, value_range, values, valid) in file order."""
    payload = b"".join(
        _layer_payload(values, valid, kind == "dynamic")
        for _, kind, _, values, valid in layers
    )
    header = {
        "magic": MAGIC,
        "rows": rows,
        "cols": cols,
        "n_times": n_times,
        "days": list(days),
        "layers": [
            {"name": name, "kind": kind, "range": [rng[0], rng[1]]}
            for name, kind, rng, _, _ in layers
        ],
        "dtype": DTYPE,
        "crc32": zlib.crc32(payload),
        "tile_id": tile_id,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n\x00" + payload
    with open(path, "wb") as fh:
        fh.write(blob)


def _read_header(blob, path):
    nul = blob.find(b"\x00")
    if nul < 0:
        raise FormatError(f"{path}: missing header terminator")
    raw = blob[:nul]
    if not raw.endswith(b"\n"):
        raise FormatError(f"{path}: header must end with newline before NUL")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from None
    if header.get("magic") != MAGIC:
        raise FormatError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get("dtype") != DTYPE:
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    for key in ("rows", "cols", "n_times", "days", "layers", "crc32"):
        if key not in header:
            raise FormatError(f"{path}: header missing field {key!r}")
    rows, cols, n_times = header["rows"], header["cols"], header["n_times"]
    if min(rows, cols, n_times) < 1:
        raise FormatError(f"{path}: degenerate dimensions {rows}x{cols}x{n_times}")
    return header, blob[nul + 1:]


def _read_stack(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = _read_header(blob, path)
    rows, cols, n_times = header["rows"], header["cols"], header["n_times"]
    try:
        days = _check_days(header["days"], n_times)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    plane = rows * cols * 5  # 4 data bytes + 1 validity byte per cell
    expect = sum(
        plane * (n_times if spec["kind"] == "dynamic" else 1)
        for spec in header["layers"]
    )
    if len(payload) != expect:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expect}"
        )
    if zlib.crc32(payload) != header["crc32"]:
        raise FormatError(f"{path}: payload checksum mismatch")

    layers = {}
    off = 0
    cell = rows * cols
    for spec in header["layers"]:
        name, kind = spec["name"], spec["kind"]
        rng = tuple(spec["range"])
        count = n_times if kind == "dynamic" else 1
        data = np.empty((count, rows, cols), dtype=np.float32)
        valid = np.empty((count, rows, cols), dtype=np.uint8)
        for t in range(count):
            data[t] = np.frombuffer(payload, "<f4", cell, off).reshape(rows, cols)
            off += cell * 4
            vplane = np.frombuffer(payload, np.uint8, cell, off).reshape(rows, cols)
            off += cell
            if not np.isin(vplane, (0, 1)).all():
                raise FormatError(f"{path}: layer {name!r}: validity byte not 0/1")
            valid[t] = vplane
        if kind == "static":
            data, valid = data[0], valid[0]
        try:
            _check_plane_range(name, data, valid.astype(bool), rng)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        layers[name] = (kind, rng, data, valid.astype(bool))
    return header, days, layers


def save_cube(cube: RasterCube, path) -> None:
    """Write a single-layer dynamic stack. Round-trips bitwise."""
    n_times, rows, cols = cube.shape
    _write_stack(
        path, rows, cols, n_times, cube.days,
        [(cube.layer_name, "dynamic", cube.value_range, cube.values, cube.valid)],
        cube.tile_id,
    )


def load_cube(path) -> RasterCube:
    header, days, layers = _read_stack(path)
    dynamic = [(n, v) for n, v in layers.items() if v[0] == "dynamic"]
    if len(layers) != 1 or len(dynamic) != 1:
        raise FormatError(f"{path}: a cube file holds exactly one dynamic layer")
    name, (_, rng, data, valid) = dynamic[0]
    return RasterCube(data, valid, days, rng, header.get("tile_id", ""), name)


def save_aux(aux: AuxLayers, path, tile_id="") -> None:
    rows, cols = aux.shape
    layers = [
        (name, "static", aux.static[name].value_range,
         aux.static[name].values, aux.static[name].valid)
        for name in STATIC_LAYERS
    ] + [
        (name, "dynamic", aux.dynamic[name].value_range,
         aux.dynamic[name].values, aux.dynamic[name].valid)
        for name in DYNAMIC_LAYERS
    ]
    _write_stack(path, rows, cols, len(aux.days), aux.days, layers, tile_id)


def load_aux(path) -> AuxLayers:
    _, days, layers = _read_stack(path)
    missing = (set(STATIC_LAYERS) | set(DYNAMIC_LAYERS)) - set(layers)
    if missing:
        raise FormatError(f"{path}: aux file missing layers {sorted(missing)}")
    static = {}
    dynamic = {}
    for name, (kind, rng, data, valid) in layers.items():
        want = "dynamic" if name in DYNAMIC_LAYERS else "static"
        if kind != want:
            raise FormatError(f"{path}: layer {name!r} must be {want}")
        (dynamic if kind == "dynamic" else static)[name] = Layer(data, valid, rng)
    return AuxLayers(static, dynamic, days)
