"""Feature assembly: turn a value cube plus auxiliary layers into a matrix.

Feature columns follow one canonical order everywhere (files, models,
importances):

    day, lat, lon, dem, aspect, slope, landcover,
    sun_azimuth, sun_zenith, sensor_azimuth, sensor_zenith, albedo,
    spatial_nbr, temporal_nbr

spatial_nbr is the mean of the valid cube values in the (2*sw+1)^2 window
around a cell at the same time slice, center excluded; temporal_nbr is the
mean over the same pixel at times t-tw..t+tw, t excluded. Both truncate at
the grid/time boundary and are missing when no valid contributor exists.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import StgapError
from .grid import AuxLayers, RasterCube

CANONICAL_FEATURES = (
    "day", "lat", "lon", "dem", "aspect", "slope", "landcover",
    "sun_azimuth", "sun_zenith", "sensor_azimuth", "sensor_zenith", "albedo",
    "spatial_nbr", "temporal_nbr",
)

_STATIC = ("lat", "lon", "dem", "aspect", "slope", "landcover")
_DYNAMIC = ("sun_azimuth", "sun_zenith", "sensor_azimuth", "sensor_zenith", "albedo")


@dataclass(frozen=True)
class FeatureSpec:
    """Which columns to assemble, neighbor window half-widths, normalization."""

    features: tuple = CANONICAL_FEATURES
    sw: int = 1
    tw: int = 1
    normalize: bool = True

    def __post_init__(self):
        unknown = [f for f in self.features if f not in CANONICAL_FEATURES]
        if unknown:
            raise ValueError(f"unknown features: {unknown}")
        if len(set(self.features)) != len(self.features):
            raise ValueError("duplicate features")
        if not self.features:
            raise ValueError("empty feature set")
        # store in canonical order regardless of how the caller listed them
        ordered = tuple(f for f in CANONICAL_FEATURES if f in self.features)
        object.__setattr__(self, "features", ordered)
        if self.sw < 1 or self.tw < 1:
            raise ValueError("window half-widths must be >= 1")


@dataclass(frozen=True)
class FeatureMatrix:
    """Row-per-cell feature table with an explicit missing-cell mask.

    Missing cells carry 0.0 in `values` but are only ever interpreted through
    `missing`; predictions must not depend on the stored placeholder. `target`
    is None for matrices assembled at cells with no observation.
    """

    values: np.ndarray          # (n, n_features) float64
    missing: np.ndarray         # (n, n_features) bool
    index: np.ndarray           # (n, 3) int32 rows of (t, m, n)
    feature_names: tuple
    target: np.ndarray = None   # (n,) float64 or None
    norm: dict = None           # feature -> (lo, hi) applied to this matrix

    def __post_init__(self):
        if self.values.shape != self.missing.shape:
            raise ValueError("values/missing shape mismatch")
        if self.values.shape[1] != len(self.feature_names):
            raise ValueError("feature count mismatch")
        if self.index.shape != (self.values.shape[0], 3):
            raise ValueError("index shape mismatch")
        if self.target is not None and self.target.shape != (self.values.shape[0],):
            raise ValueError("target shape mismatch")

    def __len__(self):
        return self.values.shape[0]


# --- neighbor means ---------------------------------------------------------
#
# The plane-wise implementations below must stay bitwise-identical to the
# per-cell loops (and to the dense-loop oracle in the tests): contributions
# accumulate in row-major window order, invalid cells add an exact 0.0, and
# the single division happens last.

def spatial_neighbor_cube(values, valid, sw):
    """Per-cell spatial neighbor mean over the whole cube.

    Returns (means float64, has bool); `means` is 0.0 where `has` is False.
    """
    v = np.where(valid, values.astype(np.float64), 0.0)
    ok = valid.astype(np.int64)
    T, R, C = v.shape
    acc = np.zeros((T, R, C))
    cnt = np.zeros((T, R, C), dtype=np.int64)
    for dm in range(-sw, sw + 1):
        for dn in range(-sw, sw + 1):
            if dm == 0 and dn == 0:
                continue
            src_m = slice(max(0, dm), R + min(0, dm))
            dst_m = slice(max(0, -dm), R + min(0, -dm))
            src_n = slice(max(0, dn), C + min(0, dn))
            dst_n = slice(max(0, -dn), C + min(0, -dn))
            acc[:, dst_m, dst_n] += v[:, src_m, src_n]
            cnt[:, dst_m, dst_n] += ok[:, src_m, src_n]
    has = cnt > 0
    means = np.zeros((T, R, C))
    np.divide(acc, cnt, out=means, where=has)
    return means, has


def temporal_neighbor_cube(values, valid, tw):
    """Per-cell temporal neighbor mean over the whole cube. Same contract."""
    v = np.where(valid, values.astype(np.float64), 0.0)
    ok = valid.astype(np.int64)
    T = v.shape[0]
    acc = np.zeros_like(v)
    cnt = np.zeros(v.shape, dtype=np.int64)
    for dt in range(-tw, tw + 1):
        if dt == 0:
            continue
        src = slice(max(0, dt), T + min(0, dt))
        dst = slice(max(0, -dt), T + min(0, -dt))
        acc[dst] += v[src]
        cnt[dst] += ok[src]
    has = cnt > 0
    means = np.zeros_like(v)
    np.divide(acc, cnt, out=means, where=has)
    return means, has


def spatial_neighbor_mean(cube: RasterCube, t, m, n, sw=1):
    """Neighbor mean at one cell, or None when no valid neighbor exists."""
    T, R, C = cube.shape
    if not (0 <= t < T and 0 <= m < R and 0 <= n < C):
        raise ValueError(f"cell ({t}, {m}, {n}) outside cube {cube.shape}")
    acc = 0.0
    cnt = 0
    for mm in range(max(0, m - sw), min(R, m + sw + 1)):
        for nn in range(max(0, n - sw), min(C, n + sw + 1)):
            if mm == m and nn == n:
                continue
            if cube.valid[t, mm, nn]:
                acc += float(cube.values[t, mm, nn])
                cnt += 1
    return acc / cnt if cnt else None


def temporal_neighbor_mean(cube: RasterCube, t, m, n, tw=1):
    """Temporal neighbor mean at one cell, or None when empty."""
    T, R, C = cube.shape
    if not (0 <= t < T and 0 <= m < R and 0 <= n < C):
        raise ValueError(f"cell ({t}, {m}, {n}) outside cube {cube.shape}")
    acc = 0.0
    cnt = 0
    for tt in range(max(0, t - tw), min(T, t + tw + 1)):
        if tt == t:
            continue
        if cube.valid[tt, m, n]:
            acc += float(cube.values[tt, m, n])
            cnt += 1
    return acc / cnt if cnt else None


# --- assembly ---------------------------------------------------------------

def _selection_index(cube, which):
    if isinstance(which, str):
        if which == "valid":
            sel = np.argwhere(cube.valid)
        elif which == "invalid":
            sel = np.argwhere(~cube.valid)
        else:
            raise ValueError(f"which must be 'valid', 'invalid', or an index list, got {which!r}")
    else:
        sel = np.asarray(which, dtype=np.int64).reshape(-1, 3)
        T, R, C = cube.shape
        if len(sel) and not (
            (sel >= 0).all()
            and (sel[:, 0] < T).all() and (sel[:, 1] < R).all() and (sel[:, 2] < C).all()
        ):
            raise ValueError("index list contains out-of-bounds cells")
    if len(sel) == 0:
        raise StgapError("empty cell selection")
    return sel.astype(np.int32)


def assemble_features(cube: RasterCube, aux: AuxLayers, spec: FeatureSpec,
                      which="valid") -> FeatureMatrix:
    """Build one row per selected cell; `which` is 'valid', 'invalid', or an
    explicit (t, m, n) list. Targets are attached only when every selected
    cell is observed."""
    if aux.shape != cube.shape[1:]:
        raise ValueError(f"aux shape {aux.shape} != cube plane shape {cube.shape[1:]}")
    if aux.days != cube.days:
        raise ValueError("aux and cube day axes differ")
    sel = _selection_index(cube, which)
    t, m, n = sel[:, 0], sel[:, 1], sel[:, 2]
    rows = len(sel)
    names = spec.features
    values = np.zeros((rows, len(names)))
    missing = np.zeros((rows, len(names)), dtype=bool)

    sn = tn = None
    if "spatial_nbr" in names:
        sn = spatial_neighbor_cube(cube.values, cube.valid, spec.sw)
    if "temporal_nbr" in names:
        tn = temporal_neighbor_cube(cube.values, cube.valid, spec.tw)
    days = np.asarray(cube.days, dtype=np.float64)

    for j, name in enumerate(names):
        if name == "day":
            values[:, j] = days[t]
        elif name in _STATIC:
            layer = aux.static[name]
            values[:, j] = layer.values[m, n]
            missing[:, j] = ~layer.valid[m, n]
        elif name in _DYNAMIC:
            layer = aux.dynamic[name]
            values[:, j] = layer.values[t, m, n]
            missing[:, j] = ~layer.valid[t, m, n]
        elif name == "spatial_nbr":
            values[:, j] = sn[0][t, m, n]
            missing[:, j] = ~sn[1][t, m, n]
        elif name == "temporal_nbr":
            values[:, j] = tn[0][t, m, n]
            missing[:, j] = ~tn[1][t, m, n]
    values[missing] = 0.0

    target = None
    if cube.valid[t, m, n].all():
        target = cube.values[t, m, n].astype(np.float64)

    matrix = FeatureMatrix(values, missing, sel, names, target)
    if spec.normalize:
        matrix = normalize_apply(matrix, normalize_params(matrix))
    return matrix


def normalize_params(matrix: FeatureMatrix) -> dict:
    """Per-feature (min, max) over present cells; all-missing columns get (0, 0)."""
    params = {}
    for j, name in enumerate(matrix.feature_names):
        ok = ~matrix.missing[:, j]
        if ok.any():
            col = matrix.values[ok, j]
            params[name] = (float(col.min()), float(col.max()))
        else:
            params[name] = (0.0, 0.0)
    return params


def normalize_apply(matrix: FeatureMatrix, params: dict) -> FeatureMatrix:
    """Map each column through (x - lo) / (hi - lo); constant columns go to 0.

    Values outside the parameter range map outside [0, 1] by design. Missing
    cells stay missing (their placeholder is re-zeroed).
    """
    out = matrix.values.copy()
    for j, name in enumerate(matrix.feature_names):
        lo, hi = params[name]
        if hi > lo:
            out[:, j] = (out[:, j] - lo) / (hi - lo)
        else:
            out[:, j] = 0.0
    out[matrix.missing] = 0.0
    return replace(matrix, values=out, norm=dict(params))


def split_train_test(matrix: FeatureMatrix, fraction, seed):
    """Uniform random row partition; train size is round(n * fraction)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {fraction}")
    nrows = len(matrix)
    k = int(np.floor(nrows * fraction + 0.5))
    perm = np.random.default_rng(seed).permutation(nrows)
    take_train = np.sort(perm[:k])
    take_test = np.sort(perm[k:])
    return _take(matrix, take_train), _take(matrix, take_test)


def _take(matrix: FeatureMatrix, rows) -> FeatureMatrix:
    return replace(
        matrix,
        values=matrix.values[rows],
        missing=matrix.missing[rows],
        index=matrix.index[rows],
        target=None if matrix.target is None else matrix.target[rows],
    )


# --- CSV interchange --------------------------------------------------------

def matrix_to_csv(matrix: FeatureMatrix, fh) -> None:
    """Header = feature names + t,m,n,target; missing cells are empty fields."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(list(matrix.feature_names) + ["t", "m", "n", "target"])
    for i in range(len(matrix)):
        row = [
            "" if matrix.missing[i, j] else repr(float(matrix.values[i, j]))
            for j in range(len(matrix.feature_names))
        ]
        row += [int(matrix.index[i, 0]), int(matrix.index[i, 1]), int(matrix.index[i, 2])]
        row.append("" if matrix.target is None else repr(float(matrix.target[i])))
        writer.writerow(row)


def matrix_from_csv(fh) -> FeatureMatrix:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or header[-4:] != ["t", "m", "n", "target"]:
        raise StgapError("feature CSV must end with t,m,n,target columns")
    names = tuple(header[:-4])
    vals, miss, idx, targ = [], [], [], []
    for row in reader:
        if len(row) != len(header):
            raise StgapError(f"feature CSV row has {len(row)} fields, want {len(header)}")
        cells = row[:len(names)]
        miss.append([c == "" for c in cells])
        vals.append([0.0 if c == "" else float(c) for c in cells])
        idx.append([int(x) for x in row[len(names):len(names) + 3]])
        targ.append(row[-1])
    if not vals:
        raise StgapError("feature CSV has no rows")
    target = None
    if all(c != "" for c in targ):
        target = np.array([float(c) for c in targ])
    elif any(c != "" for c in targ):
        raise StgapError("feature CSV mixes present and absent targets")
    return FeatureMatrix(
        np.array(vals), np.array(miss, dtype=bool),
        np.array(idx, dtype=np.int32), names, target,
    )
