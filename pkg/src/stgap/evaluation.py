"""Scoring, gap masks, and the evaluation pipelines built on them.

Two determination coefficients are reported side by side: `r2` is the
standard 1 - SS_res/SS_tot, and `literal_r2` is the variance-ratio form
1 - var(pred about its own mean)/var(truth about its own mean), which this
toolkit's reference comparisons also tabulate. They agree when predictions
are unbiased and perfectly correlated with the truth, and diverge otherwise;
`r2` is the primary metric everywhere.

Report rows serialize to one fixed CSV schema:

    model,dataset,axis,point,mask_kind,mask_ratio,n,r2,literal_r2,rmse,mae,bias,flags
"""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import StgapError
from .grid import RasterCube
from .synth import value_noise_2d

REPORT_HEADER = (
    "model", "dataset", "axis", "point", "mask_kind", "mask_ratio",
    "n", "r2", "literal_r2", "rmse", "mae", "bias", "flags",
)

#: Feature combinations for the ablation sweep, smallest to full set.
ABLATION_PRESETS = {
    "model1": ("day", "lat", "lon", "dem", "aspect", "slope"),
    "model2": ("day", "lat", "lon", "dem", "aspect", "slope", "landcover"),
    "model3": ("day", "lat", "lon", "dem", "aspect", "slope", "albedo"),
    "model4": ("day", "lat", "lon", "dem", "aspect", "slope",
               "sun_azimuth", "sun_zenith", "sensor_azimuth", "sensor_zenith"),
    "model5": ("day", "lat", "lon", "dem", "aspect", "slope", "landcover",
               "sun_azimuth", "sun_zenith", "sensor_azimuth", "sensor_zenith"),
    "model6": ("day", "lat", "lon", "dem", "aspect", "slope", "landcover",
               "sun_azimuth", "sun_zenith", "sensor_azimuth", "sensor_zenith",
               "albedo"),
    "model7": ("day", "lat", "lon", "dem", "aspect", "slope", "landcover",
               "sun_azimuth", "sun_zenith", "sensor_azimuth", "sensor_zenith",
               "albedo", "spatial_nbr", "temporal_nbr"),
}


@dataclass(frozen=True)
class EvalReport:
    """Metrics plus context labels; one CSV row."""

    n: int
    r2: float
    literal_r2: float
    rmse: float
    mae: float
    bias: float
    model: str = ""
    dataset: str = ""
    axis: str = ""
    point: str = ""
    mask_kind: str = ""
    mask_ratio: float = None
    flags: str = ""

    def row(self):
        def num(x):
            return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))

        return [
            self.model, self.dataset, self.axis, self.point, self.mask_kind,
            "" if self.mask_ratio is None else repr(float(self.mask_ratio)),
            str(self.n), num(self.r2), num(self.literal_r2),
            num(self.rmse), num(self.mae), num(self.bias), self.flags,
        ]


def metrics(pred, truth, **labels) -> EvalReport:
    """Score predictions against truth; arrays must be equal-length, n >= 1."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("metrics need at least one pair")
    err = pred - truth
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    bias = float(np.mean(err))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    flags = ""
    if ss_tot == 0.0:
        r2 = literal = float("nan")
        flags = "nan_r2"
    else:
        r2 = 1.0 - float(np.sum(err * err)) / ss_tot
        literal = 1.0 - float(np.sum((pred - pred.mean()) ** 2)) / ss_tot
    return EvalReport(int(pred.size), r2, literal, rmse, mae, bias,
                      flags=flags, **labels)


def write_reports(reports, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for report in reports:
        writer.writerow(report.row())


# --- gap masks ----------------------------------------------------------------

@dataclass(frozen=True)
class MaskSpec:
    """How to hide observed cells: kind 'uniform' or 'blob'."""

    kind: str
    ratio: float
    seed: int
    corr_len: float = 8.0
    tolerance: float = 0.01

    def __post_init__(self):
        if self.kind not in ("uniform", "blob"):
            raise ValueError("mask kind must be 'uniform' or 'blob'")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"mask ratio must be in (0, 1), got {self.ratio}")
        if self.corr_len <= 0:
            raise ValueError("corr_len must be > 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


@dataclass(frozen=True)
class HiddenTruth:
    """Held-out cells: (t, m, n) indices and the values that were hidden."""

    t: np.ndarray
    m: np.ndarray
    n: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.value)

    def to_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "m", "n", "value"])
        for i in range(len(self)):
            writer.writerow([int(self.t[i]), int(self.m[i]), int(self.n[i]),
                             repr(float(self.value[i]))])

    @classmethod
    def from_csv(cls, fh):
        reader = csv.reader(fh)
        if next(reader, None) != ["t", "m", "n", "value"]:
            raise StgapError("truth table CSV must start with t,m,n,value")
        rows = [(int(r[0]), int(r[1]), int(r[2]), float(r[3])) for r in reader]
        if not rows:
            raise StgapError("truth table CSV has no rows")
        t, m, n, v = (np.array(col) for col in zip(*rows))
        return cls(t.astype(np.int32), m.astype(np.int32), n.astype(np.int32),
                   v.astype(np.float64))


def apply_mask(cube: RasterCube, spec: MaskSpec):
    """Hide round(ratio * n_valid) currently valid cells; returns
    (masked cube, hidden truth). Already invalid cells are never touched;
    hidden cells get value 0 in the masked cube so the truth never leaks."""
    valid_flat = np.flatnonzero(cube.valid.ravel())
    n_valid = valid_flat.size
    if n_valid == 0:
        raise StgapError("cube has no valid cells to mask")
    k = int(round(spec.ratio * n_valid))
    if k == 0 or k >= n_valid:
        raise StgapError(
            f"mask of {k} cells out of {n_valid} valid is degenerate"
        )
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform":
        chosen = valid_flat[rng.choice(n_valid, size=k, replace=False)]
    else:
        T, R, C = cube.shape
        field = np.empty((T, R, C))
        for t, child in enumerate(np.random.SeedSequence(spec.seed).spawn(T)):
            field[t] = value_noise_2d(R, C, spec.corr_len,
                                      np.random.default_rng(child))
        scores = field.ravel()[valid_flat]
        order = np.argsort(scores, kind="stable")
        chosen = valid_flat[order[scores.size - k:]]
        chosen = np.sort(chosen)
    t, m, n = np.unravel_index(chosen, cube.shape)
    order = np.lexsort((n, m, t))
    t, m, n = t[order], m[order], n[order]
    hidden = HiddenTruth(t.astype(np.int32), m.astype(np.int32),
                         n.astype(np.int32),
                         cube.values[t, m, n].astype(np.float64))
    values = cube.values.copy()
    valid = cube.valid.copy()
    values[t, m, n] = 0.0
    valid[t, m, n] = False
    masked = RasterCube(values, valid, cube.days, cube.value_range,
                        cube.tile_id, cube.layer_name)
    return masked, hidden


def achieved_ratio(cube: RasterCube, masked: RasterCube) -> float:
    """Fraction of the cube's valid cells hidden in the masked version."""
    before = cube.valid.sum()
    return float((before - masked.valid.sum()) / before)


# --- pipelines ------------------------------------------------------------------

def mask_and_score(cube: RasterCube, aux, config, mask_spec: MaskSpec,
                   sg_params=None, seed=0) -> EvalReport:
    """Mask, train on what remains, reconstruct, optionally smooth, score at
    the hidden cells only."""
    from . import models  # deferred: models imports this module

    masked, hidden = apply_mask(cube, mask_spec)
    fitted = models.fit_on_cube(masked, aux, config, seed=seed)
    rec = models.reconstruct(masked, aux, fitted)
    if sg_params is not None:
        from .smoothing import sg_smooth_cube
        rec = sg_smooth_cube(rec, masked.valid, sg_params)
    pred = rec.values[hidden.t, hidden.m, hidden.n].astype(np.float64)
    return metrics(
        pred, hidden.value, model=config.kind, dataset=cube.tile_id,
        mask_kind=mask_spec.kind, mask_ratio=mask_spec.ratio,
    )


def per_day_report(pred: RasterCube, truth, hidden_mask=None):
    """One report per day with at least one scored cell.

    `truth` is a RasterCube or a HiddenTruth table. For cube truth the scored
    cells default to those valid in both cubes; a bool hidden_mask narrows
    them further.
    """
    if isinstance(truth, HiddenTruth):
        reports = []
        for t in np.unique(truth.t):
            rows = truth.t == t
            pred_vals = pred.values[truth.t[rows], truth.m[rows], truth.n[rows]]
            reports.append(metrics(
                pred_vals.astype(np.float64), truth.value[rows],
                dataset=pred.tile_id, axis="day",
                point=str(pred.days[int(t)]),
            ))
        return reports
    if truth.shape != pred.shape:
        raise ValueError("prediction and truth cubes differ in shape")
    cells = truth.valid & pred.valid
    if hidden_mask is not None:
        cells = cells & hidden_mask
    reports = []
    for t in range(pred.shape[0]):
        sel = cells[t]
        if not sel.any():
            continue
        reports.append(metrics(
            pred.values[t][sel].astype(np.float64),
            truth.values[t][sel].astype(np.float64),
            dataset=pred.tile_id, axis="day", point=str(pred.days[t]),
        ))
    return reports


def sweep(cube: RasterCube, aux, axis, grid, seed, base_config=None,
          train_fraction=0.7, threads=1):
    """Fit/evaluate a model per grid point; reports come back in grid order.

    axis 'params': grid maps gbt parameter names to value lists (cartesian
    product in listed order). axis 'windows': grid has 'sw'/'tw' lists.
    axis 'train-fraction': grid is a list of fractions. axis 'ablation':
    grid is ignored; the seven feature presets run in order.
    """
    from . import models  # deferred: models imports this module

    if base_config is None:
        base_config = models.model_config("stxgb")
    points = []
    if axis == "params":
        names = list(grid)
        for combo in itertools.product(*(grid[k] for k in names)):
            label = ",".join(f"{k}={v}" for k, v in zip(names, combo))
            config = models.with_gbt_params(base_config, **dict(zip(names, combo)))
            points.append((label, config, train_fraction))
    elif axis == "windows":
        for sw in grid["sw"]:
            for tw in grid["tw"]:
                config = replace(
                    base_config,
                    spec=replace(base_config.spec, sw=int(sw), tw=int(tw)),
                )
                points.append((f"sw={sw},tw={tw}", config, train_fraction))
    elif axis == "train-fraction":
        for frac in grid:
            points.append((f"fraction={frac}", base_config, float(frac)))
    elif axis == "ablation":
        for name, feats in ABLATION_PRESETS.items():
            config = replace(
                base_config, spec=replace(base_config.spec, features=feats),
            )
            points.append((name, config, train_fraction))
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")

    def run(point):
        label, config, fraction = point
        _, report = models.fit_model(cube, aux, config, fraction, seed)
        return replace(report, axis=axis, point=label)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, points))
    return [run(point) for point in points]
