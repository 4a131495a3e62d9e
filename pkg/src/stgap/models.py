"""Model variants over the shared feature pipeline, and reconstruction.

Kinds and their feature sets (canonical order):

    mlr, rf, xgb : dem, aspect, slope, landcover, sun_azimuth, sun_zenith,
                   sensor_azimuth, sensor_zenith, albedo
    txgb         : xgb + day, temporal_nbr
    sxgb         : xgb + lat, lon, spatial_nbr
    stxgb        : all fourteen features

mlr is ordinary least squares with a tiny ridge for conditioning; rf is a
bagged ensemble of the same greedy trees with lambda = gamma = 0 (variance
reduction); the *xgb kinds are the boosted ensemble. Fitting normalizes
features to the training split's min/max; the parameters ride along with the
model so reconstruction applies the identical mapping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import gbt
from .errors import FormatError, StgapError
from .evaluation import EvalReport, metrics
from .features import (
    CANONICAL_FEATURES,
    FeatureMatrix,
    FeatureSpec,
    assemble_features,
    normalize_apply,
    normalize_params,
    split_train_test,
    spatial_neighbor_cube,
    temporal_neighbor_cube,
)
from .grid import AuxLayers, RasterCube, clamp_to_range

WRAPPER_FORMAT = "stgap-model"
WRAPPER_VERSION = 1

_BASE_FEATURES = (
    "dem", "aspect", "slope", "landcover",
    "sun_azimuth", "sun_zenith", "sensor_azimuth", "sensor_zenith", "albedo",
)
FEATURES_BY_KIND = {
    "mlr": _BASE_FEATURES,
    "rf": _BASE_FEATURES,
    "xgb": _BASE_FEATURES,
    "txgb": ("day",) + _BASE_FEATURES + ("temporal_nbr",),
    "sxgb": ("lat", "lon") + _BASE_FEATURES + ("spatial_nbr",),
    "stxgb": CANONICAL_FEATURES,
}
MODEL_KINDS = tuple(FEATURES_BY_KIND)
_RIDGE = 1e-8


@dataclass(frozen=True)
class RfParams:
    n_trees: int = 60
    max_depth: int = 12
    bootstrap: bool = True
    max_features: str = "sqrt"   # per-node sample: "sqrt" or "all"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.max_features not in ("sqrt", "all"):
            raise ValueError("max_features must be 'sqrt' or 'all'")


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    spec: FeatureSpec
    gbt: gbt.GbtParams = None
    rf: RfParams = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}")


def model_config(kind, features=None, sw=1, tw=1, normalize=True,
                 gbt_params=None, rf_params=None) -> ModelConfig:
    """Standard config for a kind; `features` overrides the preset set
    (ablation and window studies)."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"kind must be one of {MODEL_KINDS}")
    spec = FeatureSpec(
        features=tuple(features) if features is not None else FEATURES_BY_KIND[kind],
        sw=sw, tw=tw, normalize=normalize,
    )
    return ModelConfig(
        kind, spec,
        gbt=(gbt_params or gbt.GbtParams()) if kind.endswith("xgb") else None,
        rf=(rf_params or RfParams()) if kind == "rf" else None,
    )


def with_gbt_params(config: ModelConfig, **overrides) -> ModelConfig:
    """Copy a boosted config with some GbtParams fields replaced."""
    if config.gbt is None:
        raise ValueError(f"{config.kind} has no boosting parameters")
    return replace(config, gbt=replace(config.gbt, **overrides))


@dataclass
class FittedModel:
    """A trained learner plus everything reconstruction needs to reuse it."""

    kind: str
    spec: FeatureSpec
    norm: dict                    # feature -> (lo, hi); None when unnormalized
    learner: object               # GbtEnsemble | _RfModel | _MlrModel

    @property
    def feature_names(self):
        return self.spec.features


@dataclass
class _MlrModel:
    coef: np.ndarray              # per-feature slopes
    intercept: float
    fill: np.ndarray              # training column means for missing cells


@dataclass
class _RfModel:
    trees: list
    feature_names: tuple
    params: RfParams

    def importance(self) -> dict:
        total = {name: 0.0 for name in self.feature_names}
        for tree in self.trees:
            for f, gn in zip(tree.feat, tree.gain):
                if f >= 0:
                    total[self.feature_names[f]] += float(gn)
        return total


# --- learners -----------------------------------------------------------------

def fit_mlr(train: FeatureMatrix) -> _MlrModel:
    """Least squares on complete rows only; needs > n_features of them."""
    if train.target is None:
        raise StgapError("training matrix has no target")
    complete = ~train.missing.any(axis=1)
    n_complete = int(complete.sum())
    p = train.values.shape[1]
    if n_complete < p + 1:
        raise StgapError(
            f"linear fit needs at least {p + 1} complete rows, have {n_complete}"
        )
    x = train.values[complete]
    y = train.target[complete]
    a = np.hstack([x, np.ones((len(x), 1))])
    gram = a.T @ a + _RIDGE * np.eye(p + 1)
    beta = np.linalg.solve(gram, a.T @ y)
    ok = ~train.missing
    fill = np.array([
        train.values[ok[:, j], j].mean() if ok[:, j].any() else 0.0
        for j in range(p)
    ])
    return _MlrModel(beta[:p], float(beta[p]), fill)


def predict_mlr(model: _MlrModel, values, missing) -> np.ndarray:
    x = np.where(missing, model.fill, values)
    return x @ model.coef + model.intercept


def fit_rf(train: FeatureMatrix, params: RfParams, backend=None) -> _RfModel:
    """Bagged greedy trees on raw targets (lambda = gamma = 0)."""
    if train.target is None:
        raise StgapError("training matrix has no target")
    n = len(train)
    if n == 0:
        raise StgapError("empty training matrix")
    from .backend import get_backend
    impl = get_backend(backend)
    values = np.ascontiguousarray(train.values, dtype=np.float64)
    missing = np.ascontiguousarray(train.missing, dtype=bool)
    y = np.ascontiguousarray(train.target, dtype=np.float64)
    p = values.shape[1]
    k = p if params.max_features == "all" else max(1, int(np.sqrt(p)))
    tree_params = gbt.GbtParams(
        n_estimators=1, learning_rate=1.0, max_depth=params.max_depth,
        reg_lambda=0.0, gamma=0.0, min_child_weight=1.0,
    )
    trees = []
    for seq in np.random.SeedSequence(params.seed).spawn(params.n_trees):
        rng = np.random.default_rng(seq)
        if params.bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
            sub_values = values[rows]
            sub_missing = missing[rows]
            g = -y[rows]
        else:
            sub_values, sub_missing, g = values, missing, -y
        presort = gbt._presort(sub_values, sub_missing)

        def sampler(slots, rng=rng):
            if k == p:
                return None
            allowed = np.zeros((slots, p), dtype=bool)
            for s in range(slots):
                allowed[s, rng.choice(p, size=k, replace=False)] = True
            return allowed

        tree, _ = gbt.grow_tree(impl, sub_values, sub_missing, presort, g,
                                tree_params, feature_sampler=sampler)
        trees.append(tree)
    return _RfModel(trees, tuple(train.feature_names), params)


def predict_rf(model: _RfModel, values, missing, backend=None, threads=1) -> np.ndarray:
    ens = gbt.GbtEnsemble(0.0, 1.0, model.feature_names, model.trees)
    total = gbt.predict(ens, (values, missing), backend=backend, threads=threads)
    return total / len(model.trees)


# --- the shared pipeline ---------------------------------------------------------

def _fit_matrix(matrix: FeatureMatrix, config: ModelConfig, seed=0,
                backend=None) -> FittedModel:
    """Normalize (parameters from this matrix) and fit the configured learner."""
    norm = None
    if config.spec.normalize:
        norm = normalize_params(matrix)
        matrix = normalize_apply(matrix, norm)
    if config.kind == "mlr":
        learner = fit_mlr(matrix)
    elif config.kind == "rf":
        params = config.rf or RfParams()
        learner = fit_rf(matrix, replace(params, seed=params.seed + seed), backend)
    else:
        learner = gbt.fit(matrix, config.gbt or gbt.GbtParams(), backend)
    return FittedModel(config.kind, config.spec, norm, learner)


def predict_matrix(model: FittedModel, matrix: FeatureMatrix,
                   backend=None, threads=1) -> np.ndarray:
    """Apply the model's stored normalization, then its learner."""
    if tuple(matrix.feature_names) != tuple(model.feature_names):
        raise StgapError(
            f"matrix features {matrix.feature_names} != model features "
            f"{model.feature_names}"
        )
    if model.norm is not None:
        matrix = normalize_apply(matrix, model.norm)
    if model.kind == "mlr":
        return predict_mlr(model.learner, matrix.values, matrix.missing)
    if model.kind == "rf":
        return predict_rf(model.learner, matrix.values, matrix.missing,
                          backend, threads)
    return gbt.predict(model.learner, (matrix.values, matrix.missing),
                       backend, threads)


def fit_model(cube: RasterCube, aux: AuxLayers, config: ModelConfig,
              train_fraction=0.7, seed=0, backend=None, threads=1):
    """Assemble valid cells, split, fit on train, score on test (clamped).

    Returns (FittedModel, EvalReport). Normalization parameters come from
    the training split and are stored on the model.
    """
    raw_spec = replace(config.spec, normalize=False)
    matrix = assemble_features(cube, aux, raw_spec, which="valid")
    train, test = split_train_test(matrix, train_fraction, seed)
    if len(test) == 0:
        raise StgapError("train fraction leaves no test rows")
    fitted = _fit_matrix(train, config, seed=seed, backend=backend)
    pred = predict_matrix(fitted, test, backend=backend, threads=threads)
    pred = clamp_to_range(pred, cube.value_range)
    report = metrics(pred, test.target, model=config.kind, dataset=cube.tile_id)
    return fitted, report


def fit_on_cube(cube: RasterCube, aux: AuxLayers, config: ModelConfig,
                seed=0, backend=None) -> FittedModel:
    """Fit on every valid cell (no held-out split)."""
    raw_spec = replace(config.spec, normalize=False)
    matrix = assemble_features(cube, aux, raw_spec, which="valid")
    return _fit_matrix(matrix, config, seed=seed, backend=backend)


def reconstruct(cube: RasterCube, aux: AuxLayers, model: FittedModel,
                mode="single", backend=None, threads=1) -> RasterCube:
    """Fill every invalid cell with a clamped model prediction.

    Observed cells pass through bit-exactly. mode="iterative" re-feeds the
    filled cube into the neighbor features until the RMS change over filled
    cells drops below 1e-4 or five passes run.
    """
    if mode not in ("single", "iterative"):
        raise ValueError("mode must be 'single' or 'iterative'")
    if not (~cube.valid).any():
        return cube
    raw_spec = replace(model.spec, normalize=False)
    matrix = assemble_features(cube, aux, raw_spec, which="invalid")
    pred = clamp_to_range(
        predict_matrix(model, matrix, backend=backend, threads=threads),
        cube.value_range,
    )
    t, m, n = matrix.index[:, 0], matrix.index[:, 1], matrix.index[:, 2]
    values = cube.values.copy()
    values[t, m, n] = pred.astype(np.float32)
    if mode == "iterative":
        names = model.feature_names
        j_sn = names.index("spatial_nbr") if "spatial_nbr" in names else -1
        j_tn = names.index("temporal_nbr") if "temporal_nbr" in names else -1
        all_valid = np.ones_like(cube.valid)
        for _ in range(4):
            if j_sn < 0 and j_tn < 0:
                break
            vals = matrix.values.copy()
            miss = matrix.missing.copy()
            if j_sn >= 0:
                sn, has = spatial_neighbor_cube(values, all_valid, model.spec.sw)
                vals[:, j_sn] = sn[t, m, n]
                miss[:, j_sn] = ~has[t, m, n]
            if j_tn >= 0:
                tn, has = temporal_neighbor_cube(values, all_valid, model.spec.tw)
                vals[:, j_tn] = tn[t, m, n]
                miss[:, j_tn] = ~has[t, m, n]
            matrix = replace(matrix, values=vals, missing=miss)
            new_pred = clamp_to_range(
                predict_matrix(model, matrix, backend=backend, threads=threads),
                cube.value_range,
            )
            change = float(np.sqrt(np.mean((new_pred - pred) ** 2)))
            pred = new_pred
            values[t, m, n] = pred.astype(np.float32)
            if change < 1e-4:
                break
    return RasterCube(values, np.ones_like(cube.valid), cube.days,
                      cube.value_range, cube.tile_id, cube.layer_name)


# --- model files -----------------------------------------------------------------

def _learner_to_dict(model: FittedModel) -> dict:
    if model.kind == "mlr":
        return {
            "format": "stgap-mlr",
            "version": 1,
            "coef": [float(c) for c in model.learner.coef],
            "intercept": model.learner.intercept,
            "fill": [float(c) for c in model.learner.fill],
        }
    if model.kind == "rf":
        ens = gbt.GbtEnsemble(0.0, 1.0, model.feature_names, model.learner.trees)
        doc = gbt.model_to_dict(ens)
        return {
            "format": "stgap-rf",
            "version": 1,
            "trees": doc["trees"],
            "importance": doc["importance"],
            "n_trees": model.learner.params.n_trees,
            "max_depth": model.learner.params.max_depth,
            "bootstrap": model.learner.params.bootstrap,
            "max_features": model.learner.params.max_features,
            "seed": model.learner.params.seed,
        }
    return gbt.model_to_dict(model.learner)


def save_fitted(model: FittedModel, path) -> None:
    doc = {
        "format": WRAPPER_FORMAT,
        "version": WRAPPER_VERSION,
        "kind": model.kind,
        "features": list(model.feature_names),
        "windows": {"sw": model.spec.sw, "tw": model.spec.tw},
        "normalization": None if model.norm is None else {
            k: [v[0], v[1]] for k, v in model.norm.items()
        },
        "learner": _learner_to_dict(model),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_fitted(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: truncated or malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != WRAPPER_FORMAT:
        raise FormatError(f"{path}: not a {WRAPPER_FORMAT} document")
    if doc.get("version") != WRAPPER_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')!r}")
    for key in ("kind", "features", "windows", "learner"):
        if key not in doc:
            raise FormatError(f"{path}: missing field {key!r}")
    kind = doc["kind"]
    if kind not in MODEL_KINDS:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    features = tuple(doc["features"])
    spec = FeatureSpec(
        features=features,
        sw=int(doc["windows"].get("sw", 1)), tw=int(doc["windows"].get("tw", 1)),
        normalize=doc.get("normalization") is not None,
    )
    norm = doc.get("normalization")
    if norm is not None:
        norm = {k: (float(v[0]), float(v[1])) for k, v in norm.items()}
        if set(norm) != set(features):
            raise FormatError(f"{path}: normalization does not cover the features")
    payload = doc["learner"]
    if kind == "mlr":
        if payload.get("format") != "stgap-mlr":
            raise FormatError(f"{path}: learner payload is not stgap-mlr")
        learner = _MlrModel(np.array(payload["coef"], dtype=np.float64),
                            float(payload["intercept"]),
                            np.array(payload["fill"], dtype=np.float64))
        if learner.coef.shape != (len(features),):
            raise FormatError(f"{path}: coefficient count mismatch")
    elif kind == "rf":
        if payload.get("format") != "stgap-rf":
            raise FormatError(f"{path}: learner payload is not stgap-rf")
        trees = [gbt._tree_from_nodes(nodes, len(features))
                 for nodes in payload["trees"]]
        params = RfParams(
            n_trees=int(payload["n_trees"]), max_depth=int(payload["max_depth"]),
            bootstrap=bool(payload["bootstrap"]),
            max_features=payload["max_features"], seed=int(payload["seed"]),
        )
        learner = _RfModel(trees, features, params)
    else:
        learner = gbt.model_from_dict(payload)
        if tuple(learner.feature_names) != features:
            raise FormatError(f"{path}: learner features disagree with wrapper")
    return FittedModel(kind, spec, norm, learner)


def fitted_importance(model: FittedModel):
    """(feature, gain) pairs descending; boosted and rf models only."""
    if model.kind == "mlr":
        raise StgapError("importance is defined for tree models only")
    if model.kind == "rf":
        total = model.learner.importance()
        order = sorted(range(len(model.feature_names)),
                       key=lambda j: (-total[model.feature_names[j]], j))
        return [(model.feature_names[j], total[model.feature_names[j]])
                for j in order]
    return gbt.feature_importance(model.learner)
