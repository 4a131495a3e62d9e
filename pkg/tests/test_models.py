import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import build_aux, build_cube
from stgap import gbt
from stgap.errors import FormatError, StgapError
from stgap.features import (
    CANONICAL_FEATURES,
    FeatureMatrix,
    FeatureSpec,
    assemble_features,
    split_train_test,
)
from stgap.models import (
    FEATURES_BY_KIND,
    MODEL_KINDS,
    RfParams,
    fit_mlr,
    fit_model,
    fit_on_cube,
    fit_rf,
    fitted_importance,
    load_fitted,
    model_config,
    predict_matrix,
    predict_mlr,
    predict_rf,
    reconstruct,
    save_fitted,
    with_gbt_params,
)


def make_matrix(values, missing, y=None, names=None):
    values = np.asarray(values, dtype=np.float64)
    n, p = values.shape
    names = names or tuple(f"f{j}" for j in range(p))
    index = np.zeros((n, 3), dtype=np.int64)
    index[:, 0] = np.arange(n)
    target = None if y is None else np.asarray(y, dtype=np.float64)
    return FeatureMatrix(values, np.asarray(missing, dtype=bool), index,
                         names, target)


# --- feature presets ------------------------------------------------------------

def test_feature_sets_by_kind():
    base = {"dem", "aspect", "slope", "landcover", "sun_azimuth", "sun_zenith",
            "sensor_azimuth", "sensor_zenith", "albedo"}
    assert set(FEATURES_BY_KIND["mlr"]) == base
    assert set(FEATURES_BY_KIND["rf"]) == base
    assert set(FEATURES_BY_KIND["xgb"]) == base
    assert set(FEATURES_BY_KIND["txgb"]) == base | {"day", "temporal_nbr"}
    assert set(FEATURES_BY_KIND["sxgb"]) == base | {"lat", "lon", "spatial_nbr"}
    assert tuple(FEATURES_BY_KIND["stxgb"]) == CANONICAL_FEATURES
    assert set(MODEL_KINDS) == {"mlr", "rf", "xgb", "txgb", "sxgb", "stxgb"}


def test_model_config_presets():
    cfg = model_config("stxgb", sw=2, tw=3)
    assert cfg.kind == "stxgb"
    assert cfg.spec.sw == 2 and cfg.spec.tw == 3
    assert cfg.gbt is not None and cfg.rf is None
    assert model_config("rf").rf is not None
    assert model_config("mlr").gbt is None
    with pytest.raises(ValueError):
        model_config("linear")


def test_with_gbt_params():
    cfg = with_gbt_params(model_config("xgb"), n_estimators=17, max_depth=2)
    assert cfg.gbt.n_estimators == 17
    assert cfg.gbt.max_depth == 2
    assert cfg.gbt.learning_rate == 0.1
    with pytest.raises(ValueError):
        with_gbt_params(model_config("mlr"), max_depth=3)
    with pytest.raises(ValueError):
        with_gbt_params(model_config("rf"), max_depth=3)


# --- linear learner -------------------------------------------------------------

def test_mlr_recovers_exact_linear_relation():
    rng = np.random.default_rng(0)
    x0 = rng.uniform(0, 100, size=40)
    x1 = rng.uniform(-5, 5, size=40)
    values = np.column_stack([x0, x1])
    y = 2.0 * x0 - 0.5 * x1 + 1.0
    train = make_matrix(values, np.zeros((40, 2), dtype=bool), y)
    model = fit_mlr(train)
    assert model.coef[0] == pytest.approx(2.0, abs=1e-5)
    assert model.coef[1] == pytest.approx(-0.5, abs=1e-5)
    assert model.intercept == pytest.approx(1.0, abs=1e-4)
    pred = predict_mlr(model, train.values, train.missing)
    assert pred == pytest.approx(y, abs=1e-6)


def test_mlr_handles_redundant_constant_column():
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0, 10, size=30)
    values = np.column_stack([x0, np.full(30, 3.0)])
    y = 0.7 * x0 + 2.0
    train = make_matrix(values, np.zeros((30, 2), dtype=bool), y)
    model = fit_mlr(train)
    pred = predict_mlr(model, train.values, train.missing)
    assert np.isfinite(model.coef).all()
    assert pred == pytest.approx(y, abs=1e-5)


def test_mlr_needs_enough_complete_rows():
    values = np.ones((5, 3))
    missing = np.zeros((5, 3), dtype=bool)
    missing[:2, 0] = True  # only 3 complete rows for p=3
    with pytest.raises(StgapError):
        fit_mlr(make_matrix(values, missing, np.ones(5)))


def test_mlr_fills_missing_with_training_means():
    x0 = np.array([0.0, 2.0, 4.0, 6.0, 10.0, 8.0])
    missing = np.zeros((6, 1), dtype=bool)
    missing[5, 0] = True  # hidden from the fill mean
    y = 3.0 * x0
    train = make_matrix(np.column_stack([x0]), missing, y)
    model = fit_mlr(train)
    assert model.fill[0] == pytest.approx(np.mean([0, 2, 4, 6, 10]), abs=1e-12)
    query = np.array([[123.0]])
    got = predict_mlr(model, query, np.array([[True]]))
    want = predict_mlr(model, np.array([[model.fill[0]]]), np.array([[False]]))
    assert got[0] == pytest.approx(want[0], abs=1e-12)


# --- random forest --------------------------------------------------------------

def test_single_unbagged_tree_equals_boosted_tree():
    rng = np.random.default_rng(2)
    values = (rng.integers(0, 32, size=(64, 3)) / 4.0).astype(np.float64)
    y = (rng.integers(0, 256, size=64) / 256.0).astype(np.float64)
    missing = np.zeros((64, 3), dtype=bool)
    train = make_matrix(values, missing, y)
    rf = fit_rf(train, RfParams(n_trees=1, bootstrap=False, max_features="all",
                                max_depth=4, seed=0))
    boosted = gbt.fit(train, gbt.GbtParams(
        n_estimators=1, learning_rate=1.0, max_depth=4, reg_lambda=0.0))
    pa = predict_rf(rf, values, missing)
    pb = gbt.predict(boosted, train)
    assert pa == pytest.approx(pb, abs=1e-9)


def test_rf_constant_target_is_exact():
    rng = np.random.default_rng(3)
    values = rng.random((32, 2))
    train = make_matrix(values, np.zeros((32, 2), dtype=bool), np.full(32, 0.5))
    rf = fit_rf(train, RfParams(n_trees=3, seed=1))
    pred = predict_rf(rf, values, np.zeros((32, 2), dtype=bool))
    assert np.all(pred == 0.5)


def test_rf_seed_determinism():
    rng = np.random.default_rng(4)
    values = rng.random((64, 4))
    y = values[:, 0] + rng.normal(0, 0.1, 64)
    missing = np.zeros((64, 4), dtype=bool)
    train = make_matrix(values, missing, y)
    a = predict_rf(fit_rf(train, RfParams(n_trees=5, seed=7)), values, missing)
    b = predict_rf(fit_rf(train, RfParams(n_trees=5, seed=7)), values, missing)
    c = predict_rf(fit_rf(train, RfParams(n_trees=5, seed=8)), values, missing)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rf_param_validation():
    with pytest.raises(ValueError):
        RfParams(n_trees=0)
    with pytest.raises(ValueError):
        RfParams(max_features="log2")


# --- cube-level pipeline ---------------------------------------------------------

def test_fit_model_is_reproducible(small_scene):
    cube, aux = small_scene
    cfg = with_gbt_params(model_config("xgb"), n_estimators=25)
    m1, r1 = fit_model(cube, aux, cfg, seed=5)
    m2, r2 = fit_model(cube, aux, cfg, seed=5)
    assert r1 == r2
    matrix = assemble_features(cube, aux, replace(cfg.spec, normalize=False))
    assert np.array_equal(predict_matrix(m1, matrix), predict_matrix(m2, matrix))


def test_fit_model_learns_small_scene(small_scene):
    cube, aux = small_scene
    cfg = with_gbt_params(model_config("stxgb"), n_estimators=40)
    _, report = fit_model(cube, aux, cfg, seed=0)
    assert report.model == "stxgb"
    assert report.dataset == cube.tile_id
    assert report.r2 > 0.5
    assert report.rmse < 0.2
    assert report.n == 3072 - int(np.floor(3072 * 0.7 + 0.5))


def test_fit_model_threads_do_not_change_report(small_scene):
    cube, aux = small_scene
    cfg = with_gbt_params(model_config("txgb"), n_estimators=20)
    _, r1 = fit_model(cube, aux, cfg, seed=3, threads=1)
    _, r8 = fit_model(cube, aux, cfg, seed=3, threads=8)
    assert r1 == r8


def test_fit_model_rejects_degenerate_split(small_scene):
    cube, aux = small_scene
    cfg = with_gbt_params(model_config("xgb"), n_estimators=5)
    with pytest.raises((StgapError, ValueError)):
        fit_model(cube, aux, cfg, train_fraction=1.0)


# --- reconstruction --------------------------------------------------------------

@pytest.fixture(scope="module")
def scene_model(small_scene):
    cube, aux = small_scene
    cfg = with_gbt_params(model_config("stxgb"), n_estimators=40)
    return fit_on_cube(cube, aux, cfg, seed=0)


def masked_copy(cube, fraction=0.3, seed=99):
    rng = np.random.default_rng(seed)
    valid = cube.valid & (rng.random(cube.shape) >= fraction)
    return replace(cube, valid=valid)


def test_reconstruct_fully_valid_cube_is_identity(small_scene, scene_model):
    cube, aux = small_scene
    out = reconstruct(cube, aux, scene_model)
    assert out is cube


def test_reconstruct_fills_all_gaps_in_range(small_scene, scene_model):
    cube, aux = small_scene
    masked = masked_copy(cube)
    out = reconstruct(masked, aux, scene_model)
    assert out.valid.all()
    lo, hi = cube.value_range
    assert out.values.min() >= lo and out.values.max() <= hi
    # observed cells pass through bit-exactly
    assert np.array_equal(out.values[masked.valid], masked.values[masked.valid])
    # filled cells should track the hidden truth reasonably well
    hidden = ~masked.valid
    err = np.abs(out.values[hidden].astype(np.float64)
                 - cube.values[hidden].astype(np.float64))
    assert err.mean() < 0.1


def test_reconstruct_without_neighbor_features_ignores_iterative(small_scene):
    cube, aux = small_scene
    cfg = with_gbt_params(model_config("xgb"), n_estimators=20)
    model = fit_on_cube(cube, aux, cfg, seed=1)
    masked = masked_copy(cube, seed=5)
    single = reconstruct(masked, aux, model, mode="single")
    iterative = reconstruct(masked, aux, model, mode="iterative")
    assert np.array_equal(single.values, iterative.values)


def test_reconstruct_iterative_refines_neighbors(small_scene, scene_model):
    cube, aux = small_scene
    masked = masked_copy(cube, fraction=0.4, seed=6)
    out = reconstruct(masked, aux, scene_model, mode="iterative")
    assert out.valid.all()
    assert np.array_equal(out.values[masked.valid], masked.values[masked.valid])
    lo, hi = cube.value_range
    assert out.values.min() >= lo and out.values.max() <= hi


def test_reconstruct_all_invalid_cube(small_scene, scene_model):
    cube, aux = small_scene
    empty = replace(cube, valid=np.zeros_like(cube.valid))
    out = reconstruct(empty, aux, scene_model)
    assert out.valid.all()
    assert np.isfinite(out.values).all()
    lo, hi = cube.value_range
    assert out.values.min() >= lo and out.values.max() <= hi


def test_reconstruct_mode_validation(small_scene, scene_model):
    cube, aux = small_scene
    with pytest.raises(ValueError):
        reconstruct(cube, aux, scene_model, mode="twice")


# --- wrapper files ----------------------------------------------------------------

def cheap_config(kind):
    if kind == "rf":
        return model_config(kind, rf_params=RfParams(n_trees=4, max_depth=6))
    if kind.endswith("xgb"):
        return with_gbt_params(model_config(kind), n_estimators=10)
    return model_config(kind)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_wrapper_round_trip(kind, small_scene, tmp_path):
    cube, aux = small_scene
    model, _ = fit_model(cube, aux, cheap_config(kind), seed=2)
    path = tmp_path / f"{kind}.json"
    save_fitted(model, path)
    again = load_fitted(path)
    assert again.kind == kind
    assert again.spec == model.spec
    assert again.norm == model.norm
    matrix = assemble_features(cube, aux, replace(model.spec, normalize=False))
    assert np.array_equal(predict_matrix(model, matrix),
                          predict_matrix(again, matrix))
    save_fitted(again, tmp_path / "again.json")
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()


def test_wrapper_rejects_bad_documents(small_scene, tmp_path):
    cube, aux = small_scene
    model, _ = fit_model(cube, aux, cheap_config("mlr"), seed=2)
    path = tmp_path / "m.json"
    save_fitted(model, path)
    doc = json.loads(path.read_text())

    cases = [
        lambda d: d.update(format="other"),
        lambda d: d.update(version=42),
        lambda d: d.pop("kind"),
        lambda d: d.update(kind="svm"),
        lambda d: d["normalization"].popitem(),
        lambda d: d["learner"].update(format="stgap-rf"),
    ]
    for mutate in cases:
        bad = json.loads(json.dumps(doc))
        mutate(bad)
        path.write_text(json.dumps(bad))
        with pytest.raises(FormatError):
            load_fitted(path)


def test_wrapper_rejects_truncation(small_scene, tmp_path):
    cube, aux = small_scene
    model, _ = fit_model(cube, aux, cheap_config("xgb"), seed=2)
    path = tmp_path / "m.json"
    save_fitted(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 3])
    with pytest.raises(FormatError):
        load_fitted(path)


def test_wrapper_feature_mismatch_detected(small_scene, tmp_path):
    cube, aux = small_scene
    model, _ = fit_model(cube, aux, cheap_config("xgb"), seed=2)
    path = tmp_path / "m.json"
    save_fitted(model, path)
    doc = json.loads(path.read_text())
    doc["features"] = list(reversed(doc["features"]))
    doc["normalization"] = {k: doc["normalization"][k] for k in doc["features"]}
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_fitted(path)


# --- importance -------------------------------------------------------------------

def test_fitted_importance_mlr_refuses(small_scene):
    cube, aux = small_scene
    model, _ = fit_model(cube, aux, cheap_config("mlr"), seed=2)
    with pytest.raises(StgapError):
        fitted_importance(model)


@pytest.mark.parametrize("kind", ["rf", "xgb"])
def test_fitted_importance_tree_models(kind, small_scene):
    cube, aux = small_scene
    model, _ = fit_model(cube, aux, cheap_config(kind), seed=2)
    pairs = fitted_importance(model)
    assert [name for name, _ in pairs] != []
    assert set(name for name, _ in pairs) == set(model.feature_names)
    gains = [g for _, g in pairs]
    assert gains == sorted(gains, reverse=True)
    assert all(g >= 0 for g in gains)


def test_prediction_rejects_wrong_feature_order(small_scene, scene_model):
    cube, aux = small_scene
    spec = FeatureSpec(features=("dem", "albedo"), normalize=False)
    matrix = assemble_features(cube, aux, spec)
    with pytest.raises(StgapError):
        predict_matrix(scene_model, matrix)


def test_split_then_fit_uses_train_norm(small_scene):
    # normalization parameters must come from the training split alone
    cube, aux = small_scene
    cfg = cheap_config("mlr")
    model, _ = fit_model(cube, aux, cfg, train_fraction=0.5, seed=11)
    raw = assemble_features(cube, aux, replace(cfg.spec, normalize=False))
    train, _ = split_train_test(raw, 0.5, seed=11)
    from stgap.features import normalize_params

    assert model.norm == normalize_params(train)
