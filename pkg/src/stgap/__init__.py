"""Gap filling for gridded NDSI time series.

Reconstructs cloud-masked cells of a raster time-series cube with a
from-scratch second-order gradient-boosted tree regressor over terrain,
illumination, and spatiotemporal neighborhood features, then optionally
smooths each pixel's series with a Savitzky-Golay filter. Ships a synthetic
scene generator, cloud-mask simulation, and evaluation/sweep harnesses.
"""

from .backend import backend_name, get_backend
from .errors import FormatError, StgapError
from .evaluation import (
    ABLATION_PRESETS,
    EvalReport,
    HiddenTruth,
    MaskSpec,
    apply_mask,
    mask_and_score,
    metrics,
    per_day_report,
    sweep,
)
from .features import (
    CANONICAL_FEATURES,
    FeatureMatrix,
    FeatureSpec,
    assemble_features,
    split_train_test,
)
from .gbt import GbtEnsemble, GbtParams
from .gbt import fit as fit_gbt
from .gbt import predict as predict_gbt
from .grid import AuxLayers, Layer, RasterCube, load_aux, load_cube, save_aux, save_cube
from .models import (
    FEATURES_BY_KIND,
    MODEL_KINDS,
    FittedModel,
    ModelConfig,
    RfParams,
    fit_model,
    fit_on_cube,
    load_fitted,
    model_config,
    reconstruct,
    save_fitted,
    with_gbt_params,
)
from .smoothing import SgParams, sg_smooth_cube, sg_smooth_series
from .synth import SceneSpec, generate_scene

__version__ = "0.1.0"

__all__ = [
    "ABLATION_PRESETS",
    "AuxLayers",
    "CANONICAL_FEATURES",
    "EvalReport",
    "FEATURES_BY_KIND",
    "FeatureMatrix",
    "FeatureSpec",
    "FittedModel",
    "FormatError",
    "GbtEnsemble",
    "GbtParams",
    "HiddenTruth",
    "Layer",
    "MODEL_KINDS",
    "MaskSpec",
    "ModelConfig",
    "RasterCube",
    "RfParams",
    "SceneSpec",
    "SgParams",
    "StgapError",
    "apply_mask",
    "assemble_features",
    "backend_name",
    "fit_gbt",
    "fit_model",
    "fit_on_cube",
    "generate_scene",
    "get_backend",
    "load_aux",
    "load_cube",
    "load_fitted",
    "mask_and_score",
    "metrics",
    "model_config",
    "per_day_report",
    "predict_gbt",
    "reconstruct",
    "save_aux",
    "save_cube",
    "save_fitted",
    "split_train_test",
    "sweep",
    "with_gbt_params",
    "__version__",
]
