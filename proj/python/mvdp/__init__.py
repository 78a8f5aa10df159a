"""Multi-view depth pose pipeline.

Synthetic depth rendering of procedural capsule bodies, dense body-part
classification, multi-camera point-cloud fusion and ridge pose regression.
The heavy lifting lives in the compiled ``_mvdp`` extension.
"""

from ._mvdp import (  # noqa: F401
    CameraIntrinsics,
    DatasetReader,
    Error,
    FcnClassifier,
    FcnTopology,
    OracleClassifier,
    RegressorModel,
    SmoothingConfig,
    avg_per_class_accuracy,
    backproject,
    default_thresholds,
    extract_features,
    feature_name,
    fit_ridge,
    fuse,
    generate_dataset,
    load_fcn,
    load_regressor,
    look_at,
    mean_joint_error,
    precision_at,
    predict,
    preprocess,
    project,
    quantize_depth,
    dequantize_depth,
    run_experiment,
    save_regressor,
    smooth,
    sym_eigenvalues,
    train_regressor,
    fit_pipeline_regressor,
)

FEATURES_PER_CLASS = 24

__all__ = [name for name in dir() if not name.startswith("_")]
