"""Neural-collapse metrics, simplex-ETF construction, and ETF-frozen training."""

from cfrg._cfrg import (
    ClassStats,
    DataError,
    NumericError,
    build_simplex_etf,
    class_statistics,
    effective_depth,
    etf_layer_weight,
    experiment_preset_json,
    load_idx,
    lr_at_epoch,
    nc1,
    nc2,
    nc3,
    ncc_classify,
    ncc_error,
    preset_names,
    run_experiment,
    trainable_param_count,
    verify_etf,
)

__all__ = [
    "ClassStats",
    "DataError",
    "NumericError",
    "build_simplex_etf",
    "class_statistics",
    "effective_depth",
    "etf_layer_weight",
    "experiment_preset_json",
    "load_idx",
    "lr_at_epoch",
    "nc1",
    "nc2",
    "nc3",
    "ncc_classify",
    "ncc_error",
    "preset_names",
    "run_experiment",
    "trainable_param_count",
    "verify_etf",
]
