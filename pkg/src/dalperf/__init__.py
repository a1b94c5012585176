"""Divide-and-learn performance prediction for configurable software."""

from .data import (
    Dataset,
    DataError,
    OptionSchema,
    Scaler,
    SizeLevel,
    apply_scaler,
    fit_scaler,
    load_dataset,
    resolve_size_levels,
    save_dataset,
    split_train_test,
    synth_landscape,
)
from .divider import CartParams, CartTree, Division, extract_divisions, fit_cart, merge_small_divisions
from .evaluation import a12, depth_sweep, mre, parse_approach, run_experiment, scott_knott
from .local import LocalModelSpec, predict_local, train_local
from .pipeline import DalConfig, DalModel, dal_predict, dal_train, load_model, phase_report, save_model

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DataError",
    "OptionSchema",
    "Scaler",
    "SizeLevel",
    "apply_scaler",
    "fit_scaler",
    "load_dataset",
    "resolve_size_levels",
    "save_dataset",
    "split_train_test",
    "synth_landscape",
    "CartParams",
    "CartTree",
    "Division",
    "extract_divisions",
    "fit_cart",
    "merge_small_divisions",
    "a12",
    "depth_sweep",
    "mre",
    "parse_approach",
    "run_experiment",
    "scott_knott",
    "LocalModelSpec",
    "predict_local",
    "train_local",
    "DalConfig",
    "DalModel",
    "dal_predict",
    "dal_train",
    "load_model",
    "phase_report",
    "save_model",
]
