from .api import (
    FAMILIES,
    GridSearchError,
    HyperParams,
    Model,
    ModelFormatError,
    deserialize,
    expand_grid,
    feature_importance,
    grid_search,
    load_model,
    predict_proba,
    save_model,
    serialize,
    stratified_folds,
    train,
)
from .boosting import GradientBoosting
from .forest import RandomForest
from .logistic import L1LogisticRegression, l1_optimality_gap, logistic_loss_grad
from .tree import Tree

__all__ = [
    "FAMILIES", "GridSearchError", "HyperParams", "Model", "ModelFormatError",
    "deserialize", "expand_grid", "feature_importance", "grid_search", "load_model",
    "predict_proba", "save_model", "serialize", "stratified_folds", "train",
    "GradientBoosting", "RandomForest", "L1LogisticRegression", "Tree",
    "l1_optimality_gap", "logistic_loss_grad",
]
