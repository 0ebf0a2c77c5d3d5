"""Random forest toolkit: gain-ratio trees, OOB-weighted voting, and a
deterministic simulator of column-partitioned distributed training."""

from .dataset import Dataset, DatasetError, FeatureSubset, Schema, load_csv, load_schema
from .forest import Forest, predict_classification, predict_regression, train
from .sampling import DsiTable, build_dsi, oob_indices
from .tree import DecisionTree, Hyperparams, gain_ratio, predict_tree, train_tree

__all__ = [
    "Dataset", "DatasetError", "DecisionTree", "DsiTable", "FeatureSubset",
    "Forest", "Hyperparams", "Schema", "build_dsi", "gain_ratio", "load_csv",
    "load_schema", "oob_indices", "predict_classification",
    "predict_regression", "predict_tree", "train", "train_tree",
]
