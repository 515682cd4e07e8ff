"""Lossy encoding driven by neural mutual-information estimates."""

from .baselines import GaussianNoiseEncoder, IdentityEncoder, RandomEncoder
from .data import LabeledDataset, SyntheticSpec, generate_synthetic, load_mnist_idx, split
from .evaluation import MlpClassifier, roc_auc
from .mi import MIEstimatorConfig, MutualInformationEstimator, train_mi_estimator
from .trainer import InfoShapeEncoder, TradeoffConfig, train_infoshape

__version__ = "0.1.0"

__all__ = [
    "GaussianNoiseEncoder",
    "IdentityEncoder",
    "InfoShapeEncoder",
    "LabeledDataset",
    "MIEstimatorConfig",
    "MlpClassifier",
    "MutualInformationEstimator",
    "RandomEncoder",
    "SyntheticSpec",
    "TradeoffConfig",
    "generate_synthetic",
    "load_mnist_idx",
    "roc_auc",
    "split",
    "train_infoshape",
    "train_mi_estimator",
]
