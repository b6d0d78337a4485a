from .datasets import Dataset, gen_toy_dataset, load_dataset, save_dataset, train_test_split
from .classifier import LogisticClassifier, train_classifier, accuracy
from .metrics import mmd2_rbf, median_bandwidth
from .config import ConfigError, RunConfig, load_run_config, config_hash
from .pipeline import EvalReport, run_pipeline
from . import presets

__all__ = [
    "Dataset",
    "gen_toy_dataset",
    "load_dataset",
    "save_dataset",
    "train_test_split",
    "LogisticClassifier",
    "train_classifier",
    "accuracy",
    "mmd2_rbf",
    "median_bandwidth",
    "ConfigError",
    "RunConfig",
    "load_run_config",
    "config_hash",
    "EvalReport",
    "run_pipeline",
    "presets",
]
