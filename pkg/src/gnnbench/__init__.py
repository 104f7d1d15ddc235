from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("gnn-bench")
except PackageNotFoundError:
    __version__ = "dev"

from .graph import Dataset, SparseAdjacency, preprocess
from .models import ModelKind, ModelSpec, build_model, forward, param_count
from .protocol import ExperimentPlan, ResultTable, generate_split, run_experiment
from .storage import load_dataset, save_dataset
from .trainer import TrainConfig, TrainOutcome, train

__all__ = [
    "Dataset",
    "ExperimentPlan",
    "ModelKind",
    "ModelSpec",
    "ResultTable",
    "SparseAdjacency",
    "TrainConfig",
    "TrainOutcome",
    "__version__",
    "build_model",
    "forward",
    "generate_split",
    "load_dataset",
    "param_count",
    "preprocess",
    "run_experiment",
    "save_dataset",
    "train",
]
