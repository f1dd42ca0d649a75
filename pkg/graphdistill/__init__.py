from .data import (
    FeatureSet,
    LabeledDataset,
    LabeledExample,
    SplitSpec,
    featurize_dataset,
    generate_synthetic,
    kfold,
    load_dataset,
    parse_tu,
    save_dataset,
    split,
)
from .experiments import (
    LearningCurveSpec,
    RunRecord,
    SearchSpace,
    cross_validate,
    learning_curve,
    random_search,
)
from .graph import Graph, density, diameter, generate_ba, generate_er
from .network import MultiTaskNet, NetConfig, evaluate, train
from .settings import ExperimentConfig, get_active_config
from .spectral import HksConfig, featurize, heat_kernel_signature
from .tasks import TaskSpec, select_tasks

__all__ = [
    "ExperimentConfig",
    "FeatureSet",
    "Graph",
    "HksConfig",
    "LabeledDataset",
    "LabeledExample",
    "LearningCurveSpec",
    "MultiTaskNet",
    "NetConfig",
    "RunRecord",
    "SearchSpace",
    "SplitSpec",
    "TaskSpec",
    "cross_validate",
    "density",
    "diameter",
    "evaluate",
    "featurize",
    "featurize_dataset",
    "generate_ba",
    "generate_er",
    "generate_synthetic",
    "get_active_config",
    "heat_kernel_signature",
    "kfold",
    "learning_curve",
    "load_dataset",
    "parse_tu",
    "random_search",
    "save_dataset",
    "select_tasks",
    "split",
    "train",
]
