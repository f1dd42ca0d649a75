import importlib.resources
import json
import os
import pathlib
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple, Union

from .errors import ConfigError, ParseError
from .network import ConvSpec, NetConfig, TrainSchedule
from .spectral import HksConfig
from .tasks import TaskSpec

LOCAL_CONFIG = "graphdistill.json"

SECTIONS = (
    "hks",
    "network",
    "training",
    "tasks",
    "search",
    "learning_curve",
    "cross_validation",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every hyperparameter of a run, grouped the way the JSON file groups them"""

    hks: HksConfig = field(default_factory=HksConfig)
    kernel1: int = 3
    kernel2: int = 3
    filters1: int = 8
    filters2: int = 8
    fc_shared_units: int = 60
    head_units: int = 40
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    main_weight: float = 1.0
    aux_weight: float = 0.5
    search_trials: int = 20
    aux_weight_choices: Tuple[float, ...] = (0.1, 0.5, 1.0)
    corpus_size: int = 10000
    curve_sizes: Tuple[int, ...] = (500, 1000, 2000, 4000)
    curve_seeds: int = 3
    folds: int = 10

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.main_weight < 0 or self.aux_weight < 0:
            raise ConfigError("Task weights must be nonnegative")
        if self.search_trials < 1:
            raise ConfigError(f"search trials must be >= 1, got {self.search_trials}")

    def net_config(self, tasks: Sequence[TaskSpec], seed: int) -> NetConfig:
        return NetConfig(
            input_bins=self.hks.num_bins,
            input_steps=self.hks.num_steps,
            tasks=tuple(tasks),
            conv1=ConvSpec(self.kernel1, self.filters1),
            conv2=ConvSpec(self.kernel2, self.filters2),
            fc_shared_units=self.fc_shared_units,
            head_units=self.head_units,
            rng_seed=seed,
            learning_rate=self.learning_rate,
            betas=self.betas,
            eps=self.eps,
        )

    def schedule(self, seed: int) -> TrainSchedule:
        return TrainSchedule(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
        )

    def with_hks(self, **changes: Any) -> "ExperimentConfig":
        return replace(self, hks=replace(self.hks, **changes))

    def as_dict(self) -> Dict[str, Any]:
        return {
            "hks": self.hks.as_dict(),
            "network": {
                "kernel1": self.kernel1,
                "kernel2": self.kernel2,
                "filters1": self.filters1,
                "filters2": self.filters2,
                "fc_shared_units": self.fc_shared_units,
                "head_units": self.head_units,
            },
            "training": {
                "batch_size": self.batch_size,
                "max_epochs": self.max_epochs,
                "patience": self.patience,
                "learning_rate": self.learning_rate,
                "betas": list(self.betas),
                "eps": self.eps,
            },
            "tasks": {"main_weight": self.main_weight, "aux_weight": self.aux_weight},
            "search": {
                "trials": self.search_trials,
                "aux_weight_choices": list(self.aux_weight_choices),
            },
            "learning_curve": {
                "corpus_size": self.corpus_size,
                "sizes": list(self.curve_sizes),
                "seeds": self.curve_seeds,
            },
            "cross_validation": {"folds": self.folds},
        }

    @classmethod
    def from_dict(
        cls, d: Dict[str, Any], base: Optional["ExperimentConfig"] = None
    ) -> "ExperimentConfig":
        """Sections and keys missing from ``d`` are taken from ``base``"""
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"Unknown configuration sections: {sorted(unknown)}")
        merged = (base or cls()).as_dict()
        for section in SECTIONS:
            values = d.get(section, {})
            if not isinstance(values, dict):
                raise ConfigError(f'Section "{section}" must be an object')
            unknown = set(values) - set(merged[section])
            if unknown:
                raise ConfigError(f'Unknown keys in "{section}": {sorted(unknown)}')
            merged[section].update(values)
        try:
            network = merged["network"]
            training = merged["training"]
            return cls(
                hks=HksConfig.from_dict(merged["hks"]),
                kernel1=int(network["kernel1"]),
                kernel2=int(network["kernel2"]),
                filters1=int(network["filters1"]),
                filters2=int(network["filters2"]),
                fc_shared_units=int(network["fc_shared_units"]),
                head_units=int(network["head_units"]),
                batch_size=int(training["batch_size"]),
                max_epochs=int(training["max_epochs"]),
                patience=int(training["patience"]),
                learning_rate=float(training["learning_rate"]),
                betas=(float(training["betas"][0]), float(training["betas"][1])),
                eps=float(training["eps"]),
                main_weight=float(merged["tasks"]["main_weight"]),
                aux_weight=float(merged["tasks"]["aux_weight"]),
                search_trials=int(merged["search"]["trials"]),
                aux_weight_choices=tuple(
                    float(w) for w in merged["search"]["aux_weight_choices"]
                ),
                corpus_size=int(merged["learning_curve"]["corpus_size"]),
                curve_sizes=tuple(int(s) for s in merged["learning_curve"]["sizes"]),
                curve_seeds=int(merged["learning_curve"]["seeds"]),
                folds=int(merged["cross_validation"]["folds"]),
            )
        except (TypeError, ValueError, IndexError) as e:
            raise ConfigError(f"Invalid configuration value: {e}")


def load_config(
    path: Union[str, pathlib.Path], base: Optional[ExperimentConfig] = None
) -> ExperimentConfig:
    path = pathlib.Path(path)
    if not path.is_file():
        raise ParseError("Missing configuration file", path)
    try:
        with open(path) as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed configuration ({e.msg})", path, e.lineno)
    if not isinstance(document, dict):
        raise ParseError("Configuration must be a JSON object", path)
    return ExperimentConfig.from_dict(document, base or packaged_config)


def save_config(config: ExperimentConfig, path: Union[str, pathlib.Path]) -> None:
    with open(path, "w") as f:
        json.dump(config.as_dict(), f, indent=2)
        f.write("\n")


packaged_config = ExperimentConfig.from_dict(
    json.loads(
        importlib.resources.files("graphdistill").joinpath("defaults.json").read_text()
    ),
    ExperimentConfig(),
)

local_config: Optional[ExperimentConfig] = None
if os.path.exists(LOCAL_CONFIG):
    local_config = load_config(LOCAL_CONFIG, packaged_config)


def get_active_config() -> ExperimentConfig:
    if local_config is not None:
        return local_config
    return packaged_config
