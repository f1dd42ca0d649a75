from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Sequence, Tuple

from .errors import ConfigError

DENSITY = "density"
DIAMETER = "diameter"
CLASS = "class"

METRIC_TASKS = (DENSITY, DIAMETER)


class TaskKind(str, Enum):
    """TaskKind enum represents what a task head predicts"""

    regression = "regression"
    classification = "classification"


class LossKind(str, Enum):
    squared_error = "squared-error"
    cross_entropy = "softmax-cross-entropy"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: TaskKind = TaskKind.regression
    #: only meaningful for classification
    num_classes: int = 0
    #: task weight alpha_k in the multi-task objective
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.name or "." in self.name:
            raise ConfigError(f'Invalid task name "{self.name}"')
        if self.weight < 0:
            raise ConfigError(f'Negative weight {self.weight} for task "{self.name}"')
        if self.kind == TaskKind.classification and self.num_classes < 2:
            raise ConfigError(
                f'Classification task "{self.name}" needs at least 2 classes'
            )

    @property
    def loss(self) -> LossKind:
        if self.kind == TaskKind.regression:
            return LossKind.squared_error
        return LossKind.cross_entropy

    @property
    def is_regression(self) -> bool:
        return self.kind == TaskKind.regression

    @property
    def output_units(self) -> int:
        return 1 if self.is_regression else self.num_classes

    def with_weight(self, weight: float) -> "TaskSpec":
        return replace(self, weight=weight)

    def as_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"name": self.name, "kind": self.kind.value}
        if not self.is_regression:
            d["num_classes"] = self.num_classes
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TaskSpec":
        try:
            return cls(
                name=str(d["name"]),
                kind=TaskKind(d.get("kind", TaskKind.regression.value)),
                num_classes=int(d.get("num_classes", 0)),
                weight=float(d.get("weight", 1.0)),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"Invalid task description {d!r}: {e}")


def regression_task(name: str, weight: float = 1.0) -> TaskSpec:
    return TaskSpec(name, TaskKind.regression, weight=weight)


def classification_task(name: str, num_classes: int, weight: float = 1.0) -> TaskSpec:
    return TaskSpec(name, TaskKind.classification, num_classes=num_classes, weight=weight)


def check_weights(tasks: Sequence[TaskSpec]) -> None:
    if not tasks:
        raise ConfigError("At least one task is required")
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise ConfigError(f"Duplicate task names in {names}")
    if not any(t.weight > 0 for t in tasks):
        raise ConfigError("At least one task must have a positive weight")


def select_tasks(
    catalog: Sequence[TaskSpec],
    main: str,
    aux: Sequence[str] = (),
    main_weight: float = 1.0,
    aux_weight: float = 0.5,
) -> Tuple[TaskSpec, ...]:
    """Main task first, then the auxiliary tasks in the given order"""
    by_name = {t.name: t for t in catalog}
    for name in [main, *aux]:
        if name not in by_name:
            raise ConfigError(f'Unknown task "{name}", expected one of {sorted(by_name)}')
    if main in aux:
        raise ConfigError(f'Task "{main}" is both main and auxiliary')
    tasks = (by_name[main].with_weight(main_weight),) + tuple(
        by_name[name].with_weight(aux_weight) for name in aux
    )
    check_weights(tasks)
    return tasks
