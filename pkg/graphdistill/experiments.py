"""
Experiment harness: single-task vs multi-task runs, random hyperparameter
search, learning curves over the main-task label budget and k-fold cross
validation.
"""
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from . import network
from .data import (
    FeatureSet,
    LabeledDataset,
    SplitSpec,
    Splittable,
    featurize_dataset,
    kfold,
    split,
    split_indices,
)
from .errors import ConfigError, DataError, GraphDistillError, ShapeError, TrainingError
from .network import MultiTaskNet, metric_name, trunk_output_shape
from .settings import ExperimentConfig
from .spectral import HksConfig
from .tasks import TaskSpec, select_tasks
from .utils import mean_and_stderr

logger = logging.getLogger(__name__)

SINGLE_TASK = "single-task"
MULTI_TASK = "multi-task"
VARIANTS = (SINGLE_TASK, MULTI_TASK)

CURVE_HEADER = (
    "variant",
    "main_task",
    "train_size",
    "seed",
    "metric_name",
    "metric_value",
    "best_epoch",
    "wall_seconds",
)
CV_HEADER = (
    "variant",
    "main_task",
    "fold",
    "seed",
    "metric_name",
    "metric_value",
    "best_epoch",
    "wall_seconds",
)


def variant_tasks(
    catalog: Sequence[TaskSpec],
    main: str,
    aux: Sequence[str],
    variant: str,
    main_weight: float = 1.0,
    aux_weight: float = 0.5,
) -> Tuple[TaskSpec, ...]:
    if variant == SINGLE_TASK:
        return select_tasks(catalog, main, (), main_weight)
    if variant == MULTI_TASK:
        return select_tasks(catalog, main, aux, main_weight, aux_weight)
    raise ConfigError(f'Unknown variant "{variant}", expected one of {VARIANTS}')


@dataclass
class RunRecord:
    variant: str
    config: Dict[str, Any]
    tasks: List[Dict[str, Any]]
    seed: int
    #: split -> task -> metric
    metrics: Dict[str, Dict[str, float]] = field(default_factory=dict)
    best_epoch: int = 0
    wall_seconds: float = 0.0
    error: Optional[str] = None

    @property
    def main_task(self) -> str:
        return str(self.tasks[0]["name"])

    def main_metric(self, split_name: str) -> float:
        return self.metrics.get(split_name, {}).get(self.main_task, math.nan)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "config": self.config,
            "tasks": self.tasks,
            "seed": self.seed,
            "metrics": self.metrics,
            "best_epoch": self.best_epoch,
            "wall_seconds": self.wall_seconds,
            "error": self.error,
        }


def run_model(
    train_set: FeatureSet,
    val_set: FeatureSet,
    test_set: FeatureSet,
    tasks: Sequence[TaskSpec],
    config: ExperimentConfig,
    seed: int,
    variant: str,
) -> Tuple[RunRecord, MultiTaskNet]:
    """Trains one model and scores every task on every split that labels it"""
    start = time.perf_counter()
    net = MultiTaskNet(config.net_config(tasks, seed))
    result = network.train(net, train_set, val_set, tasks, config.schedule(seed))
    metrics = {}
    for split_name, features in (("train", train_set), ("val", val_set), ("test", test_set)):
        names = [t.name for t in tasks if features.label_count(t.name) > 0]
        metrics[split_name] = network.evaluate(net, features, names) if names else {}
    record = RunRecord(
        variant=variant,
        config=config.as_dict(),
        tasks=[dict(t.as_dict(), weight=t.weight) for t in tasks],
        seed=seed,
        metrics=metrics,
        best_epoch=result.best_epoch,
        wall_seconds=time.perf_counter() - start,
    )
    return record, net


def _failed_record(
    variant: str, config: ExperimentConfig, tasks: Sequence[TaskSpec], seed: int, error: Exception
) -> RunRecord:
    return RunRecord(
        variant=variant,
        config=config.as_dict(),
        tasks=[dict(t.as_dict(), weight=t.weight) for t in tasks],
        seed=seed,
        error=str(error),
    )


@dataclass(frozen=True)
class Trial:
    index: int
    config: ExperimentConfig
    aux: Tuple[str, ...]


@dataclass(frozen=True)
class SearchSpace:
    steps_choices: Tuple[int, ...] = (16, 32, 64, 128)
    bins_choices: Tuple[int, ...] = (16, 32, 64, 128)
    #: natural-log bounds of the log-uniform time ranges
    log_t_min: Tuple[float, float] = (-6.0, 1.0)
    log_t_max: Tuple[float, float] = (2.0, 6.0)
    kernel_choices: Tuple[int, ...] = (3, 5, 7)
    #: when set, each trial uses one auxiliary task drawn from these
    aux_choices: Tuple[str, ...] = ()
    aux_weight_choices: Tuple[float, ...] = ()
    num_trials: int = 20
    max_resamples: int = 1000

    def __post_init__(self) -> None:
        if self.num_trials < 1:
            raise ConfigError(f"num_trials must be >= 1, got {self.num_trials}")
        if self.log_t_min[1] >= self.log_t_max[0]:
            raise ConfigError("t_min range must lie below the t_max range")

    def sample(
        self,
        rng: np.random.Generator,
        base: ExperimentConfig,
        aux: Sequence[str] = (),
        index: int = 0,
    ) -> Trial:
        t_min = math.exp(rng.uniform(*self.log_t_min))
        t_max = math.exp(rng.uniform(*self.log_t_max))
        for _ in range(self.max_resamples):
            steps = int(rng.choice(self.steps_choices))
            bins = int(rng.choice(self.bins_choices))
            kernel1 = int(rng.choice(self.kernel_choices))
            kernel2 = int(rng.choice(self.kernel_choices))
            try:
                trunk_output_shape(bins, steps, kernel1, kernel2)
                break
            except ShapeError:
                continue
        else:
            raise ConfigError("Search space has no feasible input/kernel combination")
        chosen_aux = tuple(aux)
        if self.aux_choices:
            chosen_aux = (str(rng.choice(list(self.aux_choices))),)
        aux_weight = base.aux_weight
        if self.aux_weight_choices:
            aux_weight = float(rng.choice(self.aux_weight_choices))
        config = replace(
            base,
            hks=HksConfig(num_steps=steps, t_min=t_min, t_max=t_max, num_bins=bins),
            kernel1=kernel1,
            kernel2=kernel2,
            aux_weight=aux_weight,
        )
        return Trial(index=index, config=config, aux=chosen_aux)


@dataclass
class SearchResult:
    best: RunRecord
    best_trial: Trial
    records: List[RunRecord]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "best_trial": self.best_trial.index,
            "best": self.best.as_dict(),
            "trials": [r.as_dict() for r in self.records],
        }


def _improves(candidate: float, incumbent: float, higher_is_better: bool) -> bool:
    if math.isnan(candidate):
        return False
    if math.isnan(incumbent):
        return True
    return candidate > incumbent if higher_is_better else candidate < incumbent


def random_search(
    space: SearchSpace,
    splits: Tuple[LabeledDataset, LabeledDataset, LabeledDataset],
    main: str,
    aux: Sequence[str],
    seed: int,
    base_config: ExperimentConfig,
    variant: str = MULTI_TASK,
) -> SearchResult:
    """
    Trains ``space.num_trials`` sampled configurations and keeps the one with
    the best main-task validation metric (lowest MSE, highest accuracy); the
    earliest trial wins ties.
    """
    train_ds, val_ds, test_ds = splits
    higher_is_better = not train_ds.task(main).is_regression
    rng = np.random.default_rng(seed)
    records: List[RunRecord] = []
    best_index: Optional[int] = None
    trials: List[Trial] = []
    for index in range(space.num_trials):
        trial = space.sample(rng, base_config, aux, index)
        trials.append(trial)
        config = trial.config
        tasks = variant_tasks(
            train_ds.tasks, main, trial.aux, variant, config.main_weight, config.aux_weight
        )
        trial_seed = seed + index
        try:
            features = [featurize_dataset(ds, config.hks) for ds in (train_ds, val_ds, test_ds)]
            record, _ = run_model(*features, tasks, config, trial_seed, variant)
        except (TrainingError, ShapeError, DataError) as e:
            logger.warning("Trial %d failed: %s", index, e)
            record = _failed_record(variant, config, tasks, trial_seed, e)
        records.append(record)
        logger.info("Trial %d: val %s = %r", index, main, record.main_metric("val"))
        if record.error is None:
            incumbent = math.nan if best_index is None else records[best_index].main_metric("val")
            if best_index is None or _improves(record.main_metric("val"), incumbent, higher_is_better):
                best_index = index
    if best_index is None:
        raise TrainingError(f"All {space.num_trials} search trials failed")
    return SearchResult(best=records[best_index], best_trial=trials[best_index], records=records)


@dataclass(frozen=True)
class LearningCurveSpec:
    main_task: str
    aux_tasks: Tuple[str, ...]
    #: main-task label budgets; exclusive with ``fractions``
    sizes: Tuple[int, ...] = ()
    fractions: Tuple[float, ...] = ()
    seeds: Tuple[int, ...] = (0, 1, 2)
    variants: Tuple[str, ...] = VARIANTS

    def __post_init__(self) -> None:
        if bool(self.sizes) == bool(self.fractions):
            raise ConfigError("Give exactly one of sizes or fractions")
        ladder = self.sizes or self.fractions
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"Ladder must be strictly increasing: {ladder}")
        if any(f <= 0 or f > 1 for f in self.fractions):
            raise ConfigError(f"Fractions must lie in (0, 1]: {self.fractions}")
        if any(s < 1 for s in self.sizes):
            raise ConfigError(f"Sizes must be >= 1: {self.sizes}")
        if not self.seeds:
            raise ConfigError("At least one seed is required")
        for variant in self.variants:
            if variant not in VARIANTS:
                raise ConfigError(f'Unknown variant "{variant}"')

    def resolve_sizes(self, train_size: int) -> Tuple[int, ...]:
        if self.fractions:
            sizes = tuple(max(1, math.floor(f * train_size)) for f in self.fractions)
        else:
            sizes = self.sizes
        if sizes[-1] > train_size:
            raise DataError(
                f"Ladder size {sizes[-1]} exceeds the {train_size} training examples"
            )
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise DataError(f"Resolved ladder is not strictly increasing: {sizes}")
        return sizes


@dataclass(frozen=True)
class CurveRow:
    variant: str
    main_task: str
    train_size: int
    seed: int
    metric_name: str
    metric_value: float
    best_epoch: int
    wall_seconds: float
    error: Optional[str] = None

    def csv_row(self, timings: bool = False) -> Tuple[Any, ...]:
        return (
            self.variant,
            self.main_task,
            self.train_size,
            self.seed,
            self.metric_name,
            self.metric_value,
            self.best_epoch,
            self.wall_seconds if timings else None,
        )


@dataclass
class LearningCurveResult:
    rows: List[CurveRow]

    def summary(self) -> List[Dict[str, Any]]:
        """Mean and standard error per (variant, train size)"""
        cells: Dict[Tuple[str, int], List[float]] = {}
        for row in self.rows:
            cells.setdefault((row.variant, row.train_size), []).append(row.metric_value)
        summary = []
        for (variant, size), values in sorted(cells.items()):
            mean, stderr = mean_and_stderr(values)
            summary.append(
                {
                    "variant": variant,
                    "train_size": size,
                    "mean": mean,
                    "stderr": stderr,
                    "runs": len(values),
                    "failed": sum(1 for v in values if math.isnan(v)),
                }
            )
        return summary

    def mean(self, variant: str, train_size: int) -> float:
        for entry in self.summary():
            if entry["variant"] == variant and entry["train_size"] == train_size:
                return float(entry["mean"])
        raise KeyError((variant, train_size))

    def as_dict(self) -> Dict[str, Any]:
        return {
            "rows": [
                dict(zip(CURVE_HEADER, row.csv_row(timings=True)), error=row.error)
                for row in self.rows
            ],
            "summary": self.summary(),
        }


def run_curve_cell(
    features: FeatureSet,
    spec: LearningCurveSpec,
    config: ExperimentConfig,
    variant: str,
    size: int,
    seed: int,
) -> CurveRow:
    """
    One (variant, size, seed) cell. Both variants of a cell share the split,
    the trunk initialization and the shuffle seed.
    """
    main = features.task(spec.main_task)
    train_set, val_set, test_set = split(
        features,
        SplitSpec(main_task_budget=size, shuffle_seed=seed, main_task=spec.main_task),
    )
    tasks = variant_tasks(
        features.tasks, spec.main_task, spec.aux_tasks, variant, config.main_weight, config.aux_weight
    )
    start = time.perf_counter()
    try:
        record, _ = run_model(train_set, val_set, test_set, tasks, config, seed, variant)
        value, best_epoch, error = record.main_metric("test"), record.best_epoch, None
    except GraphDistillError as e:
        logger.warning("%s cell size=%d seed=%d failed: %s", variant, size, seed, e)
        value, best_epoch, error = math.nan, 0, str(e)
    return CurveRow(
        variant=variant,
        main_task=spec.main_task,
        train_size=size,
        seed=seed,
        metric_name=metric_name(main),
        metric_value=value,
        best_epoch=best_epoch,
        wall_seconds=time.perf_counter() - start,
        error=error,
    )


_worker_features: Optional[FeatureSet] = None


def _init_worker(features: FeatureSet, threads: int) -> None:
    global _worker_features
    _worker_features = features
    torch.set_num_threads(threads)


def _run_cell_in_worker(args: Tuple[LearningCurveSpec, ExperimentConfig, str, int, int]) -> CurveRow:
    assert _worker_features is not None
    return run_curve_cell(_worker_features, *args)


def learning_curve(
    spec: LearningCurveSpec,
    dataset: Union[LabeledDataset, FeatureSet],
    config: ExperimentConfig,
    workers: int = 1,
) -> LearningCurveResult:
    """
    Test metric of the main task for every variant, label budget and seed.
    Rows come back sorted by (variant, size, seed) whatever order the cells
    finished in.
    """
    if isinstance(dataset, FeatureSet):
        features = dataset
        config = replace(config, hks=features.hks)
    else:
        features = featurize_dataset(dataset, config.hks, workers)
    if len(features) < 10:
        raise DataError(f"Cannot split a dataset of {len(features)} examples (need >= 10)")
    train_size = len(split_indices(len(features), SplitSpec())[0])
    sizes = spec.resolve_sizes(train_size)
    cells = [
        (spec, config, variant, size, seed)
        for variant in spec.variants
        for size in sizes
        for seed in spec.seeds
    ]
    logger.info("Running %d learning-curve cells on %d workers", len(cells), workers)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(
            max_workers=min(workers, len(cells)),
            # torch thread pools are not fork-safe
            mp_context=multiprocessing.get_context("spawn"),
            initializer=_init_worker,
            initargs=(features, 1),
        ) as pool:
            rows = list(pool.map(_run_cell_in_worker, cells))
    else:
        rows = [run_curve_cell(features, *cell) for cell in cells]
    rows.sort(key=lambda r: (r.variant, r.train_size, r.seed))
    return LearningCurveResult(rows)


def holdout(ds: Splittable, seed: int, fraction: float = 1.0 / 9.0) -> Tuple[Splittable, Splittable]:
    """Splits off a validation part; 1/9 of a 9-fold remainder keeps 8:1:1"""
    n = len(ds)
    if n < 2:
        raise DataError(f"Cannot hold out a validation set from {n} examples")
    order = np.random.default_rng(seed).permutation(n)
    val_size = min(n - 1, max(1, int(round(n * fraction))))
    return ds.take(order[val_size:]), ds.take(order[:val_size])


def limit_main_labels(ds: Splittable, main: str, fraction: Optional[float]) -> Splittable:
    if fraction is None:
        return ds
    if not 0 < fraction <= 1:
        raise DataError(f"Label fraction must lie in (0, 1], got {fraction}")
    keep = max(1, math.floor(fraction * len(ds)))
    return ds.drop_labels(main, range(keep, len(ds)))


@dataclass
class CrossValidationResult:
    main_task: str
    seed: int
    #: variant -> one record per fold
    folds: Dict[str, List[RunRecord]]
    search: Dict[str, SearchResult] = field(default_factory=dict)

    def test_metrics(self, variant: str) -> List[float]:
        return [r.main_metric("test") for r in self.folds[variant]]

    def summary(self) -> Dict[str, Dict[str, float]]:
        summary = {}
        for variant in sorted(self.folds):
            mean, stderr = mean_and_stderr(self.test_metrics(variant))
            summary[variant] = {"mean": mean, "stderr": stderr}
        return summary

    def csv_rows(self, timings: bool = False) -> List[Tuple[Any, ...]]:
        rows = []
        for variant in sorted(self.folds):
            for fold, record in enumerate(self.folds[variant], start=1):
                task = TaskSpec.from_dict(record.tasks[0])
                rows.append(
                    (
                        variant,
                        self.main_task,
                        fold,
                        self.seed,
                        metric_name(task),
                        record.main_metric("test"),
                        record.best_epoch,
                        record.wall_seconds if timings else None,
                    )
                )
        return rows

    def as_dict(self) -> Dict[str, Any]:
        return {
            "main_task": self.main_task,
            "seed": self.seed,
            "summary": self.summary(),
            "folds": {v: [r.as_dict() for r in records] for v, records in self.folds.items()},
            "search": {v: s.as_dict() for v, s in self.search.items()},
        }


def cross_validate(
    dataset: LabeledDataset,
    main: str,
    aux: Sequence[str],
    config: ExperimentConfig,
    k: int = 10,
    seed: int = 0,
    variants: Sequence[str] = VARIANTS,
    search_space: Optional[SearchSpace] = None,
    label_fraction: Optional[float] = None,
    workers: int = 1,
) -> CrossValidationResult:
    """
    k-fold evaluation of each variant. Hyperparameters are searched on the
    first fold only (when ``search_space`` is given) and then replayed on
    every fold. Each training fold holds out 1/9 of itself for early stopping.
    """
    if len(dataset) < k:
        raise DataError(f"Cannot make {k} folds from {len(dataset)} examples")
    chosen: Dict[str, Tuple[ExperimentConfig, Tuple[str, ...]]] = {
        variant: (config, tuple(aux)) for variant in variants
    }
    searches: Dict[str, SearchResult] = {}
    if search_space is not None:
        first_train, first_test = kfold(dataset, k, seed)[0]
        inner_train, inner_val = holdout(first_train, seed)
        inner_train = limit_main_labels(inner_train, main, label_fraction)
        for variant in variants:
            result = random_search(
                search_space, (inner_train, inner_val, first_test), main, aux, seed, config, variant
            )
            searches[variant] = result
            chosen[variant] = (result.best_trial.config, result.best_trial.aux)
            logger.info("Fold 1 search picked trial %d for %s", result.best_trial.index, variant)

    folds: Dict[str, List[RunRecord]] = {}
    for variant in variants:
        variant_config, variant_aux = chosen[variant]
        features = featurize_dataset(dataset, variant_config.hks, workers)
        tasks = variant_tasks(
            features.tasks,
            main,
            variant_aux,
            variant,
            variant_config.main_weight,
            variant_config.aux_weight,
        )
        records = []
        for index, (train_part, test_set) in enumerate(kfold(features, k, seed)):
            train_set, val_set = holdout(train_part, seed + index)
            train_set = limit_main_labels(train_set, main, label_fraction)
            try:
                record, _ = run_model(
                    train_set, val_set, test_set, tasks, variant_config, seed + index, variant
                )
            except TrainingError as e:
                logger.warning("%s fold %d failed: %s", variant, index + 1, e)
                record = _failed_record(variant, variant_config, tasks, seed + index, e)
            records.append(record)
            logger.info(
                "%s fold %d/%d: test %s = %r", variant, index + 1, k, main, record.main_metric("test")
            )
        folds[variant] = records
    return CrossValidationResult(main_task=main, seed=seed, folds=folds, search=searches)
