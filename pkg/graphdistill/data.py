import json
import logging
import math
import pathlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    TypeVar,
    Union,
)

import numpy as np

from .errors import DataError, GraphError, ParseError
from .graph import (
    BaParams,
    ErParams,
    Graph,
    density,
    diameter,
    generate_ba,
    generate_er,
    is_connected,
)
from .spectral import HksConfig, featurize
from .tasks import (
    CLASS,
    DENSITY,
    DIAMETER,
    TaskSpec,
    classification_task,
    regression_task,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, pathlib.Path]

DATASET_FORMAT = 1
FEATURES_FORMAT = 1


@dataclass(frozen=True)
class LabeledExample:
    graph: Graph
    #: task name -> label; classification labels are coded as 0.0, 1.0, ...
    labels: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class LabeledDataset:
    examples: Tuple[LabeledExample, ...]
    tasks: Tuple[TaskSpec, ...]

    def __post_init__(self) -> None:
        catalog = {t.name: t for t in self.tasks}
        for i, example in enumerate(self.examples):
            for name, value in example.labels.items():
                if name not in catalog:
                    raise DataError(f'Example {i} has a label for unknown task "{name}"')
                if not math.isfinite(value):
                    raise DataError(f'Example {i} has a non-finite "{name}" label')
                task = catalog[name]
                if not task.is_regression and (
                    value < 0 or value != int(value) or value >= task.num_classes
                ):
                    raise DataError(
                        f'Example {i} has an invalid class label {value} for "{name}"'
                    )

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[LabeledExample]:
        return iter(self.examples)

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise DataError(f'Unknown task "{name}"')

    def take(self, indices: Sequence[int]) -> "LabeledDataset":
        return replace(self, examples=tuple(self.examples[int(i)] for i in indices))

    def drop_labels(self, task: str, positions: Sequence[int]) -> "LabeledDataset":
        drop = set(int(p) for p in positions)
        examples = tuple(
            LabeledExample(e.graph, {k: v for k, v in e.labels.items() if k != task})
            if i in drop
            else e
            for i, e in enumerate(self.examples)
        )
        return replace(self, examples=examples)

    def label_count(self, task: str) -> int:
        return sum(1 for e in self.examples if task in e.labels)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        names = [t.name for t in self.tasks]
        tasks = self.tasks + tuple(t for t in other.tasks if t.name not in names)
        return LabeledDataset(self.examples + other.examples, tasks)


@dataclass(frozen=True)
class FeatureSet:
    """HKS histograms of a dataset with labels laid out per task (NaN = absent)"""

    inputs: np.ndarray
    labels: Dict[str, np.ndarray]
    tasks: Tuple[TaskSpec, ...]
    hks: HksConfig

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise DataError(f'Unknown task "{name}"')

    def has_label(self, task: str) -> np.ndarray:
        if task not in self.labels:
            return np.zeros(len(self), dtype=bool)
        return ~np.isnan(self.labels[task])

    def take(self, indices: Sequence[int]) -> "FeatureSet":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            inputs=self.inputs[idx],
            labels={name: values[idx] for name, values in self.labels.items()},
        )

    def drop_labels(self, task: str, positions: Sequence[int]) -> "FeatureSet":
        labels = dict(self.labels)
        if task in labels:
            values = labels[task].copy()
            values[np.asarray(positions, dtype=np.int64)] = np.nan
            labels[task] = values
        return replace(self, labels=labels)

    def label_count(self, task: str) -> int:
        return int(self.has_label(task).sum())


Splittable = TypeVar("Splittable", LabeledDataset, FeatureSet)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    #: number of train examples that keep the main-task label
    main_task_budget: Optional[int] = None
    shuffle_seed: int = 0
    main_task: Optional[str] = None

    def __post_init__(self) -> None:
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
            raise DataError(f"Split fractions must be nonnegative and sum to 1: {fractions}")
        if self.main_task_budget is not None:
            if self.main_task_budget < 0:
                raise DataError(f"Negative main task budget {self.main_task_budget}")
            if self.main_task is None:
                raise DataError("A main task budget needs a main task")


def metric_labels(graph: Graph) -> Dict[str, float]:
    labels: Dict[str, float] = {}
    if graph.node_count >= 2:
        labels[DENSITY] = density(graph)
    if graph.node_count >= 1:
        labels[DIAMETER] = float(diameter(graph))
    return labels


def metric_tasks() -> Tuple[TaskSpec, ...]:
    return (regression_task(DENSITY), regression_task(DIAMETER))


def generate_synthetic(
    model: str,
    count: int,
    seed: int,
    er_params: Optional[ErParams] = None,
    ba_params: Optional[BaParams] = None,
) -> LabeledDataset:
    """Random graph corpus labelled with density and diameter"""
    if count < 1:
        raise DataError(f"count must be >= 1, got {count}")
    generate: Callable[[np.random.Generator], Graph]
    if model == "er":
        generate = partial(generate_er, er_params or ErParams())
    elif model == "ba":
        generate = partial(generate_ba, ba_params or BaParams())
    else:
        raise DataError(f'Unknown graph model "{model}", expected "er" or "ba"')

    examples = []
    for index in range(count):
        graph = generate(np.random.default_rng(seed + index))
        examples.append(LabeledExample(graph, metric_labels(graph)))
    logger.info("Generated %d %s graphs from seed %d", count, model, seed)
    return LabeledDataset(tuple(examples), metric_tasks())


def _read_lines(path: pathlib.Path) -> List[Tuple[int, str]]:
    if not path.is_file():
        raise ParseError("Missing file", path)
    with open(path) as f:
        lines = [(i + 1, line.strip()) for i, line in enumerate(f)]
    return [(line_no, line) for line_no, line in lines if line]


def _parse_int(text: str, what: str, path: pathlib.Path, line_no: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(f'Expected an integer {what}, got "{text.strip()}"', path, line_no)


def parse_tu(directory: PathLike, dataset_name: str) -> LabeledDataset:
    """
    Reads a benchmark in the TU text format: DS_A.txt (1-indexed directed edge
    list), DS_graph_indicator.txt (graph id per node) and DS_graph_labels.txt
    (class per graph). Node and edge attribute files are ignored.
    """
    directory = pathlib.Path(directory)
    labels_path = directory / f"{dataset_name}_graph_labels.txt"
    indicator_path = directory / f"{dataset_name}_graph_indicator.txt"
    edges_path = directory / f"{dataset_name}_A.txt"

    raw_labels = [
        _parse_int(line, "graph label", labels_path, line_no)
        for line_no, line in _read_lines(labels_path)
    ]
    graph_count = len(raw_labels)

    node_graph: List[int] = []
    node_local: List[int] = []
    sizes = [0] * graph_count
    for line_no, line in _read_lines(indicator_path):
        graph_id = _parse_int(line, "graph id", indicator_path, line_no)
        if not 1 <= graph_id <= graph_count:
            raise ParseError(
                f"Node {len(node_graph) + 1} references absent graph id {graph_id}",
                indicator_path,
                line_no,
            )
        node_graph.append(graph_id - 1)
        node_local.append(sizes[graph_id - 1])
        sizes[graph_id - 1] += 1

    edges: List[Set[Tuple[int, int]]] = [set() for _ in range(graph_count)]
    self_loops = 0
    for line_no, line in _read_lines(edges_path):
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f'Expected "u, v", got "{line}"', edges_path, line_no)
        u, v = (_parse_int(p, "node id", edges_path, line_no) for p in parts)
        for node in (u, v):
            if not 1 <= node <= len(node_graph):
                raise ParseError(f"Edge references absent node {node}", edges_path, line_no)
        graph_u, graph_v = node_graph[u - 1], node_graph[v - 1]
        if graph_u != graph_v:
            raise ParseError(
                f"Edge ({u}, {v}) crosses graphs {graph_u + 1} and {graph_v + 1}",
                edges_path,
                line_no,
            )
        if u == v:
            self_loops += 1
            continue
        a, b = node_local[u - 1], node_local[v - 1]
        edges[graph_u].add((min(a, b), max(a, b)))
    if self_loops:
        logger.warning("Dropped %d self-loops from %s", self_loops, edges_path)

    classes = sorted(set(raw_labels))
    class_index = {value: i for i, value in enumerate(classes)}
    examples = []
    for graph_index in range(graph_count):
        graph = Graph(sizes[graph_index], frozenset(edges[graph_index]))
        labels = {CLASS: float(class_index[raw_labels[graph_index]])}
        labels.update(metric_labels(graph))
        examples.append(LabeledExample(graph, labels))
    tasks = (classification_task(CLASS, max(2, len(classes))),) + metric_tasks()
    logger.info(
        "Parsed %d graphs with %d classes from %s", graph_count, len(classes), directory
    )
    return LabeledDataset(tuple(examples), tasks)


def split_indices(n: int, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.random.default_rng(spec.shuffle_seed).permutation(n)
    train_end = math.floor(round(n * spec.train_fraction, 9))
    val_end = math.floor(round(n * (spec.train_fraction + spec.val_fraction), 9))
    return order[:train_end], order[train_end:val_end], order[val_end:]


def split(ds: Splittable, spec: SplitSpec) -> Tuple[Splittable, Splittable, Splittable]:
    """
    Shuffled 8:1:1 split. With a main task budget s only the first s train
    examples keep the main-task label; auxiliary labels are kept everywhere.
    """
    if len(ds) < 10:
        raise DataError(f"Cannot split a dataset of {len(ds)} examples (need >= 10)")
    train_idx, val_idx, test_idx = split_indices(len(ds), spec)
    train = ds.take(train_idx)
    if spec.main_task_budget is not None:
        if spec.main_task_budget > len(train):
            raise DataError(
                f"Main task budget {spec.main_task_budget} exceeds the "
                f"{len(train)} training examples"
            )
        assert spec.main_task is not None
        train = train.drop_labels(
            spec.main_task, range(spec.main_task_budget, len(train))
        )
    return train, ds.take(val_idx), ds.take(test_idx)


def kfold(
    ds: Splittable, k: int, seed: int
) -> List[Tuple[Splittable, Splittable]]:
    """k contiguous folds of a single shuffle; earlier folds take the remainder"""
    n = len(ds)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    if n < k:
        raise DataError(f"Cannot make {k} folds from {n} examples")
    order = np.random.default_rng(seed).permutation(n)
    folds = []
    start = 0
    for i in range(k):
        size = n // k + (1 if i < n % k else 0)
        test_idx = order[start : start + size]
        train_idx = np.concatenate([order[:start], order[start + size :]])
        folds.append((ds.take(train_idx), ds.take(test_idx)))
        start += size
    return folds


def save_dataset(ds: LabeledDataset, path: PathLike) -> None:
    with open(path, "w") as f:
        header = {"format": DATASET_FORMAT, "tasks": [t.as_dict() for t in ds.tasks]}
        f.write(json.dumps(header) + "\n")
        for example in ds.examples:
            record = {
                "n": example.graph.node_count,
                "edges": [list(e) for e in example.graph.sorted_edges()],
                "labels": {
                    t.name: example.labels[t.name]
                    for t in ds.tasks
                    if t.name in example.labels
                },
            }
            f.write(json.dumps(record) + "\n")


def load_dataset(path: PathLike) -> LabeledDataset:
    path = pathlib.Path(path)
    if not path.is_file():
        raise ParseError("Missing dataset file", path)
    tasks: Optional[Tuple[TaskSpec, ...]] = None
    examples = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"Malformed JSON ({e.msg})", path, line_no)
            if not isinstance(record, dict):
                raise ParseError("Expected a JSON object", path, line_no)
            try:
                if tasks is None:
                    if record.get("format") != DATASET_FORMAT:
                        raise ParseError(
                            f"Unsupported dataset format {record.get('format')!r}",
                            path,
                            line_no,
                        )
                    tasks = tuple(TaskSpec.from_dict(t) for t in record["tasks"])
                    continue
                graph = Graph.from_edges(int(record["n"]), record["edges"])
                labels = {str(k): float(v) for k, v in record.get("labels", {}).items()}
            except ParseError:
                raise
            except (KeyError, TypeError, ValueError, IndexError, GraphError) as e:
                raise ParseError(f"Invalid record ({e})", path, line_no)
            examples.append(LabeledExample(graph, labels))
    if tasks is None:
        raise ParseError("Missing header line", path, 1)
    try:
        return LabeledDataset(tuple(examples), tasks)
    except DataError as e:
        raise ParseError(str(e), path)


def featurize_dataset(
    ds: LabeledDataset, cfg: HksConfig, workers: int = 1
) -> FeatureSet:
    graphs = [e.graph for e in ds.examples]
    if workers > 1 and len(graphs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            histograms = list(
                pool.map(partial(featurize, cfg=cfg), graphs, chunksize=64)
            )
    else:
        histograms = [featurize(g, cfg) for g in graphs]
    inputs = np.zeros((len(graphs), cfg.num_bins, cfg.num_steps), dtype=np.float64)
    for i, histogram in enumerate(histograms):
        inputs[i] = histogram
    labels = {}
    for task in ds.tasks:
        values = np.full(len(graphs), np.nan)
        for i, example in enumerate(ds.examples):
            if task.name in example.labels:
                values[i] = example.labels[task.name]
        labels[task.name] = values
    logger.info("Featurized %d graphs into %dx%d histograms", len(graphs), cfg.num_bins, cfg.num_steps)
    return FeatureSet(inputs=inputs, labels=labels, tasks=ds.tasks, hks=cfg)


def save_features(fs: FeatureSet, path: PathLike) -> None:
    meta = {
        "format": FEATURES_FORMAT,
        "hks": fs.hks.as_dict(),
        "tasks": [t.as_dict() for t in fs.tasks],
    }
    arrays = {f"label__{name}": values for name, values in fs.labels.items()}
    with open(path, "wb") as f:
        np.savez(f, inputs=fs.inputs, meta=np.array(json.dumps(meta)), **arrays)


def load_features(path: PathLike) -> FeatureSet:
    path = pathlib.Path(path)
    if not path.is_file():
        raise ParseError("Missing feature file", path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(archive["meta"].item())
            inputs = archive["inputs"]
            labels = {
                key[len("label__") :]: archive[key]
                for key in archive.files
                if key.startswith("label__")
            }
    except (OSError, ValueError, KeyError) as e:
        raise ParseError(f"Unreadable feature archive ({e})", path)
    if meta.get("format") != FEATURES_FORMAT:
        raise ParseError(f"Unsupported feature format {meta.get('format')!r}", path)
    tasks = tuple(TaskSpec.from_dict(t) for t in meta["tasks"])
    return FeatureSet(inputs=inputs, labels=labels, tasks=tasks, hks=HksConfig.from_dict(meta["hks"]))


def fit_er_params(ds: LabeledDataset) -> ErParams:
    """ER sampling distribution matching the node counts and densities of ``ds``"""
    sizes = np.array([e.graph.node_count for e in ds.examples], dtype=np.float64)
    densities = np.array(
        [density(e.graph) for e in ds.examples if e.graph.node_count >= 2]
    )
    if len(densities) == 0:
        raise DataError("Cannot fit ER parameters without graphs of 2 or more nodes")
    return ErParams(
        n_mean=float(sizes.mean()),
        n_std=float(sizes.std()),
        n_min=max(2, int(sizes.min())),
        p_mean=float(densities.mean()),
        p_std=float(densities.std()),
        p_min=min(1.0, max(float(densities.min()), 0.01)),
    )


def augment_with_synthetic(
    ds: LabeledDataset, count: int, seed: int, params: Optional[ErParams] = None
) -> LabeledDataset:
    """
    Appends ``count`` ER graphs drawn to mimic ``ds``. They carry only the
    metric labels, so they add auxiliary-task data without main-task labels.
    """
    params = params or fit_er_params(ds)
    synthetic = generate_synthetic("er", count, seed, er_params=params)
    logger.info("Augmenting %d graphs with %d synthetic graphs", len(ds), count)
    return ds.concat(synthetic)


def dataset_stats(ds: LabeledDataset) -> Dict[str, Any]:
    sizes = np.array([e.graph.node_count for e in ds.examples], dtype=np.float64)
    edges = np.array([e.graph.edge_count for e in ds.examples], dtype=np.float64)
    disconnected = sum(
        1 for e in ds.examples if e.graph.node_count and not is_connected(e.graph)
    )
    stats: Dict[str, Any] = {
        "graphs": len(ds),
        "mean_nodes": float(sizes.mean()) if len(ds) else 0.0,
        "max_nodes": int(sizes.max()) if len(ds) else 0,
        "mean_edges": float(edges.mean()) if len(ds) else 0.0,
        "disconnected_fraction": disconnected / len(ds) if len(ds) else 0.0,
        "labels": {t.name: ds.label_count(t.name) for t in ds.tasks},
    }
    for task in ds.tasks:
        values = np.array([e.labels[task.name] for e in ds.examples if task.name in e.labels])
        if task.is_regression and len(values):
            stats[f"mean_{task.name}"] = float(values.mean())
        elif len(values):
            classes, counts = np.unique(values.astype(np.int64), return_counts=True)
            stats[f"{task.name}_counts"] = {int(c): int(n) for c, n in zip(classes, counts)}
    return stats
