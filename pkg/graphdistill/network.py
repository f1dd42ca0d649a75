"""
Shared-trunk multi-task convolutional network.

The trunk h(.; theta) maps a 1 x B x T HKS histogram through two
conv + ReLU + 2x2 max-pool stages and a shared dense layer; every task k has
its own head g_k(.; theta_k) = dense(40) + ReLU + linear output. Training
minimizes sum_k alpha_k * mean_{i in I_k} L_k over the examples labelled for
each task.
"""
import copy
import json
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import FeatureSet
from .errors import ConfigError, DataError, ParseError, ShapeError, TrainingError
from .spectral import HksConfig
from .tasks import TaskSpec, check_weights

logger = logging.getLogger(__name__)

DTYPE = torch.float64
KERNEL_SIZES = (3, 5, 7)
CHECKPOINT_FORMAT = 1
PREDICT_CHUNK = 512
# relative gradient errors are measured against at least this magnitude
GRADIENT_FLOOR = 1e-4

Gradients = Dict[str, torch.Tensor]
Scaling = Dict[str, Tuple[float, float]]


@dataclass(frozen=True)
class ConvSpec:
    kernel: int = 3
    filters: int = 8


def pooled(size: int) -> int:
    # 2x2 pooling with floor division; a dimension of 1 passes through
    return size // 2 if size >= 2 else size


def trunk_output_shape(bins: int, steps: int, kernel1: int, kernel2: int) -> Tuple[int, int]:
    height, width = bins, steps
    for kernel in (kernel1, kernel2):
        height, width = height - kernel + 1, width - kernel + 1
        if height < 1 or width < 1:
            raise ShapeError(
                f"Input {bins}x{steps} collapses under kernels {kernel1} and {kernel2}"
            )
        height, width = pooled(height), pooled(width)
    return height, width


@dataclass(frozen=True)
class NetConfig:
    input_bins: int
    input_steps: int
    tasks: Tuple[TaskSpec, ...]
    conv1: ConvSpec = ConvSpec()
    conv2: ConvSpec = ConvSpec()
    fc_shared_units: int = 60
    head_units: int = 40
    rng_seed: int = 0
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self) -> None:
        for conv in (self.conv1, self.conv2):
            if conv.kernel not in KERNEL_SIZES:
                raise ConfigError(f"Kernel size {conv.kernel} not in {KERNEL_SIZES}")
            if conv.filters < 1:
                raise ConfigError(f"Filter count must be >= 1, got {conv.filters}")
        if self.fc_shared_units < 1 or self.head_units < 1:
            raise ConfigError("Dense layer sizes must be >= 1")
        check_weights(self.tasks)
        self.trunk_shape()

    def trunk_shape(self) -> Tuple[int, int, int]:
        height, width = trunk_output_shape(
            self.input_bins, self.input_steps, self.conv1.kernel, self.conv2.kernel
        )
        return self.conv2.filters, height, width

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise ConfigError(f'Unknown task "{name}"')

    def as_dict(self) -> Dict[str, Any]:
        return {
            "input_bins": self.input_bins,
            "input_steps": self.input_steps,
            "conv1": {"kernel": self.conv1.kernel, "filters": self.conv1.filters},
            "conv2": {"kernel": self.conv2.kernel, "filters": self.conv2.filters},
            "fc_shared_units": self.fc_shared_units,
            "head_units": self.head_units,
            "tasks": [dict(t.as_dict(), weight=t.weight) for t in self.tasks],
            "rng_seed": self.rng_seed,
            "learning_rate": self.learning_rate,
            "betas": list(self.betas),
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NetConfig":
        try:
            return cls(
                input_bins=int(d["input_bins"]),
                input_steps=int(d["input_steps"]),
                tasks=tuple(TaskSpec.from_dict(t) for t in d["tasks"]),
                conv1=ConvSpec(**d["conv1"]),
                conv2=ConvSpec(**d["conv2"]),
                fc_shared_units=int(d["fc_shared_units"]),
                head_units=int(d["head_units"]),
                rng_seed=int(d["rng_seed"]),
                learning_rate=float(d["learning_rate"]),
                betas=(float(d["betas"][0]), float(d["betas"][1])),
                eps=float(d["eps"]),
            )
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ConfigError(f"Invalid network configuration: {e}")


def _glorot_limit(param: torch.Tensor) -> float:
    receptive_field = 1
    for size in param.shape[2:]:
        receptive_field *= size
    fan_in = param.shape[1] * receptive_field
    fan_out = param.shape[0] * receptive_field
    return math.sqrt(6.0 / (fan_in + fan_out))


class MultiTaskNet(nn.Module):
    def __init__(self, config: NetConfig) -> None:
        super().__init__()
        self.config = config
        self.conv1 = nn.Conv2d(1, config.conv1.filters, config.conv1.kernel, dtype=DTYPE)
        self.conv2 = nn.Conv2d(
            config.conv1.filters, config.conv2.filters, config.conv2.kernel, dtype=DTYPE
        )
        filters, height, width = config.trunk_shape()
        self.shared = nn.Linear(filters * height * width, config.fc_shared_units, dtype=DTYPE)
        self.heads = nn.ModuleDict()
        for task in config.tasks:
            self.heads[task.name] = nn.Sequential(
                nn.Linear(config.fc_shared_units, config.head_units, dtype=DTYPE),
                nn.ReLU(),
                nn.Linear(config.head_units, task.output_units, dtype=DTYPE),
            )
        #: regression task -> (mean, std) of the training targets
        self.target_scaling: Scaling = {}
        self.steps = 0
        self.reset_parameters(config.rng_seed)
        self.optimizer = torch.optim.Adam(
            self.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps
        )

    def reset_parameters(self, seed: int) -> None:
        """
        Glorot-uniform weights and zero biases drawn in registration order:
        trunk first, then the heads in task order. Two networks with the same
        seed and trunk therefore share their trunk initialization.
        """
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("bias"):
                    param.zero_()
                    continue
                limit = _glorot_limit(param)
                sample = torch.rand(param.shape, generator=generator, dtype=DTYPE)
                param.copy_((2.0 * sample - 1.0) * limit)

    def representation(self, inputs: torch.Tensor) -> torch.Tensor:
        expected = (1, self.config.input_bins, self.config.input_steps)
        if inputs.dim() != 4 or tuple(inputs.shape[1:]) != expected:
            raise ShapeError(
                f"Expected input of shape (batch, {', '.join(map(str, expected))}), "
                f"got {tuple(inputs.shape)}"
            )
        x = inputs
        for conv in (self.conv1, self.conv2):
            x = F.relu(conv(x))
            x = F.max_pool2d(x, kernel_size=(min(2, x.shape[2]), min(2, x.shape[3])))
        return F.relu(self.shared(torch.flatten(x, 1)))

    def forward(self, inputs: torch.Tensor) -> Dict[str, torch.Tensor]:
        h = self.representation(inputs)
        outputs = {}
        for task in self.config.tasks:
            y = self.heads[task.name](h)
            outputs[task.name] = y.squeeze(1) if task.is_regression else y
        return outputs

    def adam_step(self, grads: Gradients, epoch: Optional[int] = None) -> None:
        for name, param in self.named_parameters():
            if tuple(grads[name].shape) != tuple(param.shape):
                raise ShapeError(f"Gradient shape mismatch for {name}")
            param.grad = grads[name].detach().clone()
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        self.steps += 1
        for name, param in self.named_parameters():
            if not bool(torch.isfinite(param).all()):
                raise TrainingError(f"Parameter {name} became non-finite", epoch)

    def fit_target_scaling(self, train_set: FeatureSet) -> None:
        self.target_scaling = {}
        for task in self.config.tasks:
            if not task.is_regression:
                continue
            values = train_set.labels.get(task.name, np.array([]))
            values = values[~np.isnan(values)]
            if len(values) == 0:
                self.target_scaling[task.name] = (0.0, 1.0)
                continue
            std = float(values.std())
            self.target_scaling[task.name] = (float(values.mean()), std if std > 1e-12 else 1.0)


@dataclass
class Batch:
    #: batch x 1 x B x T
    inputs: torch.Tensor
    #: task -> labels (standardized for regression, class index for classification)
    labels: Dict[str, torch.Tensor]
    #: task -> rows that belong to I_k
    masks: Dict[str, torch.Tensor]

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


def make_batch(
    features: FeatureSet,
    indices: Sequence[int],
    tasks: Sequence[TaskSpec],
    scaling: Optional[Scaling] = None,
) -> Batch:
    idx = np.asarray(indices, dtype=np.int64)
    inputs = torch.from_numpy(np.ascontiguousarray(features.inputs[idx])).to(DTYPE).unsqueeze(1)
    labels = {}
    masks = {}
    for task in tasks:
        raw = features.labels.get(task.name)
        values = np.full(len(idx), np.nan) if raw is None else raw[idx]
        mask = ~np.isnan(values)
        values = np.where(mask, values, 0.0)
        if task.is_regression and scaling and task.name in scaling:
            mean, std = scaling[task.name]
            values = np.where(mask, (values - mean) / std, 0.0)
        labels[task.name] = torch.from_numpy(values).to(DTYPE)
        masks[task.name] = torch.from_numpy(mask)
    return Batch(inputs=inputs, labels=labels, masks=masks)


def multitask_loss(
    outputs: Dict[str, torch.Tensor], batch: Batch, tasks: Sequence[TaskSpec]
) -> torch.Tensor:
    """
    sum_k alpha_k * mean over the batch rows labelled for task k of L_k.
    Tasks without labelled rows in the batch contribute 0.
    """
    total = torch.zeros((), dtype=DTYPE)
    labelled = False
    for task in tasks:
        mask = batch.masks.get(task.name)
        if mask is None or not bool(mask.any()):
            continue
        labelled = True
        if task.weight == 0:
            continue
        predicted = outputs[task.name][mask]
        target = batch.labels[task.name][mask]
        if task.is_regression:
            term = ((predicted - target) ** 2).mean()
        else:
            term = F.cross_entropy(predicted, target.long())
        total = total + task.weight * term
    if not labelled:
        raise DataError("Every task mask in the batch is empty")
    return total


def loss_and_gradients(
    net: MultiTaskNet,
    batch: Batch,
    tasks: Optional[Sequence[TaskSpec]] = None,
    epoch: Optional[int] = None,
) -> Tuple[float, Gradients]:
    tasks = net.config.tasks if tasks is None else tasks
    loss = multitask_loss(net(batch.inputs), batch, tasks)
    if not bool(torch.isfinite(loss)):
        raise TrainingError(f"Loss is non-finite ({float(loss)})", epoch)
    names, params = zip(*net.named_parameters())
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, params, allow_unused=True)
    else:
        grads = (None,) * len(params)
    gradients = {
        name: torch.zeros_like(param) if grad is None else grad
        for name, param, grad in zip(names, params, grads)
    }
    for name, grad in gradients.items():
        if not bool(torch.isfinite(grad).all()):
            raise TrainingError(f"Gradient of {name} is non-finite", epoch)
    return float(loss), gradients


def backward(
    net: MultiTaskNet, batch: Batch, tasks: Optional[Sequence[TaskSpec]] = None
) -> Gradients:
    """Exact gradients of the multi-task loss for every named parameter"""
    return loss_and_gradients(net, batch, tasks)[1]


def check_gradients(
    net: MultiTaskNet,
    batch: Batch,
    tasks: Optional[Sequence[TaskSpec]] = None,
    step: float = 1e-5,
) -> float:
    """
    Compares backward() against central finite differences and returns the
    largest relative error over all parameters.
    """
    tasks = net.config.tasks if tasks is None else tasks
    analytic = backward(net, batch, tasks)
    worst = 0.0
    with torch.no_grad():
        for name, param in net.named_parameters():
            flat = param.view(-1)
            grad = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + step
                plus = float(multitask_loss(net(batch.inputs), batch, tasks))
                flat[i] = original - step
                minus = float(multitask_loss(net(batch.inputs), batch, tasks))
                flat[i] = original
                numeric = (plus - minus) / (2.0 * step)
                exact = float(grad[i])
                scale = max(abs(exact), abs(numeric), GRADIENT_FLOOR)
                worst = max(worst, abs(exact - numeric) / scale)
    return worst


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf


def active_rows(features: FeatureSet, tasks: Sequence[TaskSpec]) -> np.ndarray:
    """Rows labelled for at least one task with a positive weight"""
    active = np.zeros(len(features), dtype=bool)
    for task in tasks:
        if task.weight > 0:
            active |= features.has_label(task.name)
    return np.flatnonzero(active)


def _check_features(net: MultiTaskNet, features: FeatureSet) -> None:
    expected = (net.config.input_bins, net.config.input_steps)
    if tuple(features.inputs.shape[1:]) != expected:
        raise ShapeError(
            f"Features are {features.inputs.shape[1]}x{features.inputs.shape[2]}, "
            f"network expects {expected[0]}x{expected[1]}"
        )


def validation_loss(net: MultiTaskNet, batch: Batch, tasks: Sequence[TaskSpec]) -> float:
    with torch.no_grad():
        return float(multitask_loss(net(batch.inputs), batch, tasks))


def train(
    net: MultiTaskNet,
    train_set: FeatureSet,
    val_set: FeatureSet,
    tasks: Optional[Sequence[TaskSpec]] = None,
    schedule: TrainSchedule = TrainSchedule(),
) -> TrainResult:
    """
    Minibatch Adam with early stopping on the validation loss. The network is
    left holding the parameters of the best validation epoch.
    """
    tasks = tuple(net.config.tasks if tasks is None else tasks)
    _check_features(net, train_set)
    _check_features(net, val_set)
    net.fit_target_scaling(train_set)
    rows = active_rows(train_set, tasks)
    val_rows = active_rows(val_set, tasks)
    if len(rows) == 0:
        raise DataError("Training set has no labelled examples")
    if len(val_rows) == 0:
        raise DataError("Validation set has no labelled examples")
    val_batch = make_batch(val_set, val_rows, tasks, net.target_scaling)
    rng = np.random.default_rng(schedule.seed)

    result = TrainResult()
    best_state = copy.deepcopy(net.state_dict())
    stale = 0
    for epoch in range(1, schedule.max_epochs + 1):
        perm = rng.permutation(len(train_set))
        order = perm[np.isin(perm, rows)]
        total = 0.0
        for start in range(0, len(order), schedule.batch_size):
            chunk = order[start : start + schedule.batch_size]
            batch = make_batch(train_set, chunk, tasks, net.target_scaling)
            loss, grads = loss_and_gradients(net, batch, tasks, epoch)
            net.adam_step(grads, epoch)
            total += loss * len(chunk)
        train_loss = total / len(rows)
        val_loss = validation_loss(net, val_batch, tasks)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError("Loss diverged", epoch)
        result.history.append(EpochRecord(epoch, train_loss, val_loss))
        logger.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
            stale = 0
        else:
            stale += 1
        if stale >= schedule.patience:
            break
    net.load_state_dict(best_state)
    logger.info(
        "Trained %d epochs, best epoch %d (val loss %.6g)",
        len(result.history),
        result.best_epoch,
        result.best_val_loss,
    )
    return result


def predict(net: MultiTaskNet, features: FeatureSet) -> Dict[str, np.ndarray]:
    """
    Regression predictions in original label units; classification logits.
    """
    _check_features(net, features)
    chunks: Dict[str, List[np.ndarray]] = {t.name: [] for t in net.config.tasks}
    with torch.no_grad():
        for start in range(0, len(features), PREDICT_CHUNK):
            inputs = torch.from_numpy(
                np.ascontiguousarray(features.inputs[start : start + PREDICT_CHUNK])
            ).to(DTYPE)
            outputs = net(inputs.unsqueeze(1))
            for name, values in outputs.items():
                chunks[name].append(values.numpy())
    predictions = {}
    for task in net.config.tasks:
        values = np.concatenate(chunks[task.name]) if chunks[task.name] else np.array([])
        if task.is_regression:
            mean, std = net.target_scaling.get(task.name, (0.0, 1.0))
            values = values * std + mean
        predictions[task.name] = values
    return predictions


def evaluate(
    net: MultiTaskNet, features: FeatureSet, tasks: Optional[Sequence[str]] = None
) -> Dict[str, float]:
    """
    MSE for regression tasks and accuracy for classification tasks, scored
    on the examples that carry the task's label.
    """
    names = [t.name for t in net.config.tasks] if tasks is None else list(tasks)
    predictions = predict(net, features)
    metrics = {}
    for name in names:
        task = net.config.task(name)
        mask = features.has_label(name)
        if not mask.any():
            raise DataError(f'No example carries a "{name}" label')
        truth = features.labels[name][mask]
        predicted = predictions[name][mask]
        if task.is_regression:
            metrics[name] = float(np.mean((predicted - truth) ** 2))
        else:
            # np.argmax picks the lowest class index on ties
            metrics[name] = float(np.mean(np.argmax(predicted, axis=1) == truth.astype(np.int64)))
    return metrics


def metric_name(task: TaskSpec) -> str:
    return "mse" if task.is_regression else "accuracy"


def save_checkpoint(
    net: MultiTaskNet, path: Union[str, pathlib.Path], hks: Optional[HksConfig] = None
) -> None:
    document = {
        "format": CHECKPOINT_FORMAT,
        "config": net.config.as_dict(),
        "hks": hks.as_dict() if hks is not None else None,
        "target_scaling": {
            name: [float(mean).hex(), float(std).hex()]
            for name, (mean, std) in net.target_scaling.items()
        },
        "parameters": [
            {
                "name": name,
                "shape": list(param.shape),
                "values": [float(v).hex() for v in param.detach().reshape(-1).tolist()],
            }
            for name, param in net.named_parameters()
        ],
    }
    with open(path, "w") as f:
        json.dump(document, f)


def load_checkpoint(
    path: Union[str, pathlib.Path]
) -> Tuple[MultiTaskNet, Optional[HksConfig]]:
    path = pathlib.Path(path)
    if not path.is_file():
        raise ParseError("Missing checkpoint file", path)
    try:
        with open(path) as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed checkpoint ({e.msg})", path, e.lineno)
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        found = document.get("format") if isinstance(document, dict) else None
        raise ParseError(f"Unsupported checkpoint format {found!r}", path)
    try:
        net = MultiTaskNet(NetConfig.from_dict(document["config"]))
        params = dict(net.named_parameters())
        with torch.no_grad():
            for entry in document["parameters"]:
                values = [float.fromhex(v) for v in entry["values"]]
                tensor = torch.tensor(values, dtype=DTYPE).reshape(entry["shape"])
                param = params[entry["name"]]
                if tuple(tensor.shape) != tuple(param.shape):
                    raise ParseError(f"Shape mismatch for parameter {entry['name']}", path)
                param.copy_(tensor)
        net.target_scaling = {
            name: (float.fromhex(mean), float.fromhex(std))
            for name, (mean, std) in document.get("target_scaling", {}).items()
        }
        hks = HksConfig.from_dict(document["hks"]) if document.get("hks") else None
    except (KeyError, TypeError, ValueError, RuntimeError, ConfigError) as e:
        raise ParseError(f"Invalid checkpoint ({e})", path)
    return net, hks
