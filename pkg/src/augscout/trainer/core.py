"""Trainer contract: specs, run records, early stopping, per-class metrics, plugin registry."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from ..augmentations import AugmentationPolicy, format_alpha, to_alpha
from ..datasets import LabeledDataset
from ..errors import EmptyClass, InvalidConfig, PluginFailure

SCHEMA = "augscout/1"


@dataclass(frozen=True)
class EarlyStopSpec:
    patience: float = 3  # int, or math.inf to disable
    restore_best: bool = True
    monitor: str = "val_accuracy"

    def __post_init__(self):
        if self.patience < 0:
            raise InvalidConfig("patience must be >= 0")
        if self.monitor != "val_accuracy":
            raise InvalidConfig("only val_accuracy can be monitored")

    def to_dict(self) -> dict:
        patience = None if math.isinf(self.patience) else int(self.patience)
        return {"monitor": self.monitor, "patience": patience, "restore_best": self.restore_best}

    @classmethod
    def from_dict(cls, d: dict) -> "EarlyStopSpec":
        p = d.get("patience")
        return cls(math.inf if p is None else int(p), bool(d.get("restore_best", True)))


@dataclass(frozen=True)
class TrainerSpec:
    architecture_id: str
    learning_rate: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 10
    early_stopping: EarlyStopSpec = field(default_factory=EarlyStopSpec)
    seed: int = 0
    options: dict = field(default_factory=dict)  # plugin-specific hyperparameters

    def __post_init__(self):
        if not self.architecture_id:
            raise InvalidConfig("architecture_id must be non-empty")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be > 0")
        if self.max_epochs < 0:
            raise InvalidConfig("max_epochs must be >= 0")

    def with_seed(self, seed: int) -> "TrainerSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "architecture_id": self.architecture_id,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stopping": self.early_stopping.to_dict(),
            "seed": self.seed,
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerSpec":
        return cls(
            d["architecture_id"], float(d["learning_rate"]), int(d["batch_size"]),
            int(d["max_epochs"]), EarlyStopSpec.from_dict(d.get("early_stopping", {})),
            int(d.get("seed", 0)), dict(d.get("options", {})),
        )


@dataclass(frozen=True)
class RunRecord:
    dataset_id: str
    architecture_id: str
    policy: AugmentationPolicy
    alpha: object  # Decimal percent
    seed: int
    per_class_accuracy: dict[str, float]
    class_counts: dict[str, int]
    mean_accuracy: float
    epochs_trained: int
    best_epoch: int
    train_accuracy: float | None = None
    val_accuracy: float | None = None
    wall_seconds: float = field(default=0.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", to_alpha(self.alpha))
        if self.best_epoch > self.epochs_trained:
            raise InvalidConfig("best_epoch exceeds epochs_trained")
        if set(self.per_class_accuracy) != set(self.class_counts):
            raise InvalidConfig("per_class_accuracy and class_counts disagree on classes")

    def recomputed_mean(self) -> float:
        total = sum(self.class_counts.values())
        return sum(self.per_class_accuracy[c] * n for c, n in self.class_counts.items()) / total

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "run_record",
            "dataset_id": self.dataset_id,
            "architecture_id": self.architecture_id,
            "policy": self.policy.to_dict(),
            "alpha_percent": format_alpha(self.alpha),
            "seed": self.seed,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "class_counts": dict(self.class_counts),
            "mean_accuracy": self.mean_accuracy,
            "epochs_trained": self.epochs_trained,
            "best_epoch": self.best_epoch,
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        if d.get("schema") != SCHEMA or d.get("kind") != "run_record":
            raise InvalidConfig(f"not an {SCHEMA} run record")
        accs = {str(k): float(v) for k, v in d["per_class_accuracy"].items()}
        if not all(0.0 <= v <= 1.0 for v in accs.values()) or not 0.0 <= d["mean_accuracy"] <= 1.0:
            raise InvalidConfig("accuracy outside [0, 1]")
        return cls(
            d["dataset_id"], d["architecture_id"], AugmentationPolicy.from_dict(d["policy"]),
            d["alpha_percent"], int(d["seed"]), accs,
            {str(k): int(v) for k, v in d["class_counts"].items()},
            float(d["mean_accuracy"]), int(d["epochs_trained"]), int(d["best_epoch"]),
            d.get("train_accuracy"), d.get("val_accuracy"), float(d.get("wall_seconds", 0.0)),
        )


# -- metrics ----------------------------------------------------------------------


def per_class_accuracy(predictions, labels, num_classes: int) -> dict[int, float]:
    """accuracy_c = correct_c / count_c for every class in [0, K)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in shape")
    counts = np.bincount(labels, minlength=num_classes)
    if len(counts) > num_classes:
        raise ValueError("label index >= K")
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise EmptyClass(f"classes {empty.tolist()} have no test samples")
    correct = np.bincount(labels[predictions == labels], minlength=num_classes)
    return {c: float(correct[c] / counts[c]) for c in range(num_classes)}


# -- early stopping -----------------------------------------------------------------


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class Stop:
    best_epoch: int


@dataclass
class EarlyStopState:
    """Epochs are 1-based; improvement is strict (metric > best)."""

    patience: float
    best: float = -math.inf
    best_epoch: int = 0
    epoch: int = 0
    wait: int = 0


def early_stop_step(state: EarlyStopState, epoch_metric: float):
    state.epoch += 1
    if epoch_metric > state.best:
        state.best = epoch_metric
        state.best_epoch = state.epoch
        state.wait = 0
        return Continue()
    state.wait += 1
    if state.wait >= state.patience:
        return Stop(state.best_epoch)
    return Continue()


# -- plugin registry -------------------------------------------------------------------


@dataclass
class FitResult:
    """What an in-process plugin hands back to ``train_and_eval``."""

    test_predictions: np.ndarray
    epochs_trained: int
    best_epoch: int
    train_accuracy: float | None = None
    val_accuracy: float | None = None


class TrainerPlugin(Protocol):
    def __call__(
        self,
        spec: TrainerSpec,
        train: LabeledDataset,
        val: LabeledDataset,
        test: LabeledDataset,
        policy: AugmentationPolicy,
    ) -> FitResult: ...


_REGISTRY: dict[str, Callable] = {}


def register_trainer(architecture_id: str, plugin: Callable | None = None):
    """Register ``plugin`` under ``architecture_id`` (usable as a decorator)."""
    def deco(fn):
        _REGISTRY[architecture_id] = fn
        return fn

    return deco(plugin) if plugin is not None else deco


def unregister_trainer(architecture_id: str) -> None:
    _REGISTRY.pop(architecture_id, None)


def get_trainer(architecture_id: str) -> Callable:
    _load_builtins()
    try:
        return _REGISTRY[architecture_id]
    except KeyError:
        raise PluginFailure(
            f"no trainer registered for {architecture_id!r}; known: {sorted(_REGISTRY)}"
        ) from None


def available_trainers() -> list[str]:
    _load_builtins()
    return sorted(_REGISTRY)


def _load_builtins() -> None:
    from . import linear_probe, reference_cnn  # noqa: F401  (registration side effect)


def train_and_eval(
    spec: TrainerSpec,
    train: LabeledDataset,
    val: LabeledDataset,
    test: LabeledDataset,
    policy: AugmentationPolicy,
    dataset_id: str = "unknown",
) -> RunRecord:
    """Train a fresh model under ``policy`` and score it per class on the clean test set."""
    if spec.max_epochs < 1:
        raise PluginFailure(f"max_epochs must be >= 1 to train, got {spec.max_epochs}")
    if train.class_names != test.class_names or val.class_names != test.class_names:
        raise PluginFailure("train/val/test class lists differ")
    plugin = get_trainer(spec.architecture_id)
    start = time.perf_counter()
    try:
        fit = plugin(spec, train, val, test, policy)
    except PluginFailure:
        raise
    except Exception as exc:
        raise PluginFailure(f"{spec.architecture_id}: {type(exc).__name__}: {exc}") from exc
    wall = time.perf_counter() - start

    preds = np.asarray(fit.test_predictions)
    accs = per_class_accuracy(preds, test.labels, test.num_classes)
    counts = test.class_counts()
    names = test.class_names
    mean = float(np.mean(preds == test.labels))
    alpha = policy.crop.alpha if policy.crop is not None else 0
    return RunRecord(
        dataset_id=dataset_id,
        architecture_id=spec.architecture_id,
        policy=policy,
        alpha=alpha,
        seed=spec.seed,
        per_class_accuracy={names[c]: accs[c] for c in range(len(names))},
        class_counts={names[c]: int(counts[c]) for c in range(len(names))},
        mean_accuracy=mean,
        epochs_trained=int(fit.epochs_trained),
        best_epoch=int(fit.best_epoch),
        train_accuracy=fit.train_accuracy,
        val_accuracy=fit.val_accuracy,
        wall_seconds=wall,
    )


# -- pinned defaults -----------------------------------------------------------------

_DEFAULTS = {
    # pooled softmax regression needs many cheap epochs; early stopping would cut it short
    "linear_probe": dict(learning_rate=0.05, batch_size=32, max_epochs=60,
                         early_stopping=EarlyStopSpec(math.inf), options={"pool": 2}),
    "reference_cnn": dict(learning_rate=1e-3, batch_size=32, max_epochs=30,
                          early_stopping=EarlyStopSpec(5)),
}


def default_trainer_spec(architecture_id: str, seed: int = 0) -> TrainerSpec:
    """Pinned hyperparameters for the bundled plugins; generic defaults otherwise."""
    return TrainerSpec(architecture_id, seed=seed, **_DEFAULTS.get(architecture_id, {}))
