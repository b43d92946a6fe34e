"""Baseline hyperparameter selection over a user-supplied (lr, epochs, batch) grid."""
from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from typing import Iterable

from ..augmentations import AugmentationPolicy
from ..datasets import LabeledDataset
from ..errors import AllRunsFailed, InvalidConfig
from .core import EarlyStopSpec, TrainerSpec, get_trainer


@dataclass(frozen=True)
class TuneResult:
    learning_rate: float
    max_epochs: int
    batch_size: int
    val_accuracy: float | None
    train_accuracy: float | None
    error: str | None = None

    @property
    def gap(self) -> float:
        return self.train_accuracy - self.val_accuracy


def select_config(results: Iterable[TuneResult], batch_sizes: Iterable[int]) -> TuneResult:
    """Max val accuracy, then smaller train-val gap, then batch size nearest the grid median."""
    ok = [r for r in results if r.error is None]
    if not ok:
        raise AllRunsFailed("every tuning configuration failed")
    median = statistics.median(batch_sizes)
    return min(ok, key=lambda r: (-r.val_accuracy, r.gap, abs(r.batch_size - median)))


def tune(
    architecture_id: str,
    train: LabeledDataset,
    val: LabeledDataset,
    grid: Iterable[tuple[float, int, int]],
    seed: int = 0,
    early_stopping: EarlyStopSpec | None = None,
    options: dict | None = None,
) -> tuple[TrainerSpec, list[TuneResult]]:
    """Train once per (lr, max_epochs, batch_size) without augmentation and pick a spec.

    Failed configurations are kept in the returned trials with their error
    text; ``AllRunsFailed`` is raised only if none succeeded.
    """
    grid = [(float(lr), int(ep), int(bs)) for lr, ep, bs in grid]
    if not grid:
        raise InvalidConfig("tuning grid is empty")
    plugin = get_trainer(architecture_id)
    base = TrainerSpec(architecture_id, seed=seed, early_stopping=early_stopping or EarlyStopSpec(),
                       options=dict(options or {}))
    trials = []
    for lr, epochs, batch in grid:
        try:
            spec = replace(base, learning_rate=lr, max_epochs=epochs, batch_size=batch)
            if epochs < 1:
                raise InvalidConfig("max_epochs must be >= 1")
            fit = plugin(spec, train, val, val, AugmentationPolicy())
            trials.append(TuneResult(lr, epochs, batch, float(fit.val_accuracy), float(fit.train_accuracy)))
        except Exception as exc:  # a bad config must not sink the sweep
            trials.append(TuneResult(lr, epochs, batch, None, None, f"{type(exc).__name__}: {exc}"))
    best = select_config(trials, [bs for _, _, bs in grid])
    spec = replace(base, learning_rate=best.learning_rate, max_epochs=best.max_epochs, batch_size=best.batch_size)
    return spec, trials
