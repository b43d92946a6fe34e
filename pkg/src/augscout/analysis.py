"""Class-specific bias metrics over accuracy curves, plus the bundled reference fixtures."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from typing import Iterable, Sequence

from .augmentations import format_alpha, to_alpha
from .errors import (
    EmptyCurve,
    FixtureCorrupt,
    GridMismatch,
    InvalidConfig,
    NoClasses,
    TooFewPoints,
)
from .scout import MEAN, AccuracyCurve, CurveSet
from .trainer.core import SCHEMA

INCREASE, FALL, LEVEL_OFF = "increase", "fall", "level_off"


@dataclass(frozen=True)
class PeakSummary:
    class_name: str
    best_alpha: Decimal | None  # None only for the table's "ideal" row
    best_accuracy: float

    def to_dict(self) -> dict:
        alpha = None if self.best_alpha is None else format_alpha(self.best_alpha)
        return {"class_name": self.class_name, "best_alpha": alpha, "best_accuracy": self.best_accuracy}

    @classmethod
    def from_dict(cls, d: dict) -> "PeakSummary":
        a = d.get("best_alpha")
        return cls(d["class_name"], None if a in (None, "N/A") else to_alpha(a), float(d["best_accuracy"]))


@dataclass(frozen=True)
class DropoffSummary:
    class_name: str
    threshold_alpha: Decimal | None
    tau: float
    window: int

    @property
    def threshold_or_inf(self) -> float:
        """Threshold as a number, with a missing threshold counting as +inf."""
        return math.inf if self.threshold_alpha is None else float(self.threshold_alpha)


@dataclass(frozen=True)
class PhaseSegmentation:
    boundaries: tuple[Decimal, Decimal]  # (end of increase, end of fall)
    labels: tuple[str, ...]  # one per grid interval
    level: float  # mean accuracy over the level-off tail (last point if the tail is empty)
    epsilon: float


def _require(curve: AccuracyCurve) -> None:
    if not len(curve):
        raise EmptyCurve(f"curve {curve.class_name!r} has no points")


def peak(curve: AccuracyCurve) -> PeakSummary:
    """argmax of the mean accuracy; ties go to the smallest alpha."""
    _require(curve)
    best = max(range(len(curve)), key=lambda i: (curve.means[i], -i))
    return PeakSummary(curve.class_name, curve.alphas[best], curve.means[best])


def dropoff(curve: AccuracyCurve, tau: float = 0.5, window: int = 2) -> DropoffSummary:
    """First alpha after the peak where accuracy stays below tau x peak for ``window`` points."""
    _require(curve)
    if window < 1:
        raise InvalidConfig("window must be >= 1")
    means = curve.means
    p = peak(curve)
    start = curve.alphas.index(p.best_alpha)
    limit = tau * p.best_accuracy
    for i in range(start + 1, len(means) - window + 1):
        if all(m < limit for m in means[i: i + window]):
            return DropoffSummary(curve.class_name, curve.alphas[i], tau, window)
    return DropoffSummary(curve.class_name, None, tau, window)


def default_epsilon(curve: AccuracyCurve) -> float:
    return 2.0 * math.fsum(curve.stds) / len(curve)


def phases(curve: AccuracyCurve, epsilon: float | None = None) -> PhaseSegmentation:
    """Greedy increase / fall / level-off split of a (mean) curve.

    Slopes are accuracy changes per grid interval.  The increase phase is the
    longest prefix whose steps are all >= -epsilon, cut back to its highest
    point; the level-off phase is the longest suffix whose steps all satisfy
    |step| <= epsilon; the fall phase is what lies between.
    """
    if len(curve) < 3:
        raise TooFewPoints(f"phases need >= 3 points, got {len(curve)}")
    eps = default_epsilon(curve) if epsilon is None else float(epsilon)
    if eps < 0:
        raise InvalidConfig("epsilon must be >= 0")
    m = curve.means
    steps = [b - a for a, b in zip(m, m[1:])]
    n = len(steps)

    k = 0
    while k < n and steps[k] >= -eps:
        k += 1
    rise_end = max(range(k + 1), key=lambda i: (m[i], -i))

    j = n
    while j > rise_end and abs(steps[j - 1]) <= eps:
        j -= 1
    fall_end = j  # index of the point where the level-off tail starts
    labels = tuple(
        INCREASE if i < rise_end else FALL if i < fall_end else LEVEL_OFF for i in range(n)
    )
    tail = m[fall_end:]
    return PhaseSegmentation(
        (curve.alphas[rise_end], curve.alphas[fall_end]),
        labels,
        math.fsum(tail) / len(tail),
        eps,
    )


def _peaks_of(items) -> list[PeakSummary]:
    if isinstance(items, FixtureTable):
        return list(items.peaks)
    if isinstance(items, CurveSet):
        items = items.class_curves
    out = []
    for it in items:
        out.append(it if isinstance(it, PeakSummary) else peak(it))
    return [p for p in out if p.class_name != MEAN]


def ideal_accuracy(items) -> float:
    """Unweighted mean over classes of each class's best accuracy (the mean pseudo-class excluded)."""
    peaks = _peaks_of(items)
    if not peaks:
        raise NoClasses("ideal accuracy needs at least one class")
    return math.fsum(p.best_accuracy for p in peaks) / len(peaks)


@dataclass(frozen=True)
class PeakShift:
    class_name: str
    alpha_shift: Decimal  # positive: b peaks at a higher alpha
    accuracy_shift: float
    a: PeakSummary
    b: PeakSummary


@dataclass(frozen=True)
class PolicyComparison:
    shifts: tuple[PeakShift, ...]
    mean_shift: PeakShift | None
    mean_deltas: tuple[float, ...]  # b - a of the mean curve at each alpha

    def __getitem__(self, name: str) -> PeakShift:
        for s in self.shifts:
            if s.class_name == name:
                return s
        if self.mean_shift is not None and self.mean_shift.class_name == name:
            return self.mean_shift
        raise KeyError(name)


def _shift(a: PeakSummary, b: PeakSummary) -> PeakShift:
    return PeakShift(a.class_name, b.best_alpha - a.best_alpha, b.best_accuracy - a.best_accuracy, a, b)


def compare_peaks(a: Iterable[PeakSummary], b: Iterable[PeakSummary]) -> tuple[PeakShift, ...]:
    pa = {p.class_name: p for p in a}
    pb = {p.class_name: p for p in b}
    if set(pa) != set(pb):
        raise GridMismatch(f"class sets differ: {sorted(set(pa) ^ set(pb))}")
    return tuple(_shift(pa[n], pb[n]) for n in pa)


def compare_policies(a: CurveSet, b: CurveSet) -> PolicyComparison:
    """Per-class peak shifts from policy ``a`` to policy ``b`` on identical grids."""
    if set(a.names) != set(b.names):
        raise GridMismatch(f"class sets differ: {sorted(set(a.names) ^ set(b.names))}")
    for name in a.names:
        if a[name].alphas != b[name].alphas:
            raise GridMismatch(f"alpha grids differ for {name!r}")
    shifts = tuple(_shift(peak(c), peak(b[c.class_name])) for c in a.class_curves)
    if MEAN in a:
        mean_shift = _shift(peak(a.mean), peak(b.mean))
        deltas = tuple(y - x for x, y in zip(a.mean.means, b.mean.means))
    else:
        mean_shift, deltas = None, ()
    return PolicyComparison(shifts, mean_shift, deltas)


def robustness_ranking(dropoffs: Sequence[DropoffSummary]) -> list[str]:
    """Most robust first: no threshold, then descending threshold; ties by name."""
    settings = {(d.tau, d.window) for d in dropoffs}
    if len(settings) > 1:
        raise InvalidConfig(f"drop-offs computed with different (tau, window): {sorted(settings)}")
    ranked = sorted(
        (d for d in dropoffs if d.class_name != MEAN),
        key=lambda d: (-d.threshold_or_inf, d.class_name),
    )
    return [d.class_name for d in ranked]


def dropoffs(curves: CurveSet, tau: float = 0.5, window: int = 2) -> list[DropoffSummary]:
    return [dropoff(c, tau, window) for c in curves.class_curves]


# -- fixtures --------------------------------------------------------------------------

VARIANTS = ("without_flip", "with_flip")


@dataclass(frozen=True)
class FixtureTable:
    """Best (alpha, accuracy) per class plus the ``mean`` and ``ideal`` rows."""

    variant: str
    peaks: tuple[PeakSummary, ...]
    mean: PeakSummary
    ideal: float
    dataset_id: str = "cifar100"
    architecture_id: str = "resnet50"

    def __post_init__(self):
        for p in (*self.peaks, self.mean):
            if not (0.0 <= p.best_accuracy <= 1.0):
                raise FixtureCorrupt(f"{p.class_name}: accuracy {p.best_accuracy} outside [0, 1]")
        if not (0.0 <= self.ideal <= 1.0):
            raise FixtureCorrupt(f"ideal {self.ideal} outside [0, 1]")

    def __getitem__(self, name: str) -> PeakSummary:
        for p in self.peaks:
            if p.class_name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA, "kind": "fixture_table", "variant": self.variant,
            "dataset_id": self.dataset_id, "architecture_id": self.architecture_id,
            "rows": [p.to_dict() for p in self.peaks],
            "mean": {k: v for k, v in self.mean.to_dict().items() if k != "class_name"},
            "ideal": self.ideal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureTable":
        try:
            if d.get("schema") != SCHEMA or d.get("kind") != "fixture_table":
                raise FixtureCorrupt(f"not an {SCHEMA} fixture table")
            return cls(
                d["variant"],
                tuple(PeakSummary.from_dict(r) for r in d["rows"]),
                PeakSummary.from_dict({"class_name": MEAN, **d["mean"]}),
                float(d["ideal"]),
                d.get("dataset_id", "cifar100"),
                d.get("architecture_id", "resnet50"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FixtureCorrupt):
                raise
            raise FixtureCorrupt(f"malformed fixture table: {exc}") from exc


def _fixture_text(filename: str) -> str:
    try:
        return resources.files("augscout.fixtures").joinpath(filename).read_text()
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise FixtureCorrupt(f"fixture {filename} is missing") from exc


def load_fixtures(variant: str = "without_flip") -> FixtureTable:
    """CIFAR-100 best-alpha table (100 classes) for ``variant`` in {without_flip, with_flip}."""
    if variant not in VARIANTS:
        raise InvalidConfig(f"variant must be one of {VARIANTS}")
    try:
        doc = json.loads(_fixture_text(f"cifar100_{variant}.json"))
    except json.JSONDecodeError as exc:
        raise FixtureCorrupt(f"fixture cifar100_{variant}.json is not valid JSON: {exc}") from exc
    table = FixtureTable.from_dict(doc)
    if len(table.peaks) != 100:
        raise FixtureCorrupt(f"expected 100 classes, found {len(table.peaks)}")
    return table


CURVE_FIXTURES = ("cifar10_mean", "fashion_mnist_with_flip", "fashion_mnist_without_flip")


def load_curve_fixture(name: str) -> CurveSet:
    """Reconstructed curve sets; only the points listed under ``anchors`` are source values."""
    if name not in CURVE_FIXTURES:
        raise InvalidConfig(f"curve fixture must be one of {CURVE_FIXTURES}")
    try:
        return CurveSet.from_dict(json.loads(_fixture_text(f"{name}.json")))
    except (KeyError, TypeError, ValueError) as exc:
        raise FixtureCorrupt(f"fixture {name}.json is malformed: {exc}") from exc
