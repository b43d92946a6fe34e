"""Scouting engine: plans over (alpha x runs), budgets, resumable execution, aggregation, refinement.

Store layout::

    <root>/plan.json                 manifest: plan + per-job state
    <root>/runs/<alpha>_<run>.json   one RunRecord document per finished job
    <root>/jobs/<alpha>_<run>.json   job documents (subprocess plugins only)
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .augmentations import (
    AlphaGrid,
    AugmentationPolicy,
    CropSpec,
    dedupe_grid,
    format_alpha,
    step_grid,
    to_alpha,
)
from .datasets import DatasetRef
from .errors import EmptyRange, InvalidConfig, NoData, PartialCompletion
from .trainer.core import SCHEMA, RunRecord, TrainerSpec, train_and_eval
from .trainer.protocol import JobDocument, command_for, run_command_job, write_json_atomic

MEAN = "mean"
BASELINE = (93, 20)  # alphas x runs of the exhaustive sweep the default plan replaces


# -- seeds ---------------------------------------------------------------------------


def derive_seed(master_seed: int, namespace: str, alpha_index: int, run_index: int) -> int:
    """Counter-mode seed: a 63-bit hash of (master, namespace, alpha index, run index)."""
    msg = f"{master_seed}\x1f{namespace}\x1f{alpha_index}\x1f{run_index}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "big") >> 1


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


# -- plans ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetRef
    trainer: TrainerSpec
    grid: AlphaGrid
    runs_per_alpha: int = 4
    flip: bool = True
    master_seed: int = 0

    def __post_init__(self):
        if self.runs_per_alpha < 1:
            raise InvalidConfig("runs_per_alpha must be >= 1")

    def policy_template(self) -> AugmentationPolicy:
        from .augmentations import FlipSpec

        return AugmentationPolicy(CropSpec(0), FlipSpec() if self.flip else None)


@dataclass(frozen=True)
class Job:
    alpha_index: int
    run_index: int
    alpha: Decimal
    seed: int

    @property
    def key(self) -> str:
        return f"{format_alpha(self.alpha)}_{self.run_index}"


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: DatasetRef
    trainer: TrainerSpec
    policy_template: AugmentationPolicy
    grid: AlphaGrid
    runs_per_alpha: int
    master_seed: int
    namespace: str
    seeds: tuple[tuple[int, ...], ...]  # [alpha_index][run_index]
    parent_id: str | None = None
    id: str = field(default="", compare=False)

    def __post_init__(self):
        if len(self.seeds) != len(self.grid) or any(len(row) != self.runs_per_alpha for row in self.seeds):
            raise InvalidConfig("seed matrix shape does not match grid x runs")
        flat = [s for row in self.seeds for s in row]
        if len(set(flat)) != len(flat):
            raise InvalidConfig("seeds collide within the plan")
        object.__setattr__(self, "id", self.content_hash())

    @property
    def dataset_id(self) -> str:
        return self.dataset.dataset_id

    @property
    def architecture_id(self) -> str:
        return self.trainer.architecture_id

    @property
    def total_jobs(self) -> int:
        return len(self.grid) * self.runs_per_alpha

    def jobs(self) -> list[Job]:
        return [
            Job(i, r, a, self.seeds[i][r])
            for i, a in enumerate(self.grid.alphas)
            for r in range(self.runs_per_alpha)
        ]

    def policy_for(self, alpha) -> AugmentationPolicy:
        return self.policy_template.with_alpha(alpha)

    def _body(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "trainer": self.trainer.to_dict(),
            "policy_template": self.policy_template.to_dict(),
            "grid": self.grid.to_dict(),
            "runs_per_alpha": self.runs_per_alpha,
            "master_seed": self.master_seed,
            "namespace": self.namespace,
            "seeds": [list(row) for row in self.seeds],
            "parent_id": self.parent_id,
        }

    def content_hash(self) -> str:
        return hashlib.sha256(_canonical(self._body()).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "kind": "plan", "id": self.id, **self._body()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        if d.get("schema") != SCHEMA or d.get("kind") != "plan":
            raise InvalidConfig(f"not an {SCHEMA} plan document")
        plan = cls(
            DatasetRef.from_dict(d["dataset"]), TrainerSpec.from_dict(d["trainer"]),
            AugmentationPolicy.from_dict(d["policy_template"]), AlphaGrid.from_dict(d["grid"]),
            int(d["runs_per_alpha"]), int(d["master_seed"]), d["namespace"],
            tuple(tuple(int(s) for s in row) for row in d["seeds"]), d.get("parent_id"),
        )
        if d.get("id") not in (None, plan.id):
            raise InvalidConfig("plan id does not match its content")
        return plan


def _build(dataset, trainer, policy, grid, runs, master_seed, namespace, parent_id=None) -> ExperimentPlan:
    seeds = tuple(
        tuple(derive_seed(master_seed, namespace, i, r) for r in range(runs)) for i in range(len(grid))
    )
    return ExperimentPlan(dataset, trainer, policy, grid, runs, master_seed, namespace, seeds, parent_id)


def plan(config: ExperimentConfig) -> ExperimentPlan:
    """Deduplicate the grid and derive one seed per (alpha, run)."""
    grid = dedupe_grid(config.grid)
    if not len(grid):
        raise InvalidConfig("grid is empty after dedupe")
    return _build(
        config.dataset, config.trainer, config.policy_template(), grid,
        config.runs_per_alpha, config.master_seed, "scout",
    )


@dataclass(frozen=True)
class Budget:
    jobs: int
    baseline_jobs: int
    reduction_factor: float


def budget(p: ExperimentPlan | int, baseline: ExperimentPlan | tuple[int, int] = BASELINE) -> Budget:
    """Job counts of ``p`` and ``baseline`` and their ratio baseline/jobs."""
    jobs = p.total_jobs if isinstance(p, ExperimentPlan) else int(p)
    if isinstance(baseline, ExperimentPlan):
        base = baseline.total_jobs
    else:
        n_alpha, runs = baseline
        base = int(n_alpha) * int(runs)
    if jobs == 0 or base == 0:
        raise ZeroDivisionError(f"budget needs non-zero job counts (plan {jobs}, baseline {base})")
    return Budget(jobs, base, base / jobs)


def refine(
    parent: ExperimentPlan,
    alpha_range: tuple,
    step_percent,
    runs_per_alpha: int | None = None,
) -> ExperimentPlan:
    """Finer plan over the half-open range [lo, hi) with seeds disjoint from ``parent``."""
    lo, hi = (to_alpha(a) for a in alpha_range)
    if to_alpha(step_percent) <= 0:
        raise InvalidConfig("step must be > 0")
    if hi <= lo:
        raise EmptyRange(f"alpha range [{format_alpha(lo)}, {format_alpha(hi)}) is empty")
    grid = dedupe_grid(step_grid(lo, hi, step_percent, parent.grid.image_size))
    if not len(grid):
        raise EmptyRange(f"no usable alphas in [{format_alpha(lo)}, {format_alpha(hi)})")
    runs = runs_per_alpha or parent.runs_per_alpha
    namespace = f"refine:{parent.id}:{format_alpha(lo)}:{format_alpha(hi)}:{format_alpha(to_alpha(step_percent))}"
    child = _build(parent.dataset, parent.trainer, parent.policy_template, grid, runs,
                   parent.master_seed, namespace, parent.id)
    taken = {s for row in parent.seeds for s in row}
    if taken & {s for row in child.seeds for s in row}:
        raise InvalidConfig("refined seeds collide with the parent plan")  # 2^-63-ish odds
    return child


# -- store ---------------------------------------------------------------------------

PENDING, DONE, FAILED = "pending", "done", "failed"


class ExperimentStore:
    """Directory-backed manifest plus one RunRecord document per finished job."""

    def __init__(self, root, plan: ExperimentPlan | None = None):
        self.root = Path(root)
        manifest = self.root / "plan.json"
        if manifest.exists():
            doc = json.loads(manifest.read_text())
            stored = ExperimentPlan.from_dict(doc["plan"])
            if plan is not None and plan.id != stored.id:
                raise InvalidConfig(f"store {self.root} holds plan {stored.id}, not {plan.id}")
            self.plan = stored
            self.jobs_meta: dict[str, dict] = doc.get("jobs", {})
        elif plan is None:
            raise NoData(f"no plan.json under {self.root}")
        else:
            self.plan = plan
            self.jobs_meta = {}
        for job in self.plan.jobs():
            self.jobs_meta.setdefault(job.key, {"state": PENDING, "attempts": 0, "error": None})
        for stale in self.runs_dir.glob(".*.tmp"):  # half-written records from a killed run
            stale.unlink(missing_ok=True)
        self.save()

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    def record_path(self, job: Job) -> Path:
        return self.runs_dir / f"{job.key}.json"

    def save(self) -> None:
        write_json_atomic(self.root / "plan.json", {
            "schema": SCHEMA, "kind": "manifest", "plan": self.plan.to_dict(), "jobs": self.jobs_meta,
        })

    def load_record(self, job: Job) -> RunRecord | None:
        """The job's RunRecord if its document exists and validates."""
        path = self.record_path(job)
        if not path.exists():
            return None
        try:
            rec = RunRecord.from_dict(json.loads(path.read_text()))
        except (ValueError, KeyError, TypeError):
            return None
        if rec.alpha != job.alpha or rec.seed != job.seed:
            return None
        return rec

    def state(self, job: Job) -> str:
        if self.load_record(job) is not None:
            return DONE
        return FAILED if self.jobs_meta[job.key]["state"] == FAILED else PENDING

    def states(self) -> dict[str, str]:
        return {job.key: self.state(job) for job in self.plan.jobs()}

    def pending(self) -> list[Job]:
        return [job for job in self.plan.jobs() if self.state(job) != DONE]

    def records(self) -> list[RunRecord]:
        return [r for r in (self.load_record(j) for j in self.plan.jobs()) if r is not None]

    def mark(self, job: Job, state: str, error: str | None = None) -> None:
        meta = self.jobs_meta[job.key]
        meta["state"] = state
        meta["attempts"] = meta.get("attempts", 0) + (state != PENDING)
        meta["error"] = error
        self.save()


# -- execution -----------------------------------------------------------------------


def run_job(p: ExperimentPlan, job: Job, root) -> RunRecord:
    """Train one job and write its RunRecord document (atomic rename)."""
    out = Path(root) / "runs" / f"{job.key}.json"
    policy = p.policy_for(job.alpha)
    argv = command_for(p.architecture_id)
    if argv is not None:
        doc = JobDocument(p.dataset, p.trainer, policy, job.alpha, job.seed, str(out.resolve()))
        return run_command_job(argv, doc, Path(root) / "jobs" / f"{job.key}.json")
    train, val, test = p.dataset.materialize()
    record = train_and_eval(p.trainer.with_seed(job.seed), train, val, test, policy, p.dataset_id)
    write_json_atomic(out, record.to_dict())
    return record


def _run_job_safely(plan_doc: dict, job: Job, root: str):
    try:
        run_job(ExperimentPlan.from_dict(plan_doc), job, root)
        return None
    except Exception as exc:
        return f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def execute(
    p: ExperimentPlan,
    store: ExperimentStore,
    workers: int = 1,
    on_job: Callable[[Job, str], None] | None = None,
) -> ExperimentStore:
    """Run every job without a valid RunRecord; one retry per job, then PartialCompletion.

    ``on_job(job, state)`` is called in the coordinator after each attempt.
    """
    if store.plan.id != p.id:
        raise InvalidConfig(f"store holds plan {store.plan.id}, not {p.id}")
    if workers < 1:
        raise InvalidConfig("workers must be >= 1")
    todo = store.pending()
    failed: list[str] = []
    for attempt in (1, 2):
        if not todo:
            break
        errors = _dispatch(p, store, todo, workers, on_job)
        todo = [job for job in todo if job.key in errors]
    failed = [job.key for job in todo]
    if failed:
        raise PartialCompletion(
            f"{len(failed)} of {p.total_jobs} jobs failed twice: {', '.join(failed[:5])}", failed
        )
    return store


def _dispatch(p, store, jobs, workers, on_job) -> dict[str, str]:
    errors: dict[str, str] = {}

    def settle(job, err):
        if err is None and store.load_record(job) is None:
            err = "job reported success but left no valid run record"
        state = DONE if err is None else FAILED
        store.mark(job, state, err)
        if err is not None:
            errors[job.key] = err
        if on_job:
            on_job(job, state)

    if workers == 1:
        for job in jobs:
            settle(job, _run_job_safely(p.to_dict(), job, str(store.root)))
        return errors
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_run_job_safely, p.to_dict(), job, str(store.root)): job for job in jobs}
        for fut in as_completed(futures):
            settle(futures[fut], fut.result())
    return errors


# -- aggregation ---------------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    alpha: Decimal
    mean_acc: float
    std: float
    n_runs: int

    def to_dict(self) -> dict:
        return {"alpha_percent": format_alpha(self.alpha), "mean_acc": self.mean_acc,
                "std": self.std, "n_runs": self.n_runs}

    @classmethod
    def from_dict(cls, d: dict) -> "CurvePoint":
        return cls(to_alpha(d["alpha_percent"]), float(d["mean_acc"]), float(d.get("std", 0.0)),
                   int(d.get("n_runs", 1)))


@dataclass(frozen=True)
class AccuracyCurve:
    class_name: str
    points: tuple[CurvePoint, ...]

    def __post_init__(self):
        alphas = [pt.alpha for pt in self.points]
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise InvalidConfig(f"curve {self.class_name!r}: alphas must be strictly increasing")
        for pt in self.points:
            if not (0.0 <= pt.mean_acc <= 1.0) or pt.std < 0 or pt.n_runs < 0:
                raise InvalidConfig(f"curve {self.class_name!r}: bad point {pt}")

    @classmethod
    def from_values(cls, name: str, alphas: Sequence, means: Sequence[float], stds=None, n_runs=None):
        stds = stds if stds is not None else [0.0] * len(alphas)
        n_runs = n_runs if n_runs is not None else [1] * len(alphas)
        return cls(name, tuple(CurvePoint(to_alpha(a), float(m), float(s), int(n))
                               for a, m, s, n in zip(alphas, means, stds, n_runs)))

    @property
    def alphas(self) -> list[Decimal]:
        return [pt.alpha for pt in self.points]

    @property
    def means(self) -> list[float]:
        return [pt.mean_acc for pt in self.points]

    @property
    def stds(self) -> list[float]:
        return [pt.std for pt in self.points]

    def __len__(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        return {"class_name": self.class_name, "points": [pt.to_dict() for pt in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyCurve":
        return cls(d["class_name"], tuple(CurvePoint.from_dict(p) for p in d["points"]))


@dataclass(frozen=True)
class CurveSet:
    """Per-class curves plus the ``"mean"`` pseudo-class for one dataset/arch/policy."""

    dataset_id: str
    architecture_id: str
    policy: str
    curves: tuple[AccuracyCurve, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        names = [c.class_name for c in self.curves]
        if len(set(names)) != len(names):
            raise InvalidConfig(f"duplicate curve names in {names}")

    def __getitem__(self, name: str) -> AccuracyCurve:
        for c in self.curves:
            if c.class_name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(c.class_name == name for c in self.curves)

    @property
    def names(self) -> list[str]:
        return [c.class_name for c in self.curves]

    @property
    def class_curves(self) -> list[AccuracyCurve]:
        return [c for c in self.curves if c.class_name != MEAN]

    @property
    def mean(self) -> AccuracyCurve:
        return self[MEAN]

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA, "kind": "curves",
            "dataset_id": self.dataset_id, "architecture_id": self.architecture_id,
            "policy": self.policy, "curves": [c.to_dict() for c in self.curves],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurveSet":
        if d.get("schema") != SCHEMA or d.get("kind") != "curves":
            raise InvalidConfig(f"not an {SCHEMA} curves document")
        return cls(d["dataset_id"], d["architecture_id"], d["policy"],
                   tuple(AccuracyCurve.from_dict(c) for c in d["curves"]), tuple(d.get("warnings", ())))


def _mean_std(values: list[float]) -> tuple[float, float]:
    m = math.fsum(values) / len(values)
    return m, (statistics.stdev(values) if len(values) > 1 else 0.0)


def aggregate_records(
    records: Iterable[RunRecord],
    expected_runs: int | None = None,
    grid: Iterable | None = None,
) -> CurveSet:
    """Mean and sample std (n-1) per alpha for every class and for ``mean_accuracy``."""
    records = list(records)
    if not records:
        raise NoData("no completed runs to aggregate")
    first = records[0]
    names = list(first.per_class_accuracy)
    by_alpha: dict[Decimal, list[RunRecord]] = {}
    for rec in records:
        if list(rec.per_class_accuracy) != names:
            raise InvalidConfig("records disagree on class lists")
        by_alpha.setdefault(rec.alpha, []).append(rec)
    warnings = []
    for a in (grid or []):
        if to_alpha(a) not in by_alpha:
            warnings.append(f"alpha {format_alpha(a)}: no completed runs")
    alphas = sorted(by_alpha)
    if expected_runs:
        for a in alphas:
            if len(by_alpha[a]) < expected_runs:
                warnings.append(f"alpha {format_alpha(a)}: {len(by_alpha[a])} of {expected_runs} runs")

    def curve(name, get) -> AccuracyCurve:
        pts = []
        for a in alphas:
            m, s = _mean_std([get(r) for r in by_alpha[a]])
            pts.append(CurvePoint(a, m, s, len(by_alpha[a])))
        return AccuracyCurve(name, tuple(pts))

    curves = [curve(n, lambda r, n=n: r.per_class_accuracy[n]) for n in names]
    curves.append(curve(MEAN, lambda r: r.mean_accuracy))
    return CurveSet(first.dataset_id, first.architecture_id, first.policy.label, tuple(curves), tuple(warnings))


def aggregate(store: ExperimentStore) -> CurveSet:
    return aggregate_records(store.records(), store.plan.runs_per_alpha, store.plan.grid.alphas)


def run_scout(config: ExperimentConfig, root, workers: int = 1) -> CurveSet:
    """plan -> execute (resumable) -> aggregate in one call."""
    p = plan(config)
    store = ExperimentStore(root, p)
    execute(p, store, workers)
    return aggregate(store)


def store_root(default="augscout-store") -> Path:
    """Store directory: ``$AUGSCOUT_STORE`` if set, else ``default``."""
    return Path(os.environ.get("AUGSCOUT_STORE", default))
