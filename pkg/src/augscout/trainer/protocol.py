"""Subprocess plugin protocol.

The orchestrator writes a job document and invokes an external command with
the document's path as its last argument.  The command trains one model and
writes a RunRecord document to ``output_path``.  Both documents carry the
``augscout/1`` schema tag.

Job document::

    {"schema": "augscout/1", "kind": "job",
     "dataset": {...DatasetRef...}, "trainer": {...TrainerSpec...},
     "policy": {...AugmentationPolicy...}, "alpha_percent": "36",
     "seed": 123, "output_path": "/abs/path/run.json"}

``python -m augscout.trainer.worker job.json`` is a reference command that
runs any in-process plugin through this protocol.
"""
from __future__ import annotations

import json
import os
import subprocess
from dataclasses import dataclass
from pathlib import Path

from ..augmentations import AugmentationPolicy, format_alpha, to_alpha
from ..datasets import DatasetRef
from ..errors import InvalidConfig, PluginFailure
from .core import SCHEMA, RunRecord, TrainerSpec, train_and_eval


@dataclass(frozen=True)
class JobDocument:
    dataset: DatasetRef
    trainer: TrainerSpec
    policy: AugmentationPolicy
    alpha: object
    seed: int
    output_path: str

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "job",
            "dataset": self.dataset.to_dict(),
            "trainer": self.trainer.to_dict(),
            "policy": self.policy.to_dict(),
            "alpha_percent": format_alpha(self.alpha),
            "seed": self.seed,
            "output_path": str(self.output_path),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JobDocument":
        if d.get("schema") != SCHEMA or d.get("kind") != "job":
            raise InvalidConfig(f"not an {SCHEMA} job document")
        return cls(
            DatasetRef.from_dict(d["dataset"]), TrainerSpec.from_dict(d["trainer"]),
            AugmentationPolicy.from_dict(d["policy"]), to_alpha(d["alpha_percent"]),
            int(d["seed"]), d["output_path"],
        )


def write_json_atomic(path, payload: dict) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def run_job_document(path) -> RunRecord:
    """Execute one job document in-process and write its RunRecord."""
    job = JobDocument.from_dict(json.loads(Path(path).read_text()))
    train, val, test = job.dataset.materialize()
    policy = job.policy.with_alpha(job.alpha)
    record = train_and_eval(job.trainer.with_seed(job.seed), train, val, test, policy, job.dataset.dataset_id)
    write_json_atomic(job.output_path, record.to_dict())
    return record


# -- command plugins ---------------------------------------------------------------

_COMMANDS: dict[str, list[str]] = {}


def register_command(architecture_id: str, argv: list[str]) -> None:
    """Route ``architecture_id`` to an external command (job path appended to argv)."""
    if not argv:
        raise InvalidConfig("command plugin needs a non-empty argv")
    _COMMANDS[architecture_id] = list(argv)


def unregister_command(architecture_id: str) -> None:
    _COMMANDS.pop(architecture_id, None)


def command_for(architecture_id: str) -> list[str] | None:
    return _COMMANDS.get(architecture_id)


def run_command_job(argv: list[str], job: JobDocument, job_path, timeout: float | None = None) -> RunRecord:
    write_json_atomic(job_path, job.to_dict())
    try:
        proc = subprocess.run(
            [*argv, str(job_path)], capture_output=True, text=True, timeout=timeout
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise PluginFailure(f"command {argv[0]!r} failed to run: {exc}") from exc
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout).strip().splitlines()[-5:]
        raise PluginFailure(f"command {argv[0]!r} exited {proc.returncode}: " + " | ".join(tail))
    out = Path(job.output_path)
    if not out.exists():
        raise PluginFailure(f"command {argv[0]!r} wrote no run record at {out}")
    try:
        return RunRecord.from_dict(json.loads(out.read_text()))
    except (ValueError, KeyError, TypeError) as exc:
        raise PluginFailure(f"command {argv[0]!r} wrote an invalid run record: {exc}") from exc
