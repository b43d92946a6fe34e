"""Reference subprocess plugin: ``python -m augscout.trainer.worker JOB.json``.

Optional ``--plugin MODULE`` imports extra modules first so that their
in-process trainers get registered.
"""
from __future__ import annotations

import argparse
import importlib
import sys

from ..errors import AugScoutError
from .protocol import run_job_document


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="augscout-worker")
    ap.add_argument("--plugin", action="append", default=[], help="module to import before running")
    ap.add_argument("job", help="path to a job document")
    args = ap.parse_args(argv)
    for mod in args.plugin:
        importlib.import_module(mod)
    try:
        run_job_document(args.job)
    except AugScoutError as exc:
        print(f"augscout-worker: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
