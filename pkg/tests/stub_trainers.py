"""Cheap deterministic trainers for orchestration tests.

Importable as a ``--plugin`` module when ``tests/`` is on ``PYTHONPATH``.

Environment knobs (read at call time so subprocesses see them too):

* ``STUB_TRAIN_LOG``: append one line per training to this file
* ``STUB_DELAY``: seconds to sleep inside each training
* ``STUB_FAIL_ALPHAS``: comma list of alphas for which ``stub`` raises
"""
from __future__ import annotations

import os
import time

import numpy as np

from augscout.augmentations import format_alpha
from augscout.trainer import FitResult, register_trainer


def _log(policy, seed) -> None:
    path = os.environ.get("STUB_TRAIN_LOG")
    if path:
        alpha = format_alpha(policy.crop.alpha) if policy.crop else "0"
        with open(path, "a") as fh:
            fh.write(f"{alpha} {seed}\n")


@register_trainer("stub")
def stub(spec, train, val, test, policy) -> FitResult:
    alpha = float(policy.crop.alpha) if policy.crop else 0.0
    fails = {a.strip() for a in os.environ.get("STUB_FAIL_ALPHAS", "").split(",") if a.strip()}
    if policy.crop is not None and format_alpha(policy.crop.alpha) in fails:
        raise RuntimeError(f"stub told to fail at alpha {alpha}")
    delay = float(os.environ.get("STUB_DELAY", "0") or 0)
    if delay:
        time.sleep(delay)
    rng = np.random.default_rng(spec.seed)
    k = test.num_classes
    # class c degrades linearly with alpha at a class-specific rate
    p_correct = np.clip(1.0 - (alpha / 100.0) * (test.labels + 1) / k, 0.05, 1.0)
    hit = rng.random(len(test.labels)) < p_correct
    preds = np.where(hit, test.labels, (test.labels + 1) % k)
    _log(policy, spec.seed)
    return FitResult(preds, 1, 1, 1.0, 1.0)
