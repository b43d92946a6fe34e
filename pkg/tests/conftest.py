import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import stub_trainers  # noqa: E402,F401  (registers the "stub" trainer)

from augscout.augmentations import AlphaGrid  # noqa: E402
from augscout.datasets import DatasetRef, oracle_spec  # noqa: E402
from augscout.scout import ExperimentConfig  # noqa: E402
from augscout.trainer import TrainerSpec  # noqa: E402


@pytest.fixture
def tiny_ref():
    return DatasetRef("synthetic", synthetic=oracle_spec(32, 10))


@pytest.fixture
def stub_config(tiny_ref):
    def make(alphas=(0, 10, 20, 30), runs=2, seed=0, flip=False):
        return ExperimentConfig(tiny_ref, TrainerSpec("stub"), AlphaGrid(tuple(alphas), 32), runs, flip, seed)

    return make


@pytest.fixture
def train_log(tmp_path, monkeypatch):
    path = tmp_path / "train.log"
    monkeypatch.setenv("STUB_TRAIN_LOG", str(path))

    def count():
        return len(path.read_text().splitlines()) if path.exists() else 0

    return count


@pytest.fixture
def subprocess_env():
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join([str(TESTS), env.get("PYTHONPATH", "")]).rstrip(os.pathsep)
    return env
