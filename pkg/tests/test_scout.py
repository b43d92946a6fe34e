import json
import math
import sys
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from augscout.augmentations import AlphaGrid, AugmentationPolicy, default_grid
from augscout.errors import EmptyRange, InvalidConfig, NoData, PartialCompletion
from augscout.scout import (
    MEAN,
    AccuracyCurve,
    CurveSet,
    ExperimentConfig,
    ExperimentPlan,
    ExperimentStore,
    aggregate,
    aggregate_records,
    budget,
    derive_seed,
    execute,
    plan,
    refine,
    run_scout,
)
from augscout.trainer import RunRecord, TrainerSpec, register_command, unregister_command


class Killed(Exception):
    pass


def kill_after(k):
    done = []

    def on_job(job, state):
        done.append(job.key)
        if len(done) == k:
            raise Killed

    return on_job


# -- plans and budgets ------------------------------------------------------------------


def test_default_plan_has_112_jobs(tiny_ref):
    p = plan(ExperimentConfig(tiny_ref, TrainerSpec("stub"), default_grid(32), 4))
    assert p.total_jobs == 112 == len(p.jobs())
    assert len({j.seed for j in p.jobs()}) == 112


def test_single_job_plan(stub_config):
    assert plan(stub_config(alphas=(10,), runs=1)).total_jobs == 1


def test_plan_id_stable(stub_config):
    a, b = plan(stub_config()), plan(stub_config())
    assert a.id == b.id and a == b
    assert plan(stub_config(seed=1)).id != a.id


def test_plan_dedupes_grid(stub_config):
    p = plan(stub_config(alphas=(0, 1, 2, 3, 6)))  # 32, 32, 31, 31, 30 px
    assert [int(a) for a in p.grid] == [0, 2, 6]


def test_plan_round_trip(stub_config):
    p = plan(stub_config(flip=True))
    q = ExperimentPlan.from_dict(json.loads(json.dumps(p.to_dict())))
    assert q == p and q.id == p.id
    bad = p.to_dict() | {"id": "0" * 16}
    with pytest.raises(InvalidConfig):
        ExperimentPlan.from_dict(bad)


def test_seed_collision_rejected(stub_config):
    p = plan(stub_config(alphas=(0, 10), runs=1))
    with pytest.raises(InvalidConfig):
        replace(p, seeds=((1,), (1,)))


@given(st.integers(0, 2**32), st.integers(1, 30), st.integers(1, 20))
def test_derived_seeds_distinct(master, n_alpha, runs):
    seeds = {derive_seed(master, "scout", i, r) for i in range(n_alpha) for r in range(runs)}
    assert len(seeds) == n_alpha * runs and all(0 <= s < 2**63 for s in seeds)


def test_budget_examples(stub_config):
    b = budget(112)
    assert (b.jobs, b.baseline_jobs) == (112, 1860)
    assert round(b.reduction_factor, 2) == 16.61
    p = plan(stub_config())
    assert budget(p, p).reduction_factor == 1.0
    with pytest.raises(ZeroDivisionError):
        budget(p, (0, 20))
    with pytest.raises(ZeroDivisionError):
        budget(0)


def test_refine_half_open(stub_config):
    parent = plan(stub_config(alphas=(0, 30, 50), runs=4))
    child = refine(parent, (36, 44), 1)
    assert [int(a) for a in child.grid] == [36, 40, 43]
    assert child.parent_id == parent.id and child.runs_per_alpha == 4
    assert not {j.seed for j in child.jobs()} & {j.seed for j in parent.jobs()}
    assert refine(parent, (36, 44), 1, runs_per_alpha=2).total_jobs == 6


def test_refine_empty_range(stub_config):
    parent = plan(stub_config())
    with pytest.raises(EmptyRange):
        refine(parent, (36, 36), 1)
    with pytest.raises(InvalidConfig):
        refine(parent, (36, 40), 0)


def test_config_validation(tiny_ref):
    with pytest.raises(InvalidConfig):
        ExperimentConfig(tiny_ref, TrainerSpec("stub"), default_grid(32), 0)


# -- store and execution ----------------------------------------------------------------------


def test_execute_then_idempotent(stub_config, tmp_path, train_log):
    p = plan(stub_config())
    store = ExperimentStore(tmp_path / "s", p)
    execute(p, store)
    assert train_log() == 8 and len(store.records()) == 8
    assert set(store.states().values()) == {"done"}
    execute(p, ExperimentStore(tmp_path / "s"))
    assert train_log() == 8


@pytest.mark.parametrize("k", [1, 3, 7])
def test_kill_and_resume_counts(stub_config, tmp_path, train_log, k):
    p = plan(stub_config())
    store = ExperimentStore(tmp_path / "s", p)
    with pytest.raises(Killed):
        execute(p, store, on_job=kill_after(k))
    assert train_log() == k
    resumed = ExperimentStore(tmp_path / "s")
    assert len(resumed.pending()) == p.total_jobs - k
    execute(resumed.plan, resumed)
    assert train_log() == p.total_jobs


def test_manifest_matches_plan(stub_config, tmp_path):
    p = plan(stub_config())
    ExperimentStore(tmp_path, p)
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert len(doc["jobs"]) == p.total_jobs and doc["plan"]["id"] == p.id


def test_corrupt_record_reruns(stub_config, tmp_path, train_log):
    p = plan(stub_config())
    store = execute(p, ExperimentStore(tmp_path, p))
    job = p.jobs()[2]
    store.record_path(job).write_text("{not json")
    assert [j.key for j in store.pending()] == [job.key]
    execute(p, store)
    assert train_log() == 9


def test_record_for_wrong_seed_is_not_done(stub_config, tmp_path):
    p = plan(stub_config())
    store = execute(p, ExperimentStore(tmp_path, p))
    a, b = p.jobs()[:2]
    store.record_path(a).write_text(store.record_path(b).read_text())
    assert store.state(a) == "pending"


def test_store_plan_mismatch(stub_config, tmp_path):
    ExperimentStore(tmp_path, plan(stub_config()))
    with pytest.raises(InvalidConfig):
        ExperimentStore(tmp_path, plan(stub_config(seed=9)))
    with pytest.raises(NoData):
        ExperimentStore(tmp_path / "empty")


def test_partial_completion(stub_config, tmp_path, train_log, monkeypatch):
    monkeypatch.setenv("STUB_FAIL_ALPHAS", "20")
    p = plan(stub_config())
    store = ExperimentStore(tmp_path, p)
    with pytest.raises(PartialCompletion) as info:
        execute(p, store)
    assert sorted(info.value.failed) == ["20_0", "20_1"]
    meta = json.loads((tmp_path / "plan.json").read_text())["jobs"]
    assert meta["20_0"]["attempts"] == 2 and "stub told to fail" in meta["20_0"]["error"]
    assert train_log() == 6 and store.states()["20_1"] == "failed"
    curves = aggregate(store)
    assert any("alpha 20" in w for w in curves.warnings)
    monkeypatch.delenv("STUB_FAIL_ALPHAS")
    execute(p, ExperimentStore(tmp_path))
    assert train_log() == 8


def test_repeat_runs_bit_identical(stub_config, tmp_path):
    cfg = stub_config(seed=4)
    a = run_scout(cfg, tmp_path / "a")
    b = run_scout(cfg, tmp_path / "b")
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_process_pool_matches_serial(stub_config, tmp_path):
    cfg = stub_config(seed=2)
    assert run_scout(cfg, tmp_path / "a") == run_scout(cfg, tmp_path / "b", workers=2)


def test_command_plugin_path(stub_config, tmp_path, train_log, subprocess_env, monkeypatch):
    monkeypatch.setenv("PYTHONPATH", subprocess_env["PYTHONPATH"])
    register_command("stub", [sys.executable, "-m", "augscout.trainer.worker", "--plugin", "stub_trainers"])
    try:
        p = plan(stub_config(alphas=(0, 50), runs=1))
        store = execute(p, ExperimentStore(tmp_path, p))
    finally:
        unregister_command("stub")
    assert len(store.records()) == 2 and train_log() == 2
    assert (tmp_path / "jobs" / "50_0.json").exists()


@pytest.mark.slow
def test_full_linear_probe_plan(tiny_ref, tmp_path):
    spec = TrainerSpec("linear_probe", 0.05, 32, 2)
    p = plan(ExperimentConfig(tiny_ref, spec, default_grid(32), 4))
    store = execute(p, ExperimentStore(tmp_path, p))
    assert len(list((tmp_path / "runs").glob("*.json"))) == 112 == len(store.records())


# -- aggregation -------------------------------------------------------------------------------


def record(alpha, accs, seed=0):
    names = [f"c{i}" for i in range(len(accs))]
    return RunRecord("toy", "stub", AugmentationPolicy().with_alpha(alpha), alpha, seed,
                     dict(zip(names, accs)), {n: 10 for n in names}, sum(accs) / len(accs), 1, 1)


def test_aggregate_sample_std():
    cs = aggregate_records([record(0, [0.8]), record(0, [0.6], 1)])
    pt = cs["c0"].points[0]
    assert pt.mean_acc == pytest.approx(0.7) and pt.std == pytest.approx(math.sqrt(0.02))
    assert round(pt.std, 4) == 0.1414


def test_aggregate_identical_runs():
    cs = aggregate_records([record(10, [0.5, 0.25], s) for s in range(4)])
    assert cs["c1"].points[0].std == 0 and cs["c1"].means == [0.25] and cs.mean.means == [0.375]


def test_aggregate_missing_runs_warns():
    cs = aggregate_records([record(0, [1.0]), record(0, [1.0], 1), record(10, [0.5])], expected_runs=2,
                           grid=[0, 10, 20])
    assert cs["c0"].points[1].n_runs == 1
    assert len(cs.warnings) == 2 and MEAN in cs


def test_aggregate_empty():
    with pytest.raises(NoData):
        aggregate_records([])


def test_curve_validation_and_round_trip():
    with pytest.raises(InvalidConfig):
        AccuracyCurve.from_values("x", [10, 5], [0.1, 0.2])
    with pytest.raises(InvalidConfig):
        AccuracyCurve.from_values("x", [0], [1.5])
    cs = CurveSet("d", "a", "crop", (AccuracyCurve.from_values("x", ["0", "2.5"], [0.1, 0.2], [0.0, 0.01], [4, 3]),))
    assert CurveSet.from_dict(json.loads(json.dumps(cs.to_dict()))) == cs


def test_grid_to_dict_in_plan(stub_config):
    p = plan(stub_config(alphas=("2.5", 10)))
    assert p.to_dict()["grid"] == AlphaGrid(("2.5", 10), 32).to_dict()
