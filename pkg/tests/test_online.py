"""Tests for the simulated online scheduling loop."""

import json

import pytest

from pipesched import (AdaParams, CacheDb, MemorySemantics, NoFeasibleSchedule,
                       OpId, OpKind, PipelineInstance, SolveBudget, best_feasible,
                       brute_force_oracle, entry_from_schedule, incumbent_stream,
                       make_uniform_instance, makespan, online_sim,
                       random_instance, solve, start_session, store, validate)


def _improvable():
    """Tight instance whose true optimum beats every generator."""
    return random_instance(0, 2, 2, mem_profile="tight")


def test_zero_budget_repeats_the_warm_start():
    inst = _improvable()
    warm, _ = best_feasible(inst, AdaParams())
    rep = online_sim(inst, 4, budget=SolveBudget(wall_time_limit=0.0))
    assert rep.total_time == 4 * makespan(warm, inst)
    assert all(step.source == "warm" for step in rep.steps)


def test_instantly_optimal_warm_start_matches_zero_budget():
    inst = make_uniform_instance(1, 1, 1, 1, 1, 0, 1, 2, 3)
    a = online_sim(inst, 3, budget=SolveBudget(wall_time_limit=0.0))
    b = online_sim(inst, 3, budget=SolveBudget(wall_time_limit=1.0))
    assert a.total_time == b.total_time == 9


def test_solver_improvements_cut_the_simulated_time():
    inst = _improvable()
    warm, _ = best_feasible(inst, AdaParams())
    optimum = brute_force_oracle(inst).incumbent_makespan
    assert optimum < makespan(warm, inst)
    rep = online_sim(inst, 5, budget=SolveBudget(wall_time_limit=1.0))
    assert rep.total_time < 5 * makespan(warm, inst)
    assert any(step.source.startswith("incumbent@") for step in rep.steps)


def test_total_time_is_non_increasing_in_budget():
    inst = _improvable()
    totals = [online_sim(inst, 5, budget=SolveBudget(wall_time_limit=b)).total_time
              for b in (0.0, 0.05, 0.5)]
    assert totals[0] >= totals[1] >= totals[2]


def test_first_iteration_always_runs_the_warm_schedule():
    inst = _improvable()
    rep = online_sim(inst, 3, budget=SolveBudget(wall_time_limit=1.0))
    assert rep.steps[0] == rep.steps[0].__class__(1, "warm", rep.steps[0].span)
    spans = [step.span for step in rep.steps]
    assert all(a >= b for a, b in zip(spans, spans[1:]))


def test_every_streamed_incumbent_validates_strict():
    inst = _improvable()
    for ev in incumbent_stream(start_session(inst)):
        assert validate(ev.schedule, inst, MemorySemantics.STRICT).ok


def test_report_serializes_to_json():
    inst = _improvable()
    rep = online_sim(inst, 2, budget=SolveBudget(wall_time_limit=0.2))
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["total_time"] == rep.total_time
    assert len(d["steps"]) == 2
    assert d["trajectory"][0]["span"] >= d["trajectory"][-1]["span"]


def test_cache_db_feeds_the_warm_start(tmp_path):
    inst = _improvable()
    db = CacheDb(tmp_path / "c.jsonl")
    out = solve(inst)
    entry = entry_from_schedule(inst, out.incumbent)
    store(db, entry.key, entry)
    rep = online_sim(inst, 3, budget=SolveBudget(wall_time_limit=0.0), db=db)
    assert rep.warm_source == "cache"
    assert rep.total_time == 3 * out.incumbent_makespan


def test_iterations_must_be_positive():
    inst = _improvable()
    with pytest.raises(ValueError):
        online_sim(inst, 0)


def test_no_feasible_schedule_propagates():
    F, B, W = OpKind.F, OpKind.B, OpKind.W
    inst = PipelineInstance(
        num_stages=1, num_microbatches=1,
        proc_time={OpId(1, 1, c): 1 for c in OpKind},
        comm_time=0, offload_time=1,
        mem_delta={OpId(1, 1, F): 2, OpId(1, 1, B): -1, OpId(1, 1, W): -1},
        act_size={}, mem_limit={1: 1},
        topology_groups=(frozenset((1,)),), post_validation=False)
    with pytest.raises(NoFeasibleSchedule):
        online_sim(inst, 2)
