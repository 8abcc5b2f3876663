"""Tests for the schedule cache: fingerprints, storage, order adaptation."""

import json
import logging

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from pipesched import (AdaParams, CacheDb, ShapeMismatch, StorageError, adapt,
                       best_feasible, discretize, entry_from_schedule,
                       instance_from_dict, instance_to_dict, lookup,
                       make_uniform_instance, makespan, random_instance, solve,
                       store, validate, warm_start_from_cache)
from pipesched.cache import NO_GAMMA


def _scaled(inst, k):
    """The same instance with every time parameter multiplied by k."""
    d = instance_to_dict(inst)
    d["proc_times"] = [[[t * k for t in ops] for ops in row]
                       for row in d["proc_times"]]
    d["comm_time"] *= k
    d["offload_time"] *= k
    return instance_from_dict(d)


def _seeded_db(tmp_path, inst):
    """Db holding the exact optimum's order for inst; returns (db, optimum)."""
    db = CacheDb(tmp_path / "cache.jsonl")
    out = solve(inst)
    assert out.status == "Optimal"
    entry = entry_from_schedule(inst, out.incumbent)
    store(db, entry.key, entry)
    return db, out.incumbent_makespan


# -- discretize ------------------------------------------------------------------

def test_uniform_instance_ratios():
    inst = make_uniform_instance(2, 2, 2, 2, 2, 1, 1, 2, 3)
    key = discretize(inst)
    assert key.ratios == (1.0, 1.0, 0.5, 0.5, 3.0)
    assert (key.num_stages, key.num_microbatches) == (2, 2)


def test_keys_are_scale_free():
    inst = random_instance(5, 2, 2, mem_profile="tight")
    assert discretize(_scaled(inst, 2)) == discretize(inst)


def test_ratios_snap_to_the_grid():
    inst = make_uniform_instance(1, 2, 10, 11, 10, 0, 1, 2, 3)
    assert discretize(inst).ratios[0] == 1.0    # 1.1 rounds onto the 0.25 grid


def test_gamma_free_instances_use_the_sentinel():
    from pipesched import OpId, OpKind, PipelineInstance
    F, B, W = OpKind.F, OpKind.B, OpKind.W
    inst = PipelineInstance(
        num_stages=1, num_microbatches=1,
        proc_time={OpId(1, 1, c): 1 for c in OpKind},
        comm_time=0, offload_time=1,
        mem_delta={OpId(1, 1, F): 2, OpId(1, 1, B): -1, OpId(1, 1, W): -1},
        act_size={}, mem_limit={1: 2},
        topology_groups=(frozenset((1,)),), post_validation=False)
    assert discretize(inst).ratios[4] == NO_GAMMA


@given(seed=st.integers(0, 200), k=st.integers(1, 5))
@settings(max_examples=25, deadline=None)
def test_discretize_is_invariant_under_uniform_time_scaling(seed, k):
    inst = random_instance(seed, 2, 2)
    assert discretize(_scaled(inst, k)) == discretize(inst)


# -- storage ----------------------------------------------------------------------

def test_store_then_lookup_returns_the_entry(tmp_path):
    inst = random_instance(1, 2, 2, mem_profile="tight")
    db = CacheDb(tmp_path / "c.jsonl")
    s, _ = best_feasible(inst, AdaParams())
    entry = entry_from_schedule(inst, s)
    store(db, entry.key, entry)
    assert lookup(db, entry.key) == entry


def test_lookup_on_an_empty_db_misses(tmp_path):
    inst = random_instance(1, 2, 2)
    assert lookup(CacheDb(tmp_path / "missing.jsonl"), discretize(inst)) is None


def test_store_keeps_the_smaller_ratio(tmp_path):
    inst = random_instance(1, 2, 2, mem_profile="tight")
    db = CacheDb(tmp_path / "c.jsonl")
    worse, _ = best_feasible(inst, AdaParams())
    better = solve(inst).incumbent
    for s in (better, worse):
        entry = entry_from_schedule(inst, s)
        store(db, entry.key, entry)
    hit = lookup(db, discretize(inst))
    assert hit.recorded_makespan_ratio == \
        entry_from_schedule(inst, better).recorded_makespan_ratio
    assert len(db.entries()) == 1


def test_neighbor_within_one_grid_step_is_found(tmp_path):
    base = make_uniform_instance(2, 2, 4, 4, 4, 2, 2, 2, 3)
    near = make_uniform_instance(2, 2, 4, 5, 4, 2, 2, 2, 3)   # tB/tF off by 0.25
    db = CacheDb(tmp_path / "c.jsonl")
    s, _ = best_feasible(base, AdaParams())
    entry = entry_from_schedule(base, s)
    store(db, entry.key, entry)
    assert discretize(near) != entry.key
    assert lookup(db, discretize(near)) == entry

    far = make_uniform_instance(2, 2, 4, 8, 4, 2, 2, 2, 3)    # off by 1.0
    assert lookup(db, discretize(far)) is None


def test_torn_trailing_line_is_skipped_with_a_warning(tmp_path, caplog):
    inst = random_instance(1, 2, 2, mem_profile="tight")
    db = CacheDb(tmp_path / "c.jsonl")
    s, _ = best_feasible(inst, AdaParams())
    entry = entry_from_schedule(inst, s)
    store(db, entry.key, entry)
    with open(db.path, "a") as fh:
        fh.write('{"key": {"P": 2, "m"')          # interrupted write
    with caplog.at_level(logging.WARNING, logger="pipesched.cache"):
        assert db.entries() == [entry]
    assert any("torn" in rec.message for rec in caplog.records)


def test_corruption_before_the_last_line_is_an_error(tmp_path):
    inst = random_instance(1, 2, 2, mem_profile="tight")
    db = CacheDb(tmp_path / "c.jsonl")
    s, _ = best_feasible(inst, AdaParams())
    entry = entry_from_schedule(inst, s)
    with open(db.path, "w") as fh:
        fh.write("not json\n")
        fh.write(json.dumps(entry.to_dict()) + "\n")
    with pytest.raises(StorageError):
        db.entries()


# -- adapt -----------------------------------------------------------------------------

def test_adapt_replays_the_original_makespan():
    inst = random_instance(3, 2, 2, mem_profile="tight")
    out = solve(inst)
    entry = entry_from_schedule(inst, out.incumbent)
    s = adapt(entry, inst)
    assert makespan(s, inst) == out.incumbent_makespan


def test_adapt_scales_linearly_with_time():
    inst = random_instance(3, 2, 2, mem_profile="tight")
    out = solve(inst)
    entry = entry_from_schedule(inst, out.incumbent)
    doubled = _scaled(inst, 2)
    s = adapt(entry, doubled)
    assert makespan(s, doubled) == 2 * out.incumbent_makespan


def test_adapt_declines_when_the_limit_tightens():
    inst = make_uniform_instance(1, 2, 1, 1, 1, 0, 1, 2, 2)
    from pipesched import OpId, OpKind, run_order
    F, B, W = OpKind.F, OpKind.B, OpKind.W
    both_first = run_order(inst, {1: (OpId(1, 1, F), OpId(1, 2, F), OpId(1, 1, B),
                                      OpId(1, 1, W), OpId(1, 2, B), OpId(1, 2, W))},
                           frozenset())
    entry = entry_from_schedule(inst, both_first)
    d = instance_to_dict(inst)
    d["mem_limits"] = [2]                      # one activation from now on
    tighter = instance_from_dict(d)
    assert adapt(entry, tighter) is None


def test_adapt_requires_matching_shape():
    inst = random_instance(3, 2, 2, mem_profile="tight")
    entry = entry_from_schedule(inst, best_feasible(inst, AdaParams())[0])
    other = random_instance(3, 2, 1)
    with pytest.raises(ShapeMismatch):
        adapt(entry, other)


@given(seed=st.integers(0, 150))
@settings(max_examples=20, deadline=None)
def test_adapt_output_always_validates_strict(seed):
    inst = random_instance(seed, 2, 2, mem_profile="tight")
    s, _ = best_feasible(inst, AdaParams())
    entry = entry_from_schedule(inst, s)
    perturbed = random_instance(seed + 1, 2, 2, mem_profile="tight")
    adapted = adapt(entry, perturbed)
    if adapted is not None:
        assert validate(adapted, perturbed).ok


# -- warm_start_from_cache ------------------------------------------------------------------

def test_cold_cache_falls_back_to_a_generator(tmp_path):
    inst = random_instance(2, 2, 2, mem_profile="tight")
    db = CacheDb(tmp_path / "cold.jsonl")
    s, source = warm_start_from_cache(db, inst)
    assert source in ("ada", "pipeoffload", "1f1b", "sequential")
    assert validate(s, inst).ok


def test_seeded_cache_wins_with_the_optimal_order(tmp_path):
    inst = random_instance(0, 2, 2, mem_profile="tight")
    db, optimum = _seeded_db(tmp_path, inst)
    heur, _ = best_feasible(inst, AdaParams())
    assert optimum < makespan(heur, inst)      # cache has something to offer
    s, source = warm_start_from_cache(db, inst)
    assert source == "cache"
    assert makespan(s, inst) == optimum


def test_failed_adaptation_falls_back_without_error(tmp_path):
    inst = make_uniform_instance(1, 2, 1, 1, 1, 0, 1, 2, 2)
    from pipesched import OpId, OpKind, run_order
    F, B, W = OpKind.F, OpKind.B, OpKind.W
    both_first = run_order(inst, {1: (OpId(1, 1, F), OpId(1, 2, F), OpId(1, 1, B),
                                      OpId(1, 1, W), OpId(1, 2, B), OpId(1, 2, W))},
                           frozenset())
    db = CacheDb(tmp_path / "c.jsonl")
    entry = entry_from_schedule(inst, both_first)
    store(db, entry.key, entry)
    d = instance_to_dict(inst)
    d["mem_limits"] = [2]
    tighter = instance_from_dict(d)
    # same key shape, but the cached order no longer fits in memory
    s, source = warm_start_from_cache(db, tighter)
    assert source != "cache"
    assert validate(s, tighter).ok


@given(seed=st.integers(0, 100))
@settings(max_examples=15, deadline=None)
def test_cache_never_hurts_the_warm_start(seed, tmp_path_factory):
    inst = random_instance(seed, 2, 2, mem_profile="tight")
    db = CacheDb(tmp_path_factory.mktemp("db") / "c.jsonl")
    s, _ = best_feasible(inst, AdaParams())
    entry = entry_from_schedule(inst, s)
    store(db, entry.key, entry)
    warm, _ = warm_start_from_cache(db, inst)
    assert makespan(warm, inst) <= makespan(s, inst)
