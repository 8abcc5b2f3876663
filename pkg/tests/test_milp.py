"""Tests for the linear model: construction, cuts, LP text, solution codecs."""

from itertools import permutations

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from conftest import highs_optimum, snap_int, solve_lp_text

from pipesched import (AdaParams, ConstraintResidual, InfeasibleWarmStart,
                       MemorySemantics, ModelOptions, NonIntegralBinary, OpId,
                       OpKind, PipelineInstance, UnknownVariable, ada_offload,
                       build_model, decode_solution, default_options,
                       encode_warm_start, export_lp, gen_triangle_cuts,
                       instance_from_dict, instance_to_dict,
                       make_uniform_instance, makespan, options_from_lp,
                       parse_solution, pipeoffload_like, random_instance,
                       run_order, sequential_schedule, solve, validate,
                       write_solution)

F, B, W = OpKind.F, OpKind.B, OpKind.W

ALL_OFF = ModelOptions(fix_microbatch_order=False, eliminate_transitive=False,
                       triangle_cuts=False, post_validation=False,
                       topology_enabled=True)


def _p_vars(model):
    return {n: v for n, v in model.vars.items() if v.vid.family == "P"}


# -- options --------------------------------------------------------------------

def test_options_round_trip_and_reject_unknown_keys():
    opts = ModelOptions(fix_microbatch_order=False, triangle_cuts=False)
    assert ModelOptions.from_dict(opts.to_dict()) == opts
    with pytest.raises(ValueError, match="unknown option"):
        ModelOptions.from_dict({"fix_microbatch_order": True, "cuts": 1})


def test_default_options_follow_the_instance():
    inst = make_uniform_instance(2, 2, 1, 1, 1, 0, 1, 2, 4, post_validation=True)
    opts = default_options(inst)
    assert opts.post_validation and opts.fix_microbatch_order

    skewed = instance_to_dict(inst)
    skewed["proc_times"][0][1][0] = 5          # micro-batches now differ
    skewed["post_validation"] = False
    opts = default_options(instance_from_dict(skewed))
    assert not opts.fix_microbatch_order and not opts.post_validation


# -- construction ---------------------------------------------------------------

def test_single_op_chain_model_is_minimal():
    inst = make_uniform_instance(1, 1, 1, 1, 1, 0, 1, 2, 3)
    md = build_model(inst)
    e_vars = [n for n, v in md.vars.items() if v.vid.family == "E"]
    assert sorted(e_vars) == ["F_E_1_1_B", "F_E_1_1_F", "F_E_1_1_W"]
    assert md.objective == "F_C" and "F_C" in md.vars
    assert not _p_vars(md)                     # the chain fixes every ordering


def test_no_transfer_variables_without_offloadable_activations():
    inst = PipelineInstance(
        num_stages=1, num_microbatches=1,
        proc_time={OpId(1, 1, c): 1 for c in OpKind},
        comm_time=0, offload_time=1,
        mem_delta={OpId(1, 1, F): 2, OpId(1, 1, B): -1, OpId(1, 1, W): -1},
        act_size={}, mem_limit={1: 2},
        topology_groups=(frozenset((1,)),), post_validation=False)
    md = build_model(inst)
    families = {v.vid.family for v in md.vars.values()}
    assert families == {"E", "C"}


def test_fixed_microbatch_order_removes_same_kind_pairs():
    inst = make_uniform_instance(2, 2, 1, 1, 1, 1, 1, 2, 4)
    fixed = build_model(inst)
    free = build_model(inst, ALL_OFF)

    def same_kind(vid):
        (x, y) = vid.key
        return x[2] == y[2]

    assert not any(same_kind(v.vid) for v in _p_vars(fixed).values())
    assert any(same_kind(v.vid) for v in _p_vars(free).values())


def test_elimination_drops_the_transitively_forced_pairs():
    inst = make_uniform_instance(1, 2, 1, 1, 1, 0, 1, 2, 4)
    both = build_model(inst)
    no_elim = build_model(inst, ModelOptions(eliminate_transitive=False,
                                             triangle_cuts=False))
    assert set(_p_vars(both)) < set(_p_vars(no_elim))


def test_variable_bounds_anchor_end_times_above_processing_times():
    inst = make_uniform_instance(1, 1, 2, 3, 1, 0, 1, 2, 3)
    md = build_model(inst)
    assert md.vars["F_E_1_1_F"].lb == 2
    assert md.vars["F_E_1_1_B"].lb == 3
    assert md.vars["F_E_1_1_F"].ub == md.big_m


# -- triangle cuts ----------------------------------------------------------------

def test_no_cuts_when_every_ordering_is_fixed():
    inst = make_uniform_instance(1, 2, 1, 1, 1, 0, 1, 2, 4)
    md = build_model(inst, ModelOptions(triangle_cuts=False))
    leftover = {n for n, v in _p_vars(md).items() if v.lb != v.ub}
    # the three remaining cross-kind pairs share no all-free triple
    assert gen_triangle_cuts(md, 500) == 0 or leftover


def test_fully_fixed_single_microbatch_model_has_zero_cuts():
    inst = make_uniform_instance(1, 1, 1, 1, 1, 0, 1, 2, 3)
    md = build_model(inst, ModelOptions(triangle_cuts=False))
    assert gen_triangle_cuts(md, 500) == 0


def test_free_triple_count_matches_direct_enumeration():
    inst = make_uniform_instance(1, 3, 1, 1, 1, 0, 1, 2, 6)
    md = build_model(inst, ALL_OFF)
    free_pairs = {v.vid.key for v in _p_vars(md).values()}

    ops = sorted((1, j, c) for j in (1, 2, 3) for c in OpKind)
    is_free = lambda a, b: (a, b) in free_pairs or (b, a) in free_pairs
    triples = [(a, b, c)
               for k, a in enumerate(ops)
               for l, b in enumerate(ops[k + 1:], k + 1)
               for c in ops[l + 1:]
               if is_free(a, b) and is_free(b, c) and is_free(a, c)]
    assert len(triples) == 27                  # one op from each micro-batch

    added = gen_triangle_cuts(md, 500)
    assert added == len(triples)
    assert sum(1 for r in md.constraints if r.name.startswith("tricut")) == added


def test_cut_budget_caps_the_row_count():
    inst = make_uniform_instance(1, 3, 1, 1, 1, 0, 1, 2, 6)
    md = build_model(inst, ALL_OFF)
    assert gen_triangle_cuts(md, 5) == 5


def test_every_cut_is_satisfied_by_every_total_order():
    inst = make_uniform_instance(1, 3, 1, 1, 1, 0, 1, 2, 6)
    md = build_model(inst, ALL_OFF)
    gen_triangle_cuts(md, 500)
    pair_of = {n: v.vid.key for n, v in _p_vars(md).items()}
    for row in md.constraints:
        if not row.name.startswith("tricut"):
            continue
        names = list(row.coefs)
        ops = sorted({op for n in names for op in pair_of[n]})
        assert len(ops) == 3
        for order in permutations(ops):
            rank = {op: k for k, op in enumerate(order)}
            values = {n: int(rank[pair_of[n][0]] < rank[pair_of[n][1]])
                      for n in names}
            assert row.residual(values) <= 0, (row.name, order)


def test_cuts_do_not_change_the_optimum():
    inst = random_instance(6, 2, 2, mem_profile="tight")
    with_cuts = ModelOptions(fix_microbatch_order=False, triangle_cuts=True)
    without = ModelOptions(fix_microbatch_order=False, triangle_cuts=False)
    assert highs_optimum(inst, with_cuts) == highs_optimum(inst, without)


# -- LP text -----------------------------------------------------------------------

def test_export_contains_the_standard_sections():
    inst = make_uniform_instance(1, 1, 1, 1, 1, 0, 1, 2, 3)
    text = export_lp(build_model(inst))
    for section in ("Minimize", "Subject To", "Bounds", "Binaries", "End"):
        assert section in text.splitlines()
    assert " obj: F_C" in text.splitlines()


def test_export_is_deterministic():
    inst = random_instance(4, 2, 2, mem_profile="tight")
    assert export_lp(build_model(inst)) == export_lp(build_model(inst))


def test_options_survive_the_lp_text():
    inst = make_uniform_instance(2, 2, 1, 1, 1, 1, 1, 2, 4)
    opts = ModelOptions(fix_microbatch_order=False, triangle_cuts=False)
    assert options_from_lp(export_lp(build_model(inst, opts))) == opts
    with pytest.raises(ValueError):
        options_from_lp("Minimize\n obj: F_C\nEnd\n")


# -- solution files ------------------------------------------------------------------

def test_solution_text_round_trips():
    inst = random_instance(2, 2, 1, mem_profile="tight")
    md = build_model(inst)
    out = solve(inst)
    a = encode_warm_start(out.incumbent, md, inst)
    assert parse_solution(md, write_solution(a)) == {n: float(v)
                                                     for n, v in a.items()}


def test_unknown_variable_is_rejected():
    md = build_model(make_uniform_instance(2, 1, 1, 1, 1, 1, 1, 2, 4))
    with pytest.raises(UnknownVariable):
        parse_solution(md, "B_P_9_9_9__1_1_1 1\n")


def test_non_integral_binary_is_rejected():
    inst = make_uniform_instance(1, 2, 1, 1, 1, 0, 1, 2, 4)
    md = build_model(inst)
    name = next(iter(_p_vars(md)))
    with pytest.raises(NonIntegralBinary):
        parse_solution(md, f"{name} 0.4\n")


def test_comments_and_status_lines_are_skipped_and_gaps_default_to_zero():
    inst = make_uniform_instance(1, 1, 1, 1, 1, 0, 1, 2, 3)
    md = build_model(inst)
    a = parse_solution(md, "# solver log\n=obj 3\nF_E_1_1_F 1\n")
    assert a["F_E_1_1_F"] == 1.0
    assert a["F_E_1_1_B"] == 0.0


# -- decode ---------------------------------------------------------------------------

def _solved_assignment(inst, md):
    out = solve(inst)
    assert out.status == "Optimal"
    return out, encode_warm_start(out.incumbent, md, inst)


def test_decode_reproduces_the_optimum_through_the_file_formats():
    inst = random_instance(8, 2, 2, mem_profile="tight")
    md = build_model(inst)
    out, a = _solved_assignment(inst, md)
    parsed = parse_solution(md, write_solution(a))
    s = decode_solution(md, parsed, inst)
    assert makespan(s, inst) == out.incumbent_makespan
    assert validate(s, inst, MemorySemantics.MILP_RELAXED).ok


def test_decode_rejects_end_times_below_processing_times():
    inst = make_uniform_instance(1, 1, 1, 1, 1, 0, 1, 2, 3)
    md = build_model(inst)
    _, a = _solved_assignment(inst, md)
    a["F_E_1_1_F"] = 0
    with pytest.raises(ConstraintResidual) as err:
        decode_solution(md, a, inst)
    assert "F_E_1_1_F" in err.value.name


def test_decode_rejects_an_offload_flag_without_its_start_time():
    inst = make_uniform_instance(1, 3, 2, 2, 2, 0, 1, 2, 2)
    s = pipeoffload_like(inst)
    md = build_model(inst)
    a = encode_warm_start(s, md, inst)
    op = sorted(s.offloaded)[0]
    text = "".join(line + "\n"
                   for line in write_solution(a).splitlines()
                   if not line.startswith(f"F_O_{op.stage}_{op.microbatch} "))
    with pytest.raises(ConstraintResidual):
        decode_solution(md, parse_solution(md, text), inst)


def test_decode_rejects_fractional_times():
    inst = make_uniform_instance(1, 1, 1, 1, 1, 0, 1, 2, 3)
    md = build_model(inst)
    _, a = _solved_assignment(inst, md)
    a["F_E_1_1_W"] = a["F_E_1_1_W"] + 0.5
    a["F_C"] = a["F_C"] + 0.5
    with pytest.raises(ConstraintResidual, match="integer grid"):
        decode_solution(md, a, inst)


# -- warm-start encoding ----------------------------------------------------------------

def test_sequential_eencoding_sets_every_ordering_binary_to_one():
    inst = make_uniform_instance(1, 2, 1, 1, 1, 0, 1, 2, 4)
    md = build_model(inst)
    a = encode_warm_start(sequential_schedule(inst), md, inst)
    for name in _p_vars(md):
        assert a[name] == 1     # micro-batch 1 runs entirely before 2


def test_encode_then_decode_preserves_makespan_and_offloads():
    inst = random_instance(12, 2, 2, mem_profile="tight")
    md = build_model(inst)
    s = ada_offload(inst, AdaParams())
    a = encode_warm_start(s, md, inst)
    again = decode_solution(md, a, inst)
    assert makespan(again, inst) == makespan(s, inst)
    assert again.offloaded == s.offloaded


def test_encoding_zero_residuals_for_heuristic_schedules():
    inst = random_instance(21, 2, 2, mem_profile="tight")
    md = build_model(inst)
    a = encode_warm_start(ada_offload(inst, AdaParams()), md, inst)
    assert md.residuals(a) == []


def test_order_breaking_schedule_is_rejected_as_warm_start():
    inst = make_uniform_instance(1, 2, 1, 1, 1, 0, 1, 2, 4)
    swapped = run_order(inst, {1: (OpId(1, 2, F), OpId(1, 2, B), OpId(1, 2, W),
                                   OpId(1, 1, F), OpId(1, 1, B), OpId(1, 1, W))},
                        frozenset())
    assert validate(swapped, inst).ok
    md = build_model(inst)                      # fixed micro-batch order
    with pytest.raises(InfeasibleWarmStart):
        encode_warm_start(swapped, md, inst)


# -- cross-route optimality ---------------------------------------------------------------

@given(seed=st.integers(0, 30))
@settings(max_examples=8, deadline=None)
def test_text_route_matches_the_search_on_ample_instances(seed):
    inst = random_instance(seed, 2, 2, mem_profile="ample")
    assert highs_optimum(inst) == solve(inst).incumbent_makespan


@given(seed=st.integers(0, 30))
@settings(max_examples=8, deadline=None)
def test_text_route_never_exceeds_the_search_optimum(seed):
    # boundary-granular memory rows admit every physically-safe schedule,
    # so the model optimum is a lower bound for the search optimum
    inst = random_instance(seed, 2, 2, mem_profile="tight")
    assert highs_optimum(inst) <= solve(inst).incumbent_makespan


def test_elimination_does_not_change_the_optimum():
    inst = random_instance(17, 2, 2, mem_profile="tight")
    on = ModelOptions(eliminate_transitive=True)
    off = ModelOptions(eliminate_transitive=False)
    assert highs_optimum(inst, on) == highs_optimum(inst, off)
