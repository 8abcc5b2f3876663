"""Baseline schedule generators: sequential, 1F1B, offload-everything, and
the adaptive-fill variant used as the default warm start.

All generators produce structures (per-stage op orders plus an offload set)
and hand timing to the shared earliest-feasible engine, so every returned
schedule is valid under Strict memory accounting by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .instance import OpId, OpKind, PipelineInstance
from .listsched import OrderInfeasible, run_order
from .schedule import Schedule

F, B, W = OpKind.F, OpKind.B, OpKind.W


class InfeasibleSchedule(Exception):
    """The generator's strategy cannot fit this instance's memory limits."""


class NoFeasibleSchedule(Exception):
    """No generator produced a feasible schedule."""


@dataclass(frozen=True)
class AdaParams:
    """tolerance: how far the first backward may slip to admit extra fill."""
    tolerance: int = 0

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")


def fill_profile(s: Schedule, inst: PipelineInstance) -> dict:
    """Per stage: number of forwards started before the stage's first backward."""
    out = {}
    for i in range(1, inst.num_stages + 1):
        evs = [ev for ev in s.compute if ev.op.stage == i]
        first_b = min(ev.start for ev in evs if ev.op.kind is B)
        out[i] = sum(1 for ev in evs if ev.op.kind is F and ev.start < first_b)
    return out


# -- generators --------------------------------------------------------------

def sequential_schedule(inst: PipelineInstance) -> Schedule:
    """One micro-batch at a time, start to finish; no offloads."""
    for i in range(1, inst.num_stages + 1):
        for j in range(1, inst.num_microbatches + 1):
            if inst.mem_delta[OpId(i, j, F)] > inst.mem_limit[i]:
                raise InfeasibleSchedule(
                    f"stage {i} cannot hold one activation of microbatch {j}")
    orders = {i: tuple(OpId(i, j, c)
                       for j in range(1, inst.num_microbatches + 1)
                       for c in (F, B, W))
              for i in range(1, inst.num_stages + 1)}
    return run_order(inst, orders, frozenset())


def _one_f_one_b_order(inst: PipelineInstance, stage: int, warmup: int):
    m = inst.num_microbatches
    seq = [OpId(stage, j, F) for j in range(1, warmup + 1)]
    for k in range(1, m + 1):
        seq.append(OpId(stage, k, B))
        seq.append(OpId(stage, k, W))
        if warmup + k <= m:
            seq.append(OpId(stage, warmup + k, F))
    return tuple(seq)


def one_f_one_b(inst: PipelineInstance) -> Schedule:
    """Classic 1F1B: per-stage warm-up forwards, then alternate B+W with F."""
    P, m = inst.num_stages, inst.num_microbatches
    orders = {i: _one_f_one_b_order(inst, i, min(P - i + 1, m))
              for i in range(1, P + 1)}
    try:
        return run_order(inst, orders, frozenset())
    except OrderInfeasible as e:
        raise InfeasibleSchedule(
            f"1F1B exceeds memory (blocked stages: {list(e.stages)})") from None


def _filled_order(inst: PipelineInstance, stage: int, fill: int):
    """fill forwards up front, then alternate B+W with the remaining forwards."""
    m = inst.num_microbatches
    seq = [OpId(stage, j, F) for j in range(1, fill + 1)]
    for k in range(1, m + 1):
        seq.append(OpId(stage, k, B))
        seq.append(OpId(stage, k, W))
        if fill + k <= m:
            seq.append(OpId(stage, fill + k, F))
    return tuple(seq)


def pipeoffload_like(inst: PipelineInstance) -> Schedule:
    """Offload every activation; minimal fill; reloads earliest-feasible."""
    orders = {i: _filled_order(inst, i, 1) for i in range(1, inst.num_stages + 1)}
    offloaded = frozenset(inst.offloadable_ops())
    try:
        return run_order(inst, orders, offloaded)
    except OrderInfeasible as e:
        raise InfeasibleSchedule(
            f"offload-everything exceeds memory (blocked stages: {list(e.stages)})") from None


def _est_backward_starts(inst: PipelineInstance):
    """Earliest dependency-feasible start of the first backward per stage,
    using per-stage max runtimes (chain down the forwards, back up the
    backwards)."""
    P = inst.num_stages
    tmaxF, tmaxB = {}, {}
    for i in range(1, P + 1):
        tmaxF[i] = max(inst.proc_time[op] for op in inst.stage_ops(i) if op.kind is F)
        tmaxB[i] = max(inst.proc_time[op] for op in inst.stage_ops(i) if op.kind is B)
    fwd_chain = sum(tmaxF.values()) + (P - 1) * inst.comm_time
    est = {}
    for s in range(1, P + 1):
        est[s] = (fwd_chain
                  + sum(tmaxB[i] for i in range(s + 1, P + 1))
                  + (P - s) * inst.comm_time)
    return est


def _ada_fill_counts(inst: PipelineInstance, tolerance: int):
    """Greedy per-stage fill: keep adding forwards (each trailed by its
    offload) while the projected completion stays within tolerance of the
    first backward's estimated start and the backlog fits in memory."""
    P, m = inst.num_stages, inst.num_microbatches
    est = _est_backward_starts(inst)
    toff = inst.offload_time
    fills = {}
    prev_f_end = {}   # projected F completion per (stage, j)
    for s in range(1, P + 1):
        fill = 0
        f_end, o_end = 0, 0
        backlog = 0   # projected resident bytes if all earlier offloads landed
        for j in range(1, m + 1):
            if j > 1 and max(f_end, o_end + toff) >= est[s] + tolerance:
                break
            op = OpId(s, j, F)
            delta, gamma = inst.mem_delta[op], inst.act_size.get(op, 0)
            if j > 1 and backlog + delta > inst.mem_limit[s]:
                break
            start = f_end
            if s > 1:
                start = max(start, prev_f_end.get((s - 1, j), 0) + inst.comm_time)
            fill = j
            f_end = start + inst.proc_time[op]
            o_end = max(o_end, f_end) + toff
            backlog += delta - gamma
            prev_f_end[(s, j)] = f_end
        # projections for micro-batches beyond the fill feed downstream stages
        for j in range(fill + 1, m + 1):
            start = f_end
            if s > 1:
                start = max(start, prev_f_end.get((s - 1, j), 0) + inst.comm_time)
            f_end = start + inst.proc_time[OpId(s, j, F)]
            prev_f_end[(s, j)] = f_end
        fills[s] = max(fill, 1)
    return fills


def ada_offload(inst: PipelineInstance, params: AdaParams = AdaParams()) -> Schedule:
    """Adaptive fill: as many forwards as tolerance and memory allow before
    the first backward, then offload-everything steady state."""
    fills = _ada_fill_counts(inst, params.tolerance)
    offloaded = frozenset(inst.offloadable_ops())
    while True:
        orders = {i: _filled_order(inst, i, fills[i])
                  for i in range(1, inst.num_stages + 1)}
        try:
            return run_order(inst, orders, offloaded)
        except OrderInfeasible as e:
            # back off the deepest fill and retry; fill 1 == offload-everything
            reducible = [i for i in fills if fills[i] > 1]
            if not reducible:
                raise InfeasibleSchedule(
                    f"offload-everything exceeds memory (blocked stages: {list(e.stages)})"
                ) from None
            deepest = max(reducible, key=lambda i: (fills[i], i))
            fills[deepest] -= 1


_GENERATORS = (
    ("ada", lambda inst, p: ada_offload(inst, p)),
    ("pipeoffload", lambda inst, p: pipeoffload_like(inst)),
    ("1f1b", lambda inst, p: one_f_one_b(inst)),
    ("sequential", lambda inst, p: sequential_schedule(inst)),
)


def best_feasible(inst: PipelineInstance, params: AdaParams = AdaParams()):
    """Minimum-makespan feasible generator output, as (schedule, name)."""
    from .schedule import makespan
    best = None
    for name, gen in _GENERATORS:
        try:
            s = gen(inst, params)
        except InfeasibleSchedule:
            continue
        span = makespan(s, inst)
        if best is None or span < best[0]:
            best = (span, s, name)
    if best is None:
        raise NoFeasibleSchedule("all generators failed on this instance")
    return best[1], best[2]
