"""Exact schedule optimization.

Both the branch-and-bound solver and the exhaustive oracle search the same
space: sequences of *dispatches*.  A dispatch starts one event (compute,
offload or reload) at the current clock; a clock-advance move jumps to the
next time anything new could start.  Every schedule built this way has each
start tight against some constraint, and an optimal schedule of that shape
always exists, so searching dispatch sequences is exhaustive for the optimum.

The two searchers are written independently on purpose: the oracle is a
plain memoized enumeration with no pruning beyond validity, so it can
cross-check the solver's bounds and filters on small instances.

Memory accounting is Strict (offload frees bytes at transfer end), so every
schedule either searcher emits is safe under physical semantics — and hence
also under the relaxed accounting the linear model uses.
"""

from __future__ import annotations

import time as _time
from bisect import bisect_right, insort
from dataclasses import dataclass, field

from .instance import OpId, OpKind, PipelineInstance
from .schedule import (ComputeEvent, Schedule, TransferEvent, TransferKind,
                       makespan as _sched_makespan)

F, B, W = OpKind.F, OpKind.B, OpKind.W

OPTIMAL = "Optimal"
FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"
UNKNOWN = "Unknown"


class PreconditionViolation(Exception):
    """Instance outside the operation's supported size."""


class SessionClosed(Exception):
    """The incumbent stream was already consumed."""


@dataclass(frozen=True)
class SolveBudget:
    wall_time_limit: float | None = 300.0     # seconds
    node_limit: int | None = None
    target_gap: float = 0.0

    def __post_init__(self):
        if self.wall_time_limit is None and self.node_limit is None:
            raise ValueError("need a wall-time or node limit")
        if self.target_gap < 0:
            raise ValueError("target_gap must be >= 0")


@dataclass
class SolveOutcome:
    incumbent: Schedule | None
    incumbent_makespan: int | None     # None when no incumbent
    lower_bound: int
    status: str
    nodes: int = 0
    prunes_bound: int = 0
    dead_ends: int = 0
    elapsed: float = 0.0

    def to_dict(self):
        return {
            "status": self.status,
            "makespan": self.incumbent_makespan,
            "lower_bound": self.lower_bound,
            "nodes": self.nodes,
            "prunes_bound": self.prunes_bound,
            "dead_ends": self.dead_ends,
            "elapsed_s": round(self.elapsed, 6),
        }


@dataclass(frozen=True)
class IncumbentEvent:
    schedule: Schedule
    makespan: int
    lower_bound: int
    timestamp: float
    status: str | None = None     # set on the final event of a stream


# -- shared small helpers ------------------------------------------------------


def _objective(inst, comp_start, post_validation):
    """Makespan of a complete compute assignment {op: start}."""
    if post_validation:
        worst = 0
        for i in range(1, inst.num_stages + 1):
            first_f = min(comp_start[op] for op in inst.stage_ops(i)
                          if op.kind is F)
            last_w = max(comp_start[op] + inst.proc_time[op]
                         for op in inst.stage_ops(i) if op.kind is W)
            worst = max(worst, last_w - first_f)
        return worst
    hi = max(comp_start[op] + inst.proc_time[op] for op in comp_start)
    lo = min(comp_start.values())
    return hi - lo


def _build_schedule(inst, comp_start, off_start, rel_start):
    comp = tuple(ComputeEvent(op, s, s + inst.proc_time[op])
                 for op, s in sorted(comp_start.items()))
    tr = []
    for x, s in sorted(off_start.items()):
        tr.append(TransferEvent(x, TransferKind.OFFLOAD, s, s + inst.offload_time))
    for x, s in sorted(rel_start.items()):
        tr.append(TransferEvent(x, TransferKind.RELOAD, s, s + inst.offload_time))
    return Schedule(comp, tuple(tr), frozenset(off_start))


def _suffix_ok(points, limit, t, delta):
    """Would adding `delta` at time t keep usage <= limit for all s >= t?
    points: sorted committed (time, delta) list."""
    run, worst_tail, seen = 0, 0, False
    usage_at_t = 0
    for bt, d in points:
        run += d
        if bt <= t:
            usage_at_t = run
        else:
            seen = True
            worst_tail = max(worst_tail, run)
    worst = max(usage_at_t, worst_tail) if seen else usage_at_t
    return worst + delta <= limit


def _earliest_fit(points, limit, lo, delta, lag):
    """Earliest t >= lo with usage(s)+delta <= limit for all s >= t+lag."""
    if delta <= 0:
        return lo
    t = lo
    boundaries = sorted({bt for bt, _ in points})
    while True:
        if _suffix_ok(points, limit, t + lag, delta):
            return t
        nxt = None
        for bt in boundaries:
            if bt > t + lag:
                nxt = bt
                break
        if nxt is None:
            return None
        t = nxt - lag


# =============================================================================
# Branch and bound
# =============================================================================

class _Done(Exception):
    def __init__(self, status):
        self.status = status


class _Search:
    def __init__(self, inst: PipelineInstance, budget: SolveBudget,
                 symmetry: bool, post_validation: bool):
        self.inst = inst
        self.budget = budget
        self.post = post_validation
        self.symmetric = symmetry and inst.microbatch_symmetric()
        self.ops = list(inst.ops())
        self.offloadable = sorted(inst.offloadable_ops())
        P = inst.num_stages
        self.stages = range(1, P + 1)

        self.comp_start: dict = {}
        self.off_start: dict = {}
        self.rel_start: dict = {}
        self.stage_free = {i: 0 for i in self.stages}
        self.chan_free = {g: 0 for g in range(len(inst.topology_groups))}
        self.mem = {i: [] for i in self.stages}    # sorted (time, delta)
        self.clock = 0

        self.best_span: int | None = None
        self.best_schedule: Schedule | None = None
        self.events: list = []                      # IncumbentEvent records
        self.nodes = 0
        self.prunes_bound = 0
        self.dead_ends = 0
        self.open_lbs: list = []
        self.t0 = _time.monotonic()
        self.root_lb = 0

    # -- move legality -------------------------------------------------------

    def _compute_floor(self, op):
        """Dependency floor, or None if a prerequisite is uncommitted."""
        inst, i, j, c = self.inst, op.stage, op.microbatch, op.kind
        floors = [self.stage_free[i]]
        if self.symmetric and j > 1 and OpId(i, j - 1, c) not in self.comp_start:
            return None
        if c is F:
            if i > 1:
                up = OpId(i - 1, j, F)
                if up not in self.comp_start:
                    return None
                floors.append(self.comp_start[up] + inst.proc_time[up] + inst.comm_time)
        elif c is B:
            own = OpId(i, j, F)
            if own not in self.comp_start:
                return None
            floors.append(self.comp_start[own] + inst.proc_time[own])
            if i < inst.num_stages:
                dn = OpId(i + 1, j, B)
                if dn not in self.comp_start:
                    return None
                floors.append(self.comp_start[dn] + inst.proc_time[dn] + inst.comm_time)
            if own in self.off_start:
                if own not in self.rel_start:
                    return None
                floors.append(self.rel_start[own] + inst.offload_time)
        else:
            own = OpId(i, j, B)
            if own not in self.comp_start:
                return None
            floors.append(self.comp_start[own] + inst.proc_time[own])
        return max(floors)

    def _offload_floor(self, x):
        if x in self.off_start or OpId(x.stage, x.microbatch, B) in self.comp_start:
            return None
        if x not in self.comp_start:
            return None
        inst = self.inst
        g = inst.stage_channel(x.stage)
        return max(self.comp_start[x] + inst.proc_time[x], self.chan_free[g])

    def _reload_floor(self, x):
        """(floor, stage) ignoring memory; None if not pending."""
        if x not in self.off_start or x in self.rel_start:
            return None
        if OpId(x.stage, x.microbatch, B) in self.comp_start:
            return None
        inst = self.inst
        g = inst.stage_channel(x.stage)
        return max(self.off_start[x] + inst.offload_time, self.chan_free[g])

    def _legal_moves(self):
        """Dispatches legal at the current clock, in canonical order.

        Transfers rank before computes: an offload's negative delta can be
        what lets a same-instant compute fit, so negatives must be allowed
        to commit first.  The reverse never blocks anything — positive
        deltas commute and computes never enable a same-instant transfer.
        """
        inst, t = self.inst, self.clock
        moves = []
        for x in self.offloadable:
            fl = self._offload_floor(x)
            if fl is not None and fl <= t:
                moves.append((0, x, ("o", x)))
            fl = self._reload_floor(x)
            if fl is not None and fl <= t:
                if _suffix_ok(self.mem[x.stage], inst.mem_limit[x.stage],
                              t, inst.act_size[x]):
                    moves.append((1, x, ("r", x)))
        for op in self.ops:
            if op in self.comp_start:
                continue
            fl = self._compute_floor(op)
            if fl is None or fl > t:
                continue
            delta = inst.mem_delta[op]
            if delta > 0 and not _suffix_ok(self.mem[op.stage], inst.mem_limit[op.stage],
                                            t + inst.proc_time[op], delta):
                continue
            moves.append((2, op, ("c", op)))
        moves.sort(key=lambda mv: mv[:2])
        return moves

    def _advance_target(self):
        """Next time anything new could start (None if no such time)."""
        inst, t = self.inst, self.clock
        best = None

        def consider(v):
            nonlocal best
            if v is not None and v > t and (best is None or v < best):
                best = v

        for op, s in self.comp_start.items():
            consider(s + inst.proc_time[op])
        for x, s in self.off_start.items():
            consider(s + inst.offload_time)
        for x, s in self.rel_start.items():
            consider(s + inst.offload_time)
        for op in self.ops:
            if op in self.comp_start:
                continue
            fl = self._compute_floor(op)
            if fl is None:
                continue
            delta = inst.mem_delta[op]
            if delta > 0:
                fl = _earliest_fit(self.mem[op.stage], inst.mem_limit[op.stage],
                                   fl, delta, inst.proc_time[op])
                if fl is None:
                    continue
            consider(fl)
        for x in self.offloadable:
            consider(self._offload_floor(x))
            fl = self._reload_floor(x)
            if fl is not None:
                fl = _earliest_fit(self.mem[x.stage], inst.mem_limit[x.stage],
                                   fl, inst.act_size[x], 0)
                consider(fl)
        return best

    # -- bounds ---------------------------------------------------------------

    def _chain_ends(self):
        """Earliest-possible end per op ignoring stage queueing."""
        inst, t = self.inst, self.clock
        E = {}
        for j in range(1, inst.num_microbatches + 1):
            for i in self.stages:
                op = OpId(i, j, F)
                if op in self.comp_start:
                    E[op] = self.comp_start[op] + inst.proc_time[op]
                else:
                    lo = max(t, self.stage_free[i])
                    if i > 1:
                        lo = max(lo, E[OpId(i - 1, j, F)] + inst.comm_time)
                    E[op] = lo + inst.proc_time[op]
        for j in range(1, inst.num_microbatches + 1):
            for i in reversed(self.stages):
                op = OpId(i, j, B)
                if op in self.comp_start:
                    E[op] = self.comp_start[op] + inst.proc_time[op]
                else:
                    lo = max(t, self.stage_free[i], E[OpId(i, j, F)])
                    if i < inst.num_stages:
                        lo = max(lo, E[OpId(i + 1, j, B)] + inst.comm_time)
                    E[op] = lo + inst.proc_time[op]
                wop = OpId(i, j, W)
                if wop in self.comp_start:
                    E[wop] = self.comp_start[wop] + inst.proc_time[wop]
                else:
                    E[wop] = max(t, self.stage_free[i], E[op]) + inst.proc_time[wop]
        return E

    def _bound(self):
        inst, t = self.inst, self.clock
        if self.post:
            worst = 0
            for i in self.stages:
                rem = sum(inst.proc_time[op] for op in inst.stage_ops(i)
                          if op not in self.comp_start)
                f_starts = [self.comp_start[op] for op in inst.stage_ops(i)
                            if op.kind is F and op in self.comp_start]
                if rem == 0:
                    first_f = min(f_starts)
                    last_w = max(self.comp_start[op] + inst.proc_time[op]
                                 for op in inst.stage_ops(i) if op.kind is W)
                    worst = max(worst, last_w - first_f)
                elif f_starts:
                    worst = max(worst, max(self.stage_free[i], t) + rem - min(f_starts))
                else:
                    worst = max(worst, rem)
            return worst
        lb = 0
        for op, s in self.comp_start.items():
            lb = max(lb, s + inst.proc_time[op])
        for i in self.stages:
            rem = sum(inst.proc_time[op] for op in inst.stage_ops(i)
                      if op not in self.comp_start)
            if rem:
                lb = max(lb, max(self.stage_free[i], t) + rem)
        E = self._chain_ends()
        lb = max(lb, max(E.values()))
        if self.comp_start:
            lb -= min(self.comp_start.values())
        return lb

    # -- commit / undo ---------------------------------------------------------

    def _apply(self, move):
        kind, op = move
        inst, t = self.inst, self.clock
        if kind == "c":
            self.comp_start[op] = t
            prev = self.stage_free[op.stage]
            self.stage_free[op.stage] = t + inst.proc_time[op]
            insort(self.mem[op.stage], (t + inst.proc_time[op], inst.mem_delta[op]))
            return ("c", op, prev)
        g = inst.stage_channel(op.stage)
        prev = self.chan_free[g]
        self.chan_free[g] = t + inst.offload_time
        if kind == "o":
            self.off_start[op] = t
            insort(self.mem[op.stage], (t + inst.offload_time, -inst.act_size[op]))
            return ("o", op, prev, g)
        self.rel_start[op] = t
        insort(self.mem[op.stage], (t, inst.act_size[op]))
        return ("r", op, prev, g)

    def _undo(self, token):
        inst = self.inst
        if token[0] == "c":
            _, op, prev = token
            t = self.comp_start.pop(op)
            self.stage_free[op.stage] = prev
            self.mem[op.stage].remove((t + inst.proc_time[op], inst.mem_delta[op]))
        elif token[0] == "o":
            _, op, prev, g = token
            t = self.off_start.pop(op)
            self.chan_free[g] = prev
            self.mem[op.stage].remove((t + inst.offload_time, -inst.act_size[op]))
        else:
            _, op, prev, g = token
            t = self.rel_start.pop(op)
            self.chan_free[g] = prev
            self.mem[op.stage].remove((t, inst.act_size[op]))

    # -- search -----------------------------------------------------------------

    def _tick(self):
        self.nodes += 1
        if self.budget.node_limit is not None and self.nodes >= self.budget.node_limit:
            raise _Done(FEASIBLE if self.best_span is not None else UNKNOWN)
        if self.budget.wall_time_limit is not None and (self.nodes & 0x7F) == 0:
            if _time.monotonic() - self.t0 >= self.budget.wall_time_limit:
                raise _Done(FEASIBLE if self.best_span is not None else UNKNOWN)

    def _record_incumbent(self):
        span = _objective(self.inst, self.comp_start, self.post)
        if self.best_span is not None and span >= self.best_span:
            return
        self.best_span = span
        self.best_schedule = _build_schedule(self.inst, self.comp_start,
                                             self.off_start, self.rel_start)
        lb = min(self.open_lbs) if self.open_lbs else span
        self.events.append(IncumbentEvent(self.best_schedule, span,
                                          min(lb, span),
                                          _time.monotonic() - self.t0))
        if self.best_span is not None and self.budget.target_gap > 0:
            cur_lb = min(self.open_lbs) if self.open_lbs else self.best_span
            if self.best_span - cur_lb <= self.budget.target_gap * self.best_span:
                raise _Done(OPTIMAL if cur_lb >= self.best_span else FEASIBLE)

    def _dfs(self, last_key):
        self._tick()
        if len(self.comp_start) == len(self.ops):
            self._record_incumbent()
            return
        lb = self._bound()
        if self.best_span is not None and lb >= self.best_span:
            self.prunes_bound += 1
            return
        self.open_lbs.append(lb)
        try:
            moves = self._legal_moves()
            for rank, op, move in moves:
                if last_key is not None and (rank, op) <= last_key:
                    continue
                token = self._apply(move)
                self._dfs((rank, op))
                self._undo(token)
            target = self._advance_target()
            if target is not None:
                prev = self.clock
                self.clock = target
                self._dfs(None)
                self.clock = prev
            elif not moves:
                self.dead_ends += 1
        finally:
            self.open_lbs.pop()

    def run(self, warm: Schedule | None, warm_span: int | None):
        if warm is not None and warm_span is not None:
            self.best_span = warm_span
            self.best_schedule = warm
            self.events.append(IncumbentEvent(warm, warm_span, 0, 0.0))
        self.root_lb = self._bound()
        status = None
        over_budget = (self.budget.wall_time_limit is not None
                       and self.budget.wall_time_limit <= 0) or \
                      (self.budget.node_limit is not None and self.budget.node_limit <= 0)
        if over_budget:
            status = FEASIBLE if self.best_span is not None else UNKNOWN
        else:
            try:
                self._dfs(None)
                status = OPTIMAL if self.best_span is not None else INFEASIBLE
            except _Done as d:
                status = d.status
        if status == OPTIMAL:
            lb = self.best_span
        elif status == INFEASIBLE:
            lb = self.root_lb
        else:
            lb = min(self.open_lbs) if self.open_lbs else self.root_lb
            if self.best_span is not None:
                lb = min(lb, self.best_span)
        outcome = SolveOutcome(
            incumbent=self.best_schedule,
            incumbent_makespan=self.best_span,
            lower_bound=lb,
            status=status,
            nodes=self.nodes,
            prunes_bound=self.prunes_bound,
            dead_ends=self.dead_ends,
            elapsed=_time.monotonic() - self.t0,
        )
        if self.events:
            last = self.events[-1]
            self.events[-1] = IncumbentEvent(last.schedule, last.makespan,
                                             lb, last.timestamp, status)
        return outcome


class SolveSession:
    """A finished solve run exposing its incumbent improvements as a stream."""

    def __init__(self, outcome: SolveOutcome, events):
        self.outcome = outcome
        self._events = list(events)
        self._consumed = False

    def stream(self):
        if self._consumed:
            raise SessionClosed("incumbent stream already consumed")
        self._consumed = True
        return iter(self._events)


def incumbent_stream(session: SolveSession):
    """Each strictly improving incumbent once; final event carries status."""
    return session.stream()


def start_session(inst: PipelineInstance, budget: SolveBudget | None = None,
                  warm: Schedule | None = None, symmetry: bool = True,
                  post_validation: bool | None = None,
                  auto_warm: bool = True) -> SolveSession:
    """Run a solve eagerly and wrap the recorded improvements in a session."""
    budget = budget or SolveBudget()
    post = inst.post_validation if post_validation is None else post_validation
    from .schedule import MemorySemantics, validate
    if warm is None and auto_warm:
        from .heuristics import AdaParams, NoFeasibleSchedule, best_feasible
        try:
            warm, _ = best_feasible(inst, AdaParams())
        except NoFeasibleSchedule:
            warm = None
    warm_span = None
    if warm is not None:
        if not validate(warm, inst, MemorySemantics.STRICT).ok:
            warm = None        # unsafe warm starts are unusable as incumbents
        else:
            warm_span = _sched_makespan(warm, inst)
    search = _Search(inst, budget, symmetry, post)
    outcome = search.run(warm, warm_span)
    return SolveSession(outcome, search.events)


def solve(inst: PipelineInstance, opts=None, budget: SolveBudget | None = None,
          warm: Schedule | None = None) -> SolveOutcome:
    """Best schedule within budget; anytime, warm-startable.

    opts is a model-options bundle; only its symmetry and post-validation
    flags matter here (the model itself is not built).
    """
    symmetry = True
    post = None
    if opts is not None:
        symmetry = opts.fix_microbatch_order
        post = opts.post_validation
    session = start_session(inst, budget=budget, warm=warm, symmetry=symmetry,
                            post_validation=post)
    return session.outcome


# =============================================================================
# Exhaustive oracle
# =============================================================================

_INF = float("inf")
_NEG = float("-inf")


class _Oracle:
    """Memoized exhaustive enumeration of dispatch sequences.

    No bounds and no incumbent pruning — only validity (and canonical
    micro-batch order on symmetric instances).  The memo key is an exact
    quotient of the search state: times are rebased to the clock, spent
    history folds into per-stage usage levels, and floors that can no longer
    bind are clamped, so states that differ only in irrelevant past detail
    share one entry.  The achievable objective from a state is recovered as
    clock + memo value, which is sound because min over completions commutes
    with max against the already-committed part of the objective.
    """

    def __init__(self, inst: PipelineInstance):
        ops = sorted(inst.ops())
        offl = sorted(inst.offloadable_ops())
        if len(ops) > 12:
            raise PreconditionViolation(f"{len(ops)} compute ops (limit 12)")
        if len(offl) > 4:
            raise PreconditionViolation(f"{len(offl)} offloadable ops (limit 4)")
        self.inst = inst
        self.ops = ops
        self.n = len(ops)
        self.offloadable = offl
        self.P = inst.num_stages
        self.stages = range(1, self.P + 1)
        self.stage_ops_list = {i: sorted(inst.stage_ops(i)) for i in self.stages}
        self.symmetric = inst.microbatch_symmetric()
        self.post = inst.post_validation
        self.tproc = inst.proc_time
        self.tdelta = inst.mem_delta
        self.tgam = inst.act_size
        self.toff = inst.offload_time
        self.tcomm = inst.comm_time
        self.limits = inst.mem_limit
        self.chan = {i: inst.stage_channel(i) for i in self.stages}
        self.n_chan = len(inst.topology_groups)
        m = inst.num_microbatches
        self.ample = all(
            inst.mem_limit[i] >= sum(self.tdelta[OpId(i, j, F)]
                                     for j in range(1, m + 1))
            for i in self.stages)
        self.memo = {}
        self.nodes = 0

    # -- state machinery -------------------------------------------------------

    def derive(self, raw):
        clock, comps, offs, rels = raw
        comp, off, rel = dict(comps), dict(offs), dict(rels)
        stage_free = {i: 0 for i in self.stages}
        chan_free = {g: 0 for g in range(self.n_chan)}
        mem = {i: [] for i in self.stages}
        for op, s in comp.items():
            e = s + self.tproc[op]
            if e > stage_free[op.stage]:
                stage_free[op.stage] = e
            mem[op.stage].append((e, self.tdelta[op]))
        for x, s in off.items():
            g = self.chan[x.stage]
            if s + self.toff > chan_free[g]:
                chan_free[g] = s + self.toff
            mem[x.stage].append((s + self.toff, -self.tgam[x]))
        for x, s in rel.items():
            g = self.chan[x.stage]
            if s + self.toff > chan_free[g]:
                chan_free[g] = s + self.toff
            mem[x.stage].append((s, self.tgam[x]))
        for i in mem:
            mem[i].sort()
        return comp, off, rel, stage_free, chan_free, mem

    def canon(self, raw, der):
        clock = raw[0]
        comp, off, rel, stage_free, chan_free, mem = der
        lo = -self.tcomm
        cstat = tuple(
            max(comp[op] + self.tproc[op] - clock, lo) if op in comp else None
            for op in self.ops)
        sfree = tuple(max(stage_free[i] - clock, 0) for i in self.stages)
        parts = [cstat, sfree]
        if not self.ample:
            cfree = tuple(max(chan_free[g] - clock, 0) for g in range(self.n_chan))
            xstat = []
            for x in self.offloadable:
                bop = OpId(x.stage, x.microbatch, B)
                if x in rel:
                    xstat.append("n" if bop in comp
                                 else ("r", max(rel[x] + self.toff - clock, 0)))
                elif x in off:
                    xstat.append(("o", max(off[x] + self.toff - clock, 0)))
                elif bop in comp:
                    xstat.append("n")
                else:
                    xstat.append("u")
            memc = []
            for i in self.stages:
                usage, fut = 0, {}
                for t, d in mem[i]:
                    if t <= clock:
                        usage += d
                    else:
                        fut[t - clock] = fut.get(t - clock, 0) + d
                memc.append((usage, tuple(sorted(fut.items()))))
            parts += [cfree, tuple(xstat), tuple(memc)]
        if self.post:
            pstat = []
            for i in self.stages:
                sops = self.stage_ops_list[i]
                if all(o in comp for o in sops):
                    pstat.append(None)
                else:
                    fs = [comp[o] for o in sops if o.kind is F and o in comp]
                    ws = [comp[o] + self.tproc[o]
                          for o in sops if o.kind is W and o in comp]
                    pstat.append((min(fs) - clock if fs else None,
                                  max(max(ws) - clock, 0) if ws else 0))
            parts.append(tuple(pstat))
        return tuple(parts)

    def comp_floor(self, op, comp, off, rel, stage_free):
        i, j, c = op.stage, op.microbatch, op.kind
        floors = [stage_free[i]]
        if self.symmetric and j > 1 and OpId(i, j - 1, c) not in comp:
            return None
        if c is F:
            if i > 1:
                up = OpId(i - 1, j, F)
                if up not in comp:
                    return None
                floors.append(comp[up] + self.tproc[up] + self.tcomm)
        elif c is B:
            own = OpId(i, j, F)
            if own not in comp:
                return None
            floors.append(comp[own] + self.tproc[own])
            if i < self.P:
                dn = OpId(i + 1, j, B)
                if dn not in comp:
                    return None
                floors.append(comp[dn] + self.tproc[dn] + self.tcomm)
            if own in off:
                if own not in rel:
                    return None
                floors.append(rel[own] + self.toff)
        else:
            own = OpId(i, j, B)
            if own not in comp:
                return None
            floors.append(comp[own] + self.tproc[own])
        return max(floors)

    def successors(self, raw, der):
        clock, comps, offs, rels = raw
        comp, off, rel, stage_free, chan_free, mem = der
        out = []
        if not self.ample:
            for x in self.offloadable:
                bop = OpId(x.stage, x.microbatch, B)
                pend_off = x in comp and x not in off and bop not in comp
                pend_rel = x in off and x not in rel and bop not in comp
                if pend_off and max(comp[x] + self.tproc[x],
                                    chan_free[self.chan[x.stage]]) <= clock:
                    child = (clock, comps, tuple(sorted(offs + ((x, clock),))), rels)
                    out.append(("o", x, child))
                if pend_rel and max(off[x] + self.toff,
                                    chan_free[self.chan[x.stage]]) <= clock \
                        and _suffix_ok(mem[x.stage], self.limits[x.stage],
                                       clock, self.tgam[x]):
                    child = (clock, comps, offs, tuple(sorted(rels + ((x, clock),))))
                    out.append(("r", x, child))
        for op in self.ops:
            if op in comp:
                continue
            fl = self.comp_floor(op, comp, off, rel, stage_free)
            if fl is None or fl > clock:
                continue
            d = self.tdelta[op]
            if not self.ample and d > 0 and not _suffix_ok(
                    mem[op.stage], self.limits[op.stage],
                    clock + self.tproc[op], d):
                continue
            child = (clock, tuple(sorted(comps + ((op, clock),))), offs, rels)
            out.append(("c", op, child))

        target = None

        def consider(v):
            nonlocal target
            if v is not None and v > clock and (target is None or v < target):
                target = v

        for op2, s in comp.items():
            consider(s + self.tproc[op2])
        if not self.ample:
            for _, s in off.items():
                consider(s + self.toff)
            for _, s in rel.items():
                consider(s + self.toff)
        for op2 in self.ops:
            if op2 in comp:
                continue
            fl = self.comp_floor(op2, comp, off, rel, stage_free)
            if fl is None:
                continue
            d = self.tdelta[op2]
            if not self.ample and d > 0:
                fl = _earliest_fit(mem[op2.stage], self.limits[op2.stage],
                                   max(fl, clock), d, self.tproc[op2])
                if fl is None:
                    continue
            consider(fl)
        if not self.ample:
            for x in self.offloadable:
                bop = OpId(x.stage, x.microbatch, B)
                if x in comp and x not in off and bop not in comp:
                    consider(max(comp[x] + self.tproc[x],
                                 chan_free[self.chan[x.stage]]))
                if x in off and x not in rel and bop not in comp:
                    fl = max(off[x] + self.toff, chan_free[self.chan[x.stage]])
                    fl = _earliest_fit(mem[x.stage], self.limits[x.stage],
                                       max(fl, clock), self.tgam[x], 0)
                    consider(fl)
        if target is not None:
            out.append(("adv", None, (target, comps, offs, rels)))
        return out

    # -- value recursion ---------------------------------------------------------

    def _combine(self, tag, op, child_val, raw, child):
        """Objective contribution of committing `op`, merged with the tail."""
        if tag != "c":
            return child_val
        clock = raw[0]
        if not self.post:
            return max(child_val, clock + self.tproc[op])
        sops = self.stage_ops_list[op.stage]
        comp = dict(child[1])
        if all(o in comp for o in sops):
            first_f = min(comp[o] for o in sops if o.kind is F)
            last_w = max(comp[o] + self.tproc[o] for o in sops if o.kind is W)
            return max(child_val, last_w - first_f)
        return child_val

    def h(self, raw):
        """Min over completions of the objective part not yet committed."""
        clock = raw[0]
        der = self.derive(raw)
        key = self.canon(raw, der)
        hit = self.memo.get(key)
        if hit is not None:
            return hit if self.post else hit + clock
        self.nodes += 1
        if len(raw[1]) == self.n:
            best = _NEG
        else:
            best = _INF
            for tag, op, child in self.successors(raw, der):
                v = self._combine(tag, op, self.h(child), raw, child)
                if v < best:
                    best = v
        self.memo[key] = best if self.post else best - clock
        return best

    def rebuild(self, root):
        raw = root
        while len(raw[1]) < self.n:
            der = self.derive(raw)
            best_v, best_child = _INF, None
            for tag, op, child in self.successors(raw, der):
                v = self._combine(tag, op, self.h(child), raw, child)
                if v < best_v:
                    best_v, best_child = v, child
            raw = best_child
        return raw

    def run(self) -> SolveOutcome:
        t0 = _time.monotonic()
        root = (0, (), (), ())
        value = self.h(root)
        if value == _INF:
            return SolveOutcome(None, None, 0, INFEASIBLE, nodes=self.nodes,
                                elapsed=_time.monotonic() - t0)
        _, comps, offs, rels = self.rebuild(root)
        sched = _build_schedule(self.inst, dict(comps), dict(offs), dict(rels))
        value = int(value)
        return SolveOutcome(sched, value, value, OPTIMAL, nodes=self.nodes,
                            elapsed=_time.monotonic() - t0)


def brute_force_oracle(inst: PipelineInstance) -> SolveOutcome:
    """True optimum by exhaustive enumeration; small instances only."""
    return _Oracle(inst).run()
