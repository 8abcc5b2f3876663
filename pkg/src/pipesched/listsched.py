"""Earliest-feasible replay of structured schedules.

A *structure* is the time-free part of a schedule: a total order of compute
ops per stage, the set of offloaded activations, and (optionally) a total
order of transfer events per channel.  The engine assigns concrete times by
committing, one event at a time, the structurally-next event with the
earliest feasible start, under Strict memory accounting.

Feasibility of a start time folds in: stage/channel availability, pipeline
dependencies (with communication lag), offload-after-F / reload-after-offload
/ reload-before-B rules, and the stage memory limit (an event adding bytes
waits until the addition fits under the limit forever after).

When no channel order is given, transfers are serviced greedily: each
channel runs the pending request with the earliest feasible start, preferring
reloads on ties.  Deadlock (nothing can ever start) means the structure is
infeasible for this instance.
"""

from __future__ import annotations

from bisect import insort
from dataclasses import dataclass, field

from .instance import OpId, OpKind, PipelineInstance
from .schedule import (ComputeEvent, Schedule, TransferEvent, TransferKind)


class OrderInfeasible(Exception):
    """The given structure admits no feasible timing for this instance."""

    def __init__(self, msg, stages=()):
        super().__init__(msg)
        self.stages = tuple(stages)


def stage_order_of(s: Schedule, stage: int) -> tuple:
    """Extract one stage's compute order from a timed schedule."""
    evs = sorted((ev for ev in s.compute if ev.op.stage == stage),
                 key=lambda e: (e.start, e.op))
    return tuple(ev.op for ev in evs)


def channel_order_of(s: Schedule, inst: PipelineInstance, channel: int) -> tuple:
    """Extract one channel's transfer order from a timed schedule."""
    evs = sorted((ev for ev in s.transfers
                  if inst.stage_channel(ev.op.stage) == channel),
                 key=lambda e: (e.start, e.op, e.kind.value))
    return tuple((ev.op, ev.kind) for ev in evs)


class _MemLedger:
    """Committed (time, delta) points for one stage; supports earliest-fit."""

    def __init__(self, limit):
        self.limit = limit
        self.points = []            # sorted (time, delta)

    def add(self, time, delta):
        insort(self.points, (time, delta))

    def earliest_fit(self, lo, delta, lag=0):
        """Smallest start t >= lo such that usage(s) + delta <= limit for all
        s >= t + lag.  None if no such t exists under current commitments."""
        if delta <= 0:
            return lo
        # usage after each breakpoint, then suffix maxima
        times, usages, run = [], [], 0
        for t, d in self.points:
            run += d
            if times and times[-1] == t:
                usages[-1] = run
            else:
                times.append(t)
                usages.append(run)
        suffmax = list(usages)
        for k in range(len(suffmax) - 2, -1, -1):
            suffmax[k] = max(suffmax[k], suffmax[k + 1])

        def worst_from(T):
            # max usage over [T, inf): plateau entering T plus all later breakpoints
            import bisect
            k = bisect.bisect_right(times, T)
            cur = usages[k - 1] if k else 0
            later = suffmax[k] if k < len(suffmax) else 0
            return max(cur, later)

        t = lo
        while True:
            if worst_from(t + lag) + delta <= self.limit:
                return t
            # jump to the next breakpoint after t+lag; usage only drops there
            nxt = None
            for bt in times:
                if bt > t + lag:
                    nxt = bt
                    break
            if nxt is None:
                return None
            t = nxt - lag


@dataclass
class _Shared:
    inst: PipelineInstance
    done: dict = field(default_factory=dict)          # OpId -> end time
    offload_end: dict = field(default_factory=dict)   # OpId -> end time
    reload_end: dict = field(default_factory=dict)
    compute_events: list = field(default_factory=list)
    transfer_events: list = field(default_factory=list)
    mem: dict = field(default_factory=dict)           # stage -> _MemLedger


def _compute_ready(st: _Shared, op: OpId, offloaded) -> int | None:
    """Dependency floor for a compute op, or None if a prerequisite event
    is not committed yet."""
    inst = st.inst
    i, j, c = op
    floors = [0]
    if c is OpKind.F:
        if i > 1:
            up = OpId(i - 1, j, OpKind.F)
            if up not in st.done:
                return None
            floors.append(st.done[up] + inst.comm_time)
    elif c is OpKind.B:
        own = OpId(i, j, OpKind.F)
        if own not in st.done:
            return None
        floors.append(st.done[own])
        if i < inst.num_stages:
            dn = OpId(i + 1, j, OpKind.B)
            if dn not in st.done:
                return None
            floors.append(st.done[dn] + inst.comm_time)
        if own in offloaded:
            if own not in st.reload_end:
                return None
            floors.append(st.reload_end[own])
    else:
        own = OpId(i, j, OpKind.B)
        if own not in st.done:
            return None
        floors.append(st.done[own])
    return max(floors)


def _commit_compute(st: _Shared, op: OpId, start: int):
    end = start + st.inst.proc_time[op]
    st.done[op] = end
    st.compute_events.append(ComputeEvent(op, start, end))
    st.mem[op.stage].add(end, st.inst.mem_delta[op])


def _commit_transfer(st: _Shared, op: OpId, kind: TransferKind, start: int):
    end = start + st.inst.offload_time
    gamma = st.inst.act_size[op]
    st.transfer_events.append(TransferEvent(op, kind, start, end))
    if kind is TransferKind.OFFLOAD:
        st.offload_end[op] = end
        st.mem[op.stage].add(end, -gamma)      # Strict: freed at transfer end
    else:
        st.reload_end[op] = end
        st.mem[op.stage].add(start, gamma)     # occupied from reload start


def run_order(inst: PipelineInstance, stage_orders: dict, offloaded,
              channel_orders: dict | None = None) -> Schedule:
    """Replay a structure to a timed schedule.  Raises OrderInfeasible."""
    offloaded = frozenset(offloaded)
    st = _Shared(inst=inst, mem={i: _MemLedger(inst.mem_limit[i])
                                 for i in range(1, inst.num_stages + 1)})
    stage_pos = {i: 0 for i in stage_orders}
    stage_free = {i: 0 for i in stage_orders}
    n_channels = len(inst.topology_groups)
    chan_free = {g: 0 for g in range(n_channels)}
    chan_pos = {g: 0 for g in range(n_channels)}
    # derived mode: requests become visible as their producers commit
    derived = channel_orders is None
    pending = {g: [] for g in range(n_channels)}      # (OpId, kind), unsorted
    requested = set()

    total = inst.num_stages * inst.num_microbatches * 3
    total_transfers = 2 * len(offloaded)

    def transfer_floor(op, kind):
        if kind is TransferKind.OFFLOAD:
            if op not in st.done:
                return None
            return st.done[op]
        if op not in st.offload_end:
            return None
        return st.offload_end[op]

    def transfer_candidate(g, op, kind):
        floor = transfer_floor(op, kind)
        if floor is None:
            return None
        lo = max(floor, chan_free[g])
        if kind is TransferKind.RELOAD:
            lo = st.mem[op.stage].earliest_fit(lo, inst.act_size[op])
            if lo is None:
                return None
        return lo

    while len(st.done) < total or len(st.transfer_events) < total_transfers:
        if derived:
            for x in offloaded:
                if x in st.done and (x, TransferKind.OFFLOAD) not in requested:
                    requested.add((x, TransferKind.OFFLOAD))
                    pending[inst.stage_channel(x.stage)].append((x, TransferKind.OFFLOAD))
                if x in st.offload_end and (x, TransferKind.RELOAD) not in requested:
                    requested.add((x, TransferKind.RELOAD))
                    pending[inst.stage_channel(x.stage)].append((x, TransferKind.RELOAD))

        best = None   # (time, rank, tiekey, action)
        for i in range(1, inst.num_stages + 1):
            if stage_pos[i] >= len(stage_orders[i]):
                continue
            op = stage_orders[i][stage_pos[i]]
            ready = _compute_ready(st, op, offloaded)
            if ready is None:
                continue
            lo = max(ready, stage_free[i])
            if op.kind is OpKind.F:
                lo = st.mem[op.stage].earliest_fit(lo, inst.mem_delta[op],
                                                   lag=inst.proc_time[op])
                if lo is None:
                    continue
            cand = (lo, 0, op, ("compute", i, op))
            if best is None or cand[:3] < best[:3]:
                best = cand
        for g in range(n_channels):
            if derived:
                options = pending[g]
            else:
                order = channel_orders.get(g, ())
                options = [order[chan_pos[g]]] if chan_pos[g] < len(order) else []
            for op, kind in options:
                lo = transfer_candidate(g, op, kind)
                if lo is None:
                    continue
                rank = 1 if kind is TransferKind.RELOAD else 2
                cand = (lo, rank, op, ("transfer", g, op, kind))
                if best is None or cand[:3] < best[:3]:
                    best = cand

        if best is None:
            blocked = [i for i in range(1, inst.num_stages + 1)
                       if stage_pos[i] < len(stage_orders[i])]
            raise OrderInfeasible(
                f"no event can start (stages blocked: {blocked})", blocked)

        time, _, _, action = best
        if action[0] == "compute":
            _, i, op = action
            _commit_compute(st, op, time)
            stage_pos[i] += 1
            stage_free[i] = time + inst.proc_time[op]
        else:
            _, g, op, kind = action
            _commit_transfer(st, op, kind, time)
            chan_free[g] = time + inst.offload_time
            if derived:
                pending[g].remove((op, kind))
            else:
                chan_pos[g] += 1

    return Schedule.build(st.compute_events, st.transfer_events, offloaded)
