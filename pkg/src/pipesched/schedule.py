"""Concrete timed schedules: makespan, memory replay, validation.

A Schedule assigns start/end times to every compute op of an instance plus
offload/reload transfer events for a chosen subset of activations.  The
validator re-checks every scheduling rule directly on event times, so it is
independent of how the schedule was produced.

Memory is replayed under one of two semantics:

* Strict      — an offload frees activation bytes when the transfer ENDS and
                a reload occupies them from its START.  Physically safe.
* MilpRelaxed — the offload frees bytes already at its START (the accounting
                the optimization model uses).  Anything Strict-feasible is
                also MilpRelaxed-feasible, never the reverse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .instance import OpId, OpKind, ParseError, PipelineInstance


class IncompleteSchedule(Exception):
    """Raised when a schedule is structurally unusable (missing/duplicate events)."""


class NegativeUsage(Exception):
    """Raised when a memory replay drops below zero (inconsistent accounting)."""


class InvalidSchedule(Exception):
    """Raised by renderers when given a schedule that fails validation."""


class MemorySemantics(Enum):
    STRICT = "strict"
    MILP_RELAXED = "milp"

    @staticmethod
    def parse(s: str) -> "MemorySemantics":
        for sem in MemorySemantics:
            if sem.value == s:
                return sem
        raise ParseError(f"unknown memory semantics {s!r}")


class TransferKind(Enum):
    OFFLOAD = "offload"
    RELOAD = "reload"


@dataclass(frozen=True)
class ComputeEvent:
    op: OpId
    start: int
    end: int


@dataclass(frozen=True)
class TransferEvent:
    op: OpId          # the producing F op whose activation moves
    kind: TransferKind
    start: int
    end: int


@dataclass(frozen=True)
class Schedule:
    compute: tuple
    transfers: tuple
    offloaded: frozenset

    @staticmethod
    def build(compute: Iterable, transfers: Iterable = (), offloaded: Iterable = ()) -> "Schedule":
        return Schedule(tuple(compute), tuple(transfers), frozenset(offloaded))

    def compute_by_op(self) -> dict:
        return {ev.op: ev for ev in self.compute}

    def transfer_pairs(self) -> dict:
        """op -> (offload event, reload event) for offloaded ops."""
        pairs = {}
        for ev in self.transfers:
            slot = pairs.setdefault(ev.op, [None, None])
            slot[0 if ev.kind is TransferKind.OFFLOAD else 1] = ev
        return {op: (o, r) for op, (o, r) in pairs.items()}


@dataclass(frozen=True)
class Violation:
    constraint: str
    ops: tuple
    measured: int
    required: int
    detail: str = ""

    def __str__(self):
        locus = ",".join(repr(o) for o in self.ops)
        msg = f"{self.constraint} at {locus}: measured {self.measured}, required {self.required}"
        return msg + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


@dataclass(frozen=True)
class MemoryTrace:
    breakpoints: dict   # stage -> list of (time, usage) with usage constant after time
    peak: dict          # stage -> max usage


# -- structure -------------------------------------------------------------

def check_structure(s: Schedule, inst: PipelineInstance) -> None:
    """Raise IncompleteSchedule unless s has exactly the events inst requires."""
    seen = set()
    for ev in s.compute:
        if ev.op in seen:
            raise IncompleteSchedule(f"duplicate compute event for {ev.op}")
        seen.add(ev.op)
        if ev.op not in inst.proc_time:
            raise IncompleteSchedule(f"compute event for unknown op {ev.op}")
        if ev.start < 0 or ev.end - ev.start != inst.proc_time[ev.op]:
            raise IncompleteSchedule(
                f"compute event for {ev.op} spans [{ev.start},{ev.end}), "
                f"expected duration {inst.proc_time[ev.op]}")
    missing = [op for op in inst.ops() if op not in seen]
    if missing:
        raise IncompleteSchedule(f"missing compute events: {missing[:4]}"
                                 + ("..." if len(missing) > 4 else ""))
    pairs = s.transfer_pairs()
    for op in s.offloaded:
        if inst.act_size.get(op, 0) <= 0:
            raise IncompleteSchedule(f"{op} is not offloadable")
        o, r = pairs.get(op, (None, None))
        if o is None or r is None:
            raise IncompleteSchedule(f"offloaded op {op} needs one offload and one reload")
    for op, (o, r) in pairs.items():
        if op not in s.offloaded:
            raise IncompleteSchedule(f"transfer events for non-offloaded op {op}")
        for ev in (o, r):
            if ev.start < 0 or ev.end - ev.start != inst.offload_time:
                raise IncompleteSchedule(
                    f"transfer for {op} spans [{ev.start},{ev.end}), "
                    f"expected duration {inst.offload_time}")
    counts = {}
    for ev in s.transfers:
        counts[(ev.op, ev.kind)] = counts.get((ev.op, ev.kind), 0) + 1
    for key, n in counts.items():
        if n > 1:
            raise IncompleteSchedule(f"duplicate {key[1].value} for {key[0]}")


# -- makespan ----------------------------------------------------------------

def makespan(s: Schedule, inst: PipelineInstance) -> int:
    """Schedule length in quanta; transfers never count.

    post_validation instances measure the worst per-stage span (first F start
    to last W end on that stage); otherwise the global compute span.
    """
    check_structure(s, inst)
    if inst.post_validation:
        worst = 0
        for i in range(1, inst.num_stages + 1):
            evs = [ev for ev in s.compute if ev.op.stage == i]
            first_f = min(ev.start for ev in evs if ev.op.kind is OpKind.F)
            last_w = max(ev.end for ev in evs if ev.op.kind is OpKind.W)
            worst = max(worst, last_w - first_f)
        return worst
    return max(ev.end for ev in s.compute) - min(ev.start for ev in s.compute)


# -- memory ------------------------------------------------------------------

def _stage_deltas(s: Schedule, inst: PipelineInstance, stage: int,
                  semantics: MemorySemantics):
    """(time, delta) points for one stage's usage function."""
    out = []
    for ev in s.compute:
        if ev.op.stage == stage:
            out.append((ev.end, inst.mem_delta[ev.op]))
    for ev in s.transfers:
        if ev.op.stage != stage:
            continue
        gamma = inst.act_size.get(ev.op, 0)
        if ev.kind is TransferKind.OFFLOAD:
            when = ev.start if semantics is MemorySemantics.MILP_RELAXED else ev.end
            out.append((when, -gamma))
        else:
            out.append((ev.start, gamma))
    return out


def _replay(points):
    """Merge same-time deltas, prefix-sum.  Returns (breakpoints, peak, minimum)."""
    merged = {}
    for t, d in points:
        merged[t] = merged.get(t, 0) + d
    usage, peak, low = 0, 0, 0
    bps = [(0, 0)]
    for t in sorted(merged):
        if merged[t] == 0:
            continue
        usage += merged[t]
        peak = max(peak, usage)
        low = min(low, usage)
        if bps and bps[-1][0] == t:
            bps[-1] = (t, usage)
        else:
            bps.append((t, usage))
    return bps, peak, low


def memory_trace(s: Schedule, inst: PipelineInstance,
                 semantics: MemorySemantics = MemorySemantics.STRICT) -> MemoryTrace:
    check_structure(s, inst)
    breakpoints, peaks = {}, {}
    for i in range(1, inst.num_stages + 1):
        bps, peak, low = _replay(_stage_deltas(s, inst, i, semantics))
        if low < 0:
            raise NegativeUsage(f"stage {i} usage reaches {low}")
        breakpoints[i] = bps
        peaks[i] = peak
    return MemoryTrace(breakpoints=breakpoints, peak=peaks)


# -- validation ----------------------------------------------------------------

def _overlaps(a_start, a_end, b_start, b_end) -> bool:
    return a_start < b_end and b_start < a_end


def _check_exclusive(events, constraint, out):
    """events: list of (start, end, opid).  Adjacent-in-time overlap scan."""
    evs = sorted(events)
    for k in range(1, len(evs)):
        prev, cur = evs[k - 1], evs[k]
        if _overlaps(prev[0], prev[1], cur[0], cur[1]):
            out.append(Violation(constraint, (prev[2], cur[2]),
                                 measured=cur[0], required=prev[1],
                                 detail="events overlap"))


def validate(s: Schedule, inst: PipelineInstance,
             semantics: MemorySemantics = MemorySemantics.STRICT) -> ValidationReport:
    """Re-check every scheduling rule on concrete event times."""
    check_structure(s, inst)
    by_op = s.compute_by_op()
    pairs = s.transfer_pairs()
    out = []

    for j in range(1, inst.num_microbatches + 1):
        # forward chain across stages
        for i in range(2, inst.num_stages + 1):
            up = by_op[OpId(i - 1, j, OpKind.F)]
            ev = by_op[OpId(i, j, OpKind.F)]
            need = up.end + inst.comm_time
            if ev.start < need:
                out.append(Violation("DEP_F", (up.op, ev.op), ev.start, need))
        # backward chain back down
        for i in range(1, inst.num_stages):
            dn = by_op[OpId(i + 1, j, OpKind.B)]
            ev = by_op[OpId(i, j, OpKind.B)]
            need = dn.end + inst.comm_time
            if ev.start < need:
                out.append(Violation("DEP_B", (dn.op, ev.op), ev.start, need))
        for i in range(1, inst.num_stages + 1):
            f = by_op[OpId(i, j, OpKind.F)]
            b = by_op[OpId(i, j, OpKind.B)]
            w = by_op[OpId(i, j, OpKind.W)]
            if b.start < f.end:
                out.append(Violation("FBW_ORDER", (f.op, b.op), b.start, f.end))
            if w.start < b.end:
                out.append(Violation("FBW_ORDER", (b.op, w.op), w.start, b.end))

    for i in range(1, inst.num_stages + 1):
        _check_exclusive([(ev.start, ev.end, ev.op)
                          for ev in s.compute if ev.op.stage == i],
                         "EXCL_COMPUTE", out)
        _check_exclusive([(ev.start, ev.end, ev.op)
                          for ev in s.transfers if ev.op.stage == i],
                         "EXCL_TRANSFER", out)
    for group in inst.topology_groups:
        if len(group) < 2:
            continue
        evs = sorted((ev.start, ev.end, ev.op) for ev in s.transfers
                     if ev.op.stage in group)
        for k in range(1, len(evs)):
            prev, cur = evs[k - 1], evs[k]
            if prev[2].stage != cur[2].stage and _overlaps(prev[0], prev[1], cur[0], cur[1]):
                out.append(Violation("TOPOLOGY", (prev[2], cur[2]),
                                     measured=cur[0], required=prev[1],
                                     detail="shared channel"))

    for op in sorted(s.offloaded):
        o, r = pairs[op]
        f = by_op[op]
        b = by_op[OpId(op.stage, op.microbatch, OpKind.B)]
        if o.start < f.end:
            out.append(Violation("OFFLOAD_AFTER_F", (op,), o.start, f.end))
        if r.end > b.start:
            out.append(Violation("RELOAD_BEFORE_B", (op,), r.end, b.start))
        if r.start < o.end:
            out.append(Violation("OFFLOAD_BEFORE_RELOAD", (op,), r.start, o.end))

    for i in range(1, inst.num_stages + 1):
        _, peak, _ = _replay(_stage_deltas(s, inst, i, semantics))
        # negative replay only happens alongside the ordering violations above
        if peak > inst.mem_limit[i]:
            out.append(Violation("MEM_LIMIT", (OpId(i, 1, OpKind.F),),
                                 peak, inst.mem_limit[i],
                                 detail=f"stage {i} under {semantics.value}"))

    return ValidationReport(ok=not out, violations=tuple(out))


# -- serialization -------------------------------------------------------------

def schedule_to_dict(s: Schedule) -> dict:
    return {
        "compute": [{"stage": ev.op.stage, "microbatch": ev.op.microbatch,
                     "kind": ev.op.kind.letter, "start": ev.start, "end": ev.end}
                    for ev in sorted(s.compute, key=lambda e: (e.start, e.op))],
        "transfers": [{"stage": ev.op.stage, "microbatch": ev.op.microbatch,
                       "kind": ev.kind.value, "start": ev.start, "end": ev.end}
                      for ev in sorted(s.transfers, key=lambda e: (e.start, e.op, e.kind.value))],
        "offloaded": [{"stage": op.stage, "microbatch": op.microbatch}
                      for op in sorted(s.offloaded)],
    }


def schedule_from_dict(data: dict) -> Schedule:
    try:
        compute = tuple(
            ComputeEvent(OpId(int(e["stage"]), int(e["microbatch"]),
                              OpKind.from_letter(e["kind"])),
                         int(e["start"]), int(e["end"]))
            for e in data["compute"])
        transfers = tuple(
            TransferEvent(OpId(int(e["stage"]), int(e["microbatch"]), OpKind.F),
                          TransferKind(e["kind"]), int(e["start"]), int(e["end"]))
            for e in data.get("transfers", ()))
        offloaded = frozenset(OpId(int(e["stage"]), int(e["microbatch"]), OpKind.F)
                              for e in data.get("offloaded", ()))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"bad schedule payload: {e}") from None
    return Schedule(compute, transfers, offloaded)


def load_schedule(path) -> Schedule:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return schedule_from_dict(data)


def save_schedule(s: Schedule, path) -> None:
    with open(path, "w") as f:
        json.dump(schedule_to_dict(s), f, indent=2)
        f.write("\n")
