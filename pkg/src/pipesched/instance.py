"""Problem instances for pipeline-parallel training schedules.

An instance describes P pipeline stages processing m micro-batches.  Each
micro-batch j passes through every stage i as three compute operations:
forward (F), backward-for-activations (B) and backward-for-weights (W).
Completing F allocates activation memory on its stage; B and W release it.
The activation produced by an F op may be offloaded to host memory and
reloaded before the matching B runs, at a transfer cost, to stay under the
stage's memory limit.

All times are integer quanta; all memory quantities are integer bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from math import ceil
from random import Random
from typing import Iterator, NamedTuple


class ParseError(Exception):
    """Raised when an instance file is malformed."""


class InvariantViolation(Exception):
    """Raised when instance data breaks a structural invariant."""


class OpKind(IntEnum):
    """Compute operation kind; ordering F < B < W is used for tie-breaking."""

    F = 0
    B = 1
    W = 2

    @property
    def letter(self) -> str:
        return self.name

    @staticmethod
    def from_letter(s: str) -> "OpKind":
        try:
            return OpKind[s]
        except KeyError:
            raise ParseError(f"unknown op kind {s!r}") from None


class OpId(NamedTuple):
    """Identity of one compute operation: (stage, microbatch, kind), 1-based."""

    stage: int
    microbatch: int
    kind: OpKind

    def __repr__(self) -> str:
        return f"({self.stage},{self.microbatch},{self.kind.letter})"


@dataclass(frozen=True)
class PipelineInstance:
    """A scheduling problem: stages, micro-batches, times, memory.

    proc_time / mem_delta / act_size are keyed by OpId covering every
    (stage, microbatch, kind) triple.  mem_limit is keyed by stage.
    topology_groups partitions stages into sets sharing one physical
    transfer channel (transfers within a group may not overlap).
    """

    num_stages: int
    num_microbatches: int
    proc_time: dict
    comm_time: int
    offload_time: int
    mem_delta: dict
    act_size: dict
    mem_limit: dict
    topology_groups: tuple
    post_validation: bool = False

    def __post_init__(self):
        self._check()

    # -- structural checks ------------------------------------------------

    def _check(self):
        P, m = self.num_stages, self.num_microbatches
        if P < 1 or m < 1:
            raise InvariantViolation(f"need positive stage/microbatch counts, got P={P} m={m}")
        if self.comm_time < 0 or self.offload_time < 0:
            raise InvariantViolation("comm_time and offload_time must be >= 0")
        for op in self.ops():
            if op not in self.proc_time:
                raise InvariantViolation(f"missing proc_time for {op}")
            if op not in self.mem_delta:
                raise InvariantViolation(f"missing mem_delta for {op}")
            if self.proc_time[op] <= 0:
                raise InvariantViolation(f"proc_time must be positive at {op}")
        for i in range(1, P + 1):
            for j in range(1, m + 1):
                dF = self.mem_delta[OpId(i, j, OpKind.F)]
                dB = self.mem_delta[OpId(i, j, OpKind.B)]
                dW = self.mem_delta[OpId(i, j, OpKind.W)]
                if dF + dB + dW != 0:
                    raise InvariantViolation(f"mem_delta sum nonzero for stage {i} microbatch {j}")
                if dF <= 0 or dB >= 0 or dW >= 0:
                    raise InvariantViolation(f"mem_delta signs wrong for stage {i} microbatch {j}")
                gamma = self.act_size.get(OpId(i, j, OpKind.F), 0)
                if gamma < 0 or gamma > dF:
                    raise InvariantViolation(f"act_size outside [0, mem_delta_F] at stage {i} microbatch {j}")
        for op, g in self.act_size.items():
            if g > 0 and op.kind is not OpKind.F:
                raise InvariantViolation(f"act_size positive on non-F op {op}")
        for i in range(1, P + 1):
            if self.mem_limit.get(i, 0) <= 0:
                raise InvariantViolation(f"mem_limit missing or non-positive for stage {i}")
        seen = set()
        for group in self.topology_groups:
            for s in group:
                if s in seen:
                    raise InvariantViolation(f"stage {s} in two topology groups")
                seen.add(s)
        if seen != set(range(1, P + 1)):
            raise InvariantViolation("topology_groups must partition the stage set")

    # -- iteration helpers -------------------------------------------------

    def ops(self) -> Iterator[OpId]:
        """All compute ops in (stage, microbatch, F<B<W) order."""
        for i in range(1, self.num_stages + 1):
            for j in range(1, self.num_microbatches + 1):
                for c in OpKind:
                    yield OpId(i, j, c)

    def stage_ops(self, stage: int) -> Iterator[OpId]:
        for j in range(1, self.num_microbatches + 1):
            for c in OpKind:
                yield OpId(stage, j, c)

    def offloadable_ops(self) -> Iterator[OpId]:
        """Ops whose activation can be offloaded (positive footprint)."""
        for op in self.ops():
            if self.act_size.get(op, 0) > 0:
                yield op

    def stage_channel(self, stage: int) -> int:
        """Index of the transfer channel serving this stage."""
        for idx, group in enumerate(self.topology_groups):
            if stage in group:
                return idx
        raise InvariantViolation(f"stage {stage} not in any topology group")

    def channel_stages(self, channel: int) -> tuple:
        return tuple(sorted(self.topology_groups[channel]))

    def horizon(self) -> int:
        """Upper bound on any sensible schedule's makespan."""
        total = sum(self.proc_time.values())
        n_off = sum(1 for _ in self.offloadable_ops())
        total += 2 * n_off * self.offload_time
        total += 2 * self.num_microbatches * self.num_stages * self.comm_time
        return total + self.comm_time

    def microbatch_symmetric(self) -> bool:
        """True when per-stage op data does not depend on the microbatch index."""
        for i in range(1, self.num_stages + 1):
            for c in OpKind:
                ref = OpId(i, 1, c)
                for j in range(2, self.num_microbatches + 1):
                    op = OpId(i, j, c)
                    if (self.proc_time[op] != self.proc_time[ref]
                            or self.mem_delta[op] != self.mem_delta[ref]
                            or self.act_size.get(op, 0) != self.act_size.get(ref, 0)):
                        return False
        return True


# -- serialization ---------------------------------------------------------

_KINDS = (OpKind.F, OpKind.B, OpKind.W)


def _scale_time(value, scale: float, where: str) -> int:
    x = value * scale
    r = round(x)
    if abs(x - r) > 1e-6:
        raise ParseError(f"time value {value!r} at {where} is not integral at scale {scale}")
    return int(r)


def _dense(d: dict, P: int, m: int, default=0) -> list:
    return [[[d.get(OpId(i, j, c), default) for c in _KINDS]
             for j in range(1, m + 1)] for i in range(1, P + 1)]


def instance_to_dict(inst: PipelineInstance) -> dict:
    P, m = inst.num_stages, inst.num_microbatches
    return {
        "num_stages": P,
        "num_microbatches": m,
        "time_scale": 1,
        "proc_times": _dense(inst.proc_time, P, m),
        "comm_time": inst.comm_time,
        "offload_time": inst.offload_time,
        "mem_deltas": _dense(inst.mem_delta, P, m),
        "act_sizes": _dense(inst.act_size, P, m),
        "mem_limits": [inst.mem_limit[i] for i in range(1, P + 1)],
        "topology_groups": [sorted(g) for g in inst.topology_groups],
        "post_validation": inst.post_validation,
    }


def instance_from_dict(data: dict) -> PipelineInstance:
    try:
        P = int(data["num_stages"])
        m = int(data["num_microbatches"])
        scale = data.get("time_scale", 1)
        proc = data["proc_times"]
        mem = data["mem_deltas"]
        act = data["act_sizes"]
        limits = data["mem_limits"]
        groups = data.get("topology_groups") or [[i] for i in range(1, P + 1)]
        comm = _scale_time(data["comm_time"], scale, "comm_time")
        off = _scale_time(data["offload_time"], scale, "offload_time")
        post = bool(data.get("post_validation", False))
    except KeyError as e:
        raise ParseError(f"missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise ParseError(str(e)) from None

    def cell(arr, i, j, c, name):
        try:
            return arr[i - 1][j - 1][c]
        except (IndexError, TypeError):
            raise ParseError(f"{name} missing entry for stage {i} microbatch {j}") from None

    proc_time, mem_delta, act_size = {}, {}, {}
    for i in range(1, P + 1):
        for j in range(1, m + 1):
            for c in _KINDS:
                op = OpId(i, j, c)
                proc_time[op] = _scale_time(cell(proc, i, j, c, "proc_times"), scale,
                                            f"proc_times[{i}][{j}][{c.letter}]")
                mem_delta[op] = int(cell(mem, i, j, c, "mem_deltas"))
                g = int(cell(act, i, j, c, "act_sizes"))
                if g:
                    act_size[op] = g
    if len(limits) < P:
        raise ParseError(f"mem_limits has {len(limits)} entries, need {P}")
    mem_limit = {i: int(limits[i - 1]) for i in range(1, P + 1)}
    topo = tuple(frozenset(int(s) for s in g) for g in groups)
    return PipelineInstance(
        num_stages=P, num_microbatches=m, proc_time=proc_time,
        comm_time=comm, offload_time=off, mem_delta=mem_delta,
        act_size=act_size, mem_limit=mem_limit, topology_groups=topo,
        post_validation=post)


def load_instance(path) -> PipelineInstance:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return instance_from_dict(data)


def save_instance(inst: PipelineInstance, path) -> None:
    with open(path, "w") as f:
        json.dump(instance_to_dict(inst), f, indent=2, sort_keys=True)
        f.write("\n")


# -- generators ------------------------------------------------------------

def _delta_split(act: int):
    """Split one activation into the (F, B, W) memory deltas."""
    dB = ceil(act / 2)
    dW = act - dB
    if dW == 0:
        raise InvariantViolation("act_size 1 leaves no memory for the W release")
    return act, -dB, -dW


def make_uniform_instance(P: int, m: int, tF: int, tB: int, tW: int,
                          tcomm: int, toff: int, act: int,
                          mem_limit_in_activations: int,
                          post_validation: bool = False,
                          topology_groups=None) -> PipelineInstance:
    """Instance with identical per-op values everywhere."""
    if min(P, m, tF, tB, tW, act, mem_limit_in_activations) < 1:
        raise InvariantViolation("counts, times and limit must be positive")
    dF, dB, dW = _delta_split(act)
    proc_time, mem_delta, act_size = {}, {}, {}
    for i in range(1, P + 1):
        for j in range(1, m + 1):
            proc_time[OpId(i, j, OpKind.F)] = tF
            proc_time[OpId(i, j, OpKind.B)] = tB
            proc_time[OpId(i, j, OpKind.W)] = tW
            mem_delta[OpId(i, j, OpKind.F)] = dF
            mem_delta[OpId(i, j, OpKind.B)] = dB
            mem_delta[OpId(i, j, OpKind.W)] = dW
            act_size[OpId(i, j, OpKind.F)] = act
    mem_limit = {i: mem_limit_in_activations * act for i in range(1, P + 1)}
    if topology_groups is None:
        topo = tuple(frozenset((i,)) for i in range(1, P + 1))
    else:
        topo = tuple(frozenset(g) for g in topology_groups)
    return PipelineInstance(
        num_stages=P, num_microbatches=m, proc_time=proc_time,
        comm_time=tcomm, offload_time=toff, mem_delta=mem_delta,
        act_size=act_size, mem_limit=mem_limit, topology_groups=topo,
        post_validation=post_validation)


def random_instance(seed: int, P: int, m: int, time_range=(1, 4),
                    mem_profile: str = "ample",
                    post_validation: bool = False) -> PipelineInstance:
    """Small random instance; deterministic in seed.

    Values are constant across micro-batches (per-stage only), matching the
    usual identical-micro-batch assumption.  mem_profile "ample" gives every
    stage room for all its activations at once; "tight" shrinks the limit so
    offloading can become necessary.
    """
    if P * m * 3 > 60:
        raise InvariantViolation("instance too large for exhaustive cross-checking")
    if mem_profile not in ("ample", "tight"):
        raise InvariantViolation(f"unknown mem_profile {mem_profile!r}")
    lo, hi = time_range
    rng = Random(seed)
    proc_time, mem_delta, act_size, mem_limit = {}, {}, {}, {}
    for i in range(1, P + 1):
        tF = rng.randint(lo, hi)
        tB = rng.randint(lo, hi)
        tW = rng.randint(lo, hi)
        act = rng.randint(2, 4)
        dF, dB, dW = _delta_split(act)
        for j in range(1, m + 1):
            proc_time[OpId(i, j, OpKind.F)] = tF
            proc_time[OpId(i, j, OpKind.B)] = tB
            proc_time[OpId(i, j, OpKind.W)] = tW
            mem_delta[OpId(i, j, OpKind.F)] = dF
            mem_delta[OpId(i, j, OpKind.B)] = dB
            mem_delta[OpId(i, j, OpKind.W)] = dW
            act_size[OpId(i, j, OpKind.F)] = act
        if mem_profile == "ample":
            mem_limit[i] = m * act
        else:
            mem_limit[i] = max(act, ceil(0.6 * m * act))
    comm = rng.randint(0, max(0, hi // 2))
    toff = rng.randint(1, hi)
    topo = tuple(frozenset((i,)) for i in range(1, P + 1))
    return PipelineInstance(
        num_stages=P, num_microbatches=m, proc_time=proc_time,
        comm_time=comm, offload_time=toff, mem_delta=mem_delta,
        act_size=act_size, mem_limit=mem_limit, topology_groups=topo,
        post_validation=post_validation)
