"""Schedule cache: persist solved orders, adapt them to similar instances.

Instances are fingerprinted by shape plus a vector of time/memory ratios
snapped to a grid, so uniformly rescaling every duration maps to the same
key.  Entries store structure only — per-stage compute order, offloaded
set, per-channel transfer order — and are re-timed for the new instance by
earliest-feasible list scheduling, which rejects orders the new memory
limits cannot replay.

The database is one JSON-lines file.  Writers serialize through an
advisory lock; readers never lock.  A torn trailing line (interrupted
write) is skipped with a warning instead of poisoning the file.
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
from dataclasses import dataclass

from .heuristics import AdaParams, best_feasible
from .instance import OpId, OpKind, PipelineInstance
from .listsched import OrderInfeasible, channel_order_of, run_order, stage_order_of
from .schedule import MemorySemantics, Schedule, TransferKind, makespan, validate

log = logging.getLogger(__name__)

GRID_STEP = 0.25
NO_GAMMA = -1.0      # ratio sentinel: instance has nothing to offload


class StorageError(Exception):
    """Cache file could not be read or written."""


class DegenerateInstance(Exception):
    """Instance has no forward time to normalize by."""


class ShapeMismatch(Exception):
    """Entry and instance disagree on (stages, micro-batches)."""


@dataclass(frozen=True)
class CacheKey:
    num_stages: int
    num_microbatches: int
    ratios: tuple          # (tB/tF, tW/tF, tcomm/tF, toff/tF, limit/gamma)
    post_validation: bool

    def to_dict(self):
        return {"P": self.num_stages, "m": self.num_microbatches,
                "ratios": list(self.ratios),
                "post_validation": self.post_validation}

    @classmethod
    def from_dict(cls, d):
        return cls(d["P"], d["m"], tuple(d["ratios"]), d["post_validation"])


@dataclass(frozen=True)
class CacheEntry:
    key: CacheKey
    stage_orders: tuple      # tuple per stage (1-based position) of OpId tuples
    offloaded: frozenset
    channel_orders: tuple    # tuple per channel of ((OpId, TransferKind), ...)
    recorded_makespan_ratio: float

    def to_dict(self):
        return {
            "key": self.key.to_dict(),
            "order": {
                "stages": [[[op.microbatch, op.kind.letter] for op in so]
                           for so in self.stage_orders],
                "offloaded": sorted([x.stage, x.microbatch] for x in self.offloaded),
                "channels": [[[op.stage, op.microbatch, op.kind.letter,
                               "O" if k is TransferKind.OFFLOAD else "R"]
                              for op, k in co] for co in self.channel_orders],
            },
            "makespan_ratio": self.recorded_makespan_ratio,
        }

    @classmethod
    def from_dict(cls, d):
        key = CacheKey.from_dict(d["key"])
        order = d["order"]
        stage_orders = tuple(
            tuple(OpId(i + 1, j, OpKind.from_letter(c)) for j, c in so)
            for i, so in enumerate(order["stages"]))
        offloaded = frozenset(OpId(i, j, OpKind.F) for i, j in order["offloaded"])
        channel_orders = tuple(
            tuple((OpId(i, j, OpKind.from_letter(c)),
                   TransferKind.OFFLOAD if t == "O" else TransferKind.RELOAD)
                  for i, j, c, t in co)
            for co in order["channels"])
        return cls(key, stage_orders, offloaded, channel_orders,
                   d["makespan_ratio"])


def _mean(vals):
    vals = list(vals)
    return sum(vals) / len(vals) if vals else 0.0


def _snap(value, step):
    return round(round(value / step) * step, 9)


def discretize(inst: PipelineInstance, grid_step: float = GRID_STEP) -> CacheKey:
    """Scale-free instance fingerprint on the given ratio grid."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    tf = _mean(inst.proc_time[op] for op in inst.ops() if op.kind is OpKind.F)
    if tf <= 0:
        raise DegenerateInstance("mean forward time is zero")
    tb = _mean(inst.proc_time[op] for op in inst.ops() if op.kind is OpKind.B)
    tw = _mean(inst.proc_time[op] for op in inst.ops() if op.kind is OpKind.W)
    gammas = [inst.act_size[x] for x in inst.offloadable_ops()]
    if gammas:
        mem_ratio = _snap(_mean(inst.mem_limit.values()) / _mean(gammas), grid_step)
    else:
        mem_ratio = NO_GAMMA
    ratios = (_snap(tb / tf, grid_step),
              _snap(tw / tf, grid_step),
              _snap(inst.comm_time / tf, grid_step),
              _snap(inst.offload_time / tf, grid_step),
              mem_ratio)
    return CacheKey(inst.num_stages, inst.num_microbatches, ratios,
                    inst.post_validation)


def entry_from_schedule(inst: PipelineInstance, s: Schedule,
                        grid_step: float = GRID_STEP) -> CacheEntry:
    """Strip times from a schedule into a storable entry."""
    key = discretize(inst, grid_step)
    stage_orders = tuple(stage_order_of(s, i)
                         for i in range(1, inst.num_stages + 1))
    channel_orders = tuple(channel_order_of(s, inst, g)
                           for g in range(len(inst.topology_groups)))
    tf = _mean(inst.proc_time[op] for op in inst.ops() if op.kind is OpKind.F)
    return CacheEntry(key, stage_orders, s.offloaded, channel_orders,
                      makespan(s, inst) / tf)


class CacheDb:
    """Handle on one JSON-lines cache file; safe to share between readers."""

    def __init__(self, path):
        self.path = os.fspath(path)

    def entries(self) -> list:
        try:
            with open(self.path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except FileNotFoundError:
            return []
        except OSError as e:
            raise StorageError(str(e)) from e
        out = []
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                out.append(CacheEntry.from_dict(json.loads(line)))
            except (ValueError, KeyError, IndexError) as e:
                if n == len(lines):
                    log.warning("%s:%d: skipping torn trailing record (%s)",
                                self.path, n, e)
                    continue
                raise StorageError(f"{self.path}:{n}: corrupt record: {e}") from e
        return out

    def append(self, entry: CacheEntry):
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fcntl.flock(fh, fcntl.LOCK_EX)
                try:
                    fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
                    fh.flush()
                finally:
                    fcntl.flock(fh, fcntl.LOCK_UN)
        except OSError as e:
            raise StorageError(str(e)) from e


def store(db: CacheDb, key: CacheKey, entry: CacheEntry):
    """Keep the best (smallest recorded ratio) entry per key."""
    if entry.key != key:
        raise ValueError("entry carries a different key")
    for have in db.entries():
        if have.key == key and have.recorded_makespan_ratio <= entry.recorded_makespan_ratio:
            return
    db.append(entry)


def _distance(a: CacheKey, b: CacheKey) -> float:
    worst = 0.0
    for x, y in zip(a.ratios, b.ratios):
        if (x == NO_GAMMA) != (y == NO_GAMMA):
            return float("inf")
        worst = max(worst, abs(x - y))
    return worst


def lookup(db: CacheDb, key: CacheKey,
           grid_step: float = GRID_STEP) -> CacheEntry | None:
    """Exact hit, else nearest same-shape entry within one grid step."""
    best = None      # (distance, ratio, entry)
    for e in db.entries():
        if (e.key.num_stages, e.key.num_microbatches, e.key.post_validation) != \
                (key.num_stages, key.num_microbatches, key.post_validation):
            continue
        d = _distance(e.key, key)
        if d > grid_step + 1e-9:
            continue
        rank = (d, e.recorded_makespan_ratio)
        if best is None or rank < best[:2]:
            best = (d, e.recorded_makespan_ratio, e)
    return best[2] if best else None


def adapt(entry: CacheEntry, inst: PipelineInstance) -> Schedule | None:
    """Re-time a cached order for this instance, or nothing if it cannot run."""
    if (entry.key.num_stages, entry.key.num_microbatches) != \
            (inst.num_stages, inst.num_microbatches):
        raise ShapeMismatch(
            f"entry is {entry.key.num_stages}x{entry.key.num_microbatches}, "
            f"instance is {inst.num_stages}x{inst.num_microbatches}")
    orders = {i + 1: entry.stage_orders[i] for i in range(len(entry.stage_orders))}
    channels = {g: entry.channel_orders[g]
                for g in range(len(entry.channel_orders))}
    try:
        s = run_order(inst, orders, entry.offloaded, channels)
    except OrderInfeasible:
        return None
    if not validate(s, inst, MemorySemantics.STRICT).ok:
        return None
    return s


def warm_start_from_cache(db: CacheDb, inst: PipelineInstance,
                          params: AdaParams = AdaParams(),
                          grid_step: float = GRID_STEP):
    """Best schedule among the adapted cache hit and the heuristics.

    Returns (schedule, source) where source is "cache" or the winning
    generator's name.  The cache wins ties: reusing a solved order is the
    point of keeping it.
    """
    adapted = None
    hit = lookup(db, discretize(inst, grid_step), grid_step)
    if hit is not None:
        adapted = adapt(hit, inst)
    fallback, name = best_feasible(inst, params)
    if adapted is not None and makespan(adapted, inst) <= makespan(fallback, inst):
        return adapted, "cache"
    return fallback, name
