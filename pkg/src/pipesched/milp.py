"""Mixed-integer linear model of the scheduling problem.

The model tracks compute end times (E), offload/reload start times (O, R),
an offload decision per activation (Wv), and ordering binaries: P for
same-stage compute order, K/L/H for transfer-channel exclusivity, M/N for
whether an offload/reload lands before a given compute ends.  Memory rows
charge each stage's limit at every compute end under relaxed accounting
(an offload frees its bytes at transfer start), which a schedule valid
under strict accounting always satisfies too.

Usage between compute ends is not modelled, so a reload landing mid-op can
spike above the limit without the model noticing; decoded solutions should
be re-validated when that matters.

Orderings that are already determined — the F/B/W chain within a
micro-batch, same-kind pairs under fix_microbatch_order, and (with
eliminate_transitive) anything forced through the closure of those — are
folded in as constants instead of materialized binaries.

All data is integral and every row keeps integer coefficients, so residual
checks against candidate solutions are exact up to float printing noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

from .instance import OpId, OpKind, PipelineInstance
from .schedule import Schedule, TransferKind

F, B, W = OpKind.F, OpKind.B, OpKind.W

CUT_BUDGET = 500          # triangle-cut rows build_model adds when enabled


class UnknownVariable(Exception):
    """Solution file names a variable the model does not have."""


class NonIntegralBinary(Exception):
    """A binary variable's value is not within tolerance of 0 or 1."""


class InfeasibleWarmStart(Exception):
    """The schedule cannot be expressed as a feasible model assignment."""


class ConstraintResidual(Exception):
    """A candidate assignment violates a model row or bound."""

    def __init__(self, name, amount, detail=""):
        self.name, self.amount = name, amount
        super().__init__(f"{name} violated by {amount:.3g}"
                         + (f" ({detail})" if detail else ""))


class VarId(NamedTuple):
    family: str          # E O R C S P K L H M N Wv
    key: tuple

    @property
    def name(self) -> str:
        prefix = "B_" if self.family in ("P", "K", "L", "H", "M", "N", "Wv") else "F_"
        if not self.key:
            return f"{prefix}{self.family}"
        flat = []
        for part in self.key:
            if isinstance(part, tuple):
                flat.append("_".join(_frag(q) for q in part))
            else:
                flat.append(_frag(part))
        sep = "__" if len(self.key) == 2 and isinstance(self.key[0], tuple) else "_"
        return f"{prefix}{self.family}_{sep.join(flat)}"


def _frag(q):
    if isinstance(q, OpKind):
        return q.letter
    return str(q)


def _opkey(op: OpId):
    return (op.stage, op.microbatch, op.kind)


@dataclass(frozen=True)
class LinConstraint:
    name: str
    coefs: dict            # var name -> int coefficient
    sense: str             # ">=", "<=", "="
    rhs: int

    def residual(self, values) -> float:
        """By how much the row is violated (positive = broken)."""
        lhs = sum(c * values.get(v, 0.0) for v, c in self.coefs.items())
        if self.sense == ">=":
            return self.rhs - lhs
        if self.sense == "<=":
            return lhs - self.rhs
        return abs(lhs - self.rhs)


@dataclass(frozen=True)
class ModelOptions:
    fix_microbatch_order: bool = True
    eliminate_transitive: bool = True
    triangle_cuts: bool = True
    post_validation: bool = False
    topology_enabled: bool = True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown option keys: {sorted(extra)}")
        return cls(**d)


def default_options(inst: PipelineInstance) -> ModelOptions:
    """Options matching the instance: fixed micro-batch order only when the
    micro-batches are interchangeable, objective per the instance's mode."""
    return ModelOptions(post_validation=inst.post_validation,
                        fix_microbatch_order=inst.microbatch_symmetric())


@dataclass
class _Var:
    vid: VarId
    binary: bool
    lb: float
    ub: float


@dataclass
class MilpModel:
    options: ModelOptions
    big_m: int
    vars: dict = field(default_factory=dict)          # name -> _Var
    constraints: list = field(default_factory=list)   # LinConstraint
    objective: str = "F_C"

    def add_var(self, vid: VarId, binary=False, lb=0, ub=None):
        name = vid.name
        if name in self.vars:
            raise ValueError(f"duplicate variable {name}")
        if binary:
            lb, ub = 0, 1
        elif ub is None:
            ub = self.big_m
        self.vars[name] = _Var(vid, binary, lb, ub)
        return name

    def add(self, name, coefs, sense, rhs):
        self.constraints.append(LinConstraint(name, dict(coefs), sense, rhs))

    def residuals(self, values, tol=1e-6):
        """All violated rows and bounds, worst first."""
        out = []
        for name, var in self.vars.items():
            v = values.get(name, 0.0)
            if v < var.lb - tol:
                out.append((f"lb({name})", var.lb - v))
            if v > var.ub + tol:
                out.append((f"ub({name})", v - var.ub))
        for c in self.constraints:
            r = c.residual(values)
            if r > tol:
                out.append((c.name, r))
        out.sort(key=lambda t: -t[1])
        return out


# -- model construction ----------------------------------------------------------


def _pair_map(inst, opts):
    """Ordering info per sorted same-stage pair: var marker or constant 1.

    Returns {(x, y): None | 1} where None means "materialize a binary".
    A constant 1 represents x strictly before y: the F/B/W chain inside a
    micro-batch always orders the pair; fix_microbatch_order orders
    same-kind pairs; eliminate_transitive folds in every ordering forced
    by chaining those two kinds of edge together.
    """
    out = {}
    for i in range(1, inst.num_stages + 1):
        sops = sorted(inst.stage_ops(i))
        edges = {op: set() for op in sops}
        for op in sops:
            if op.kind is not W:
                edges[op].add(OpId(op.stage, op.microbatch, OpKind(op.kind + 1)))
            if opts.fix_microbatch_order:
                later = OpId(op.stage, op.microbatch + 1, op.kind)
                if later in edges:
                    edges[op].add(later)
        reach = {}
        for op in sops:
            seen, stack = set(), [op]
            while stack:
                for nb in edges[stack.pop()]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            reach[op] = seen
        for a in range(len(sops)):
            for b in range(a + 1, len(sops)):
                x, y = sops[a], sops[b]
                if x.microbatch == y.microbatch:
                    out[(x, y)] = 1                   # F/B/W chain
                elif x.kind == y.kind and opts.fix_microbatch_order:
                    out[(x, y)] = 1                   # fixed same-kind order
                elif y in reach[x] and opts.eliminate_transitive:
                    out[(x, y)] = 1                   # determined transitively
                else:
                    out[(x, y)] = None
    return out


def _lit(pvars, x, y):
    """P-literal [x before y] as (coefs, const): P_xy, 1 - P_yx, or a constant."""
    if (x, y) in pvars:
        v = pvars[(x, y)]
        return ({v: 1}, 0) if isinstance(v, str) else ({}, v)
    v = pvars[(y, x)]
    return ({v: -1}, 1) if isinstance(v, str) else ({}, 1 - v)


def build_model(inst: PipelineInstance, opts: ModelOptions | None = None) -> MilpModel:
    opts = opts or default_options(inst)
    big_m = inst.horizon()
    md = MilpModel(options=opts, big_m=big_m)
    P_stages = inst.num_stages
    tp, tc, to = inst.proc_time, inst.comm_time, inst.offload_time
    gam = inst.act_size
    Ename, Oname, Rname, Wname = {}, {}, {}, {}

    for op in sorted(inst.ops()):
        Ename[op] = md.add_var(VarId("E", _opkey(op)), lb=tp[op])
    offl = {i: sorted(x for x in inst.offloadable_ops() if x.stage == i)
            for i in range(1, P_stages + 1)}
    all_offl = [x for i in sorted(offl) for x in offl[i]]
    for x in all_offl:
        Oname[x] = md.add_var(VarId("O", (x.stage, x.microbatch)))
        Rname[x] = md.add_var(VarId("R", (x.stage, x.microbatch)))
        Wname[x] = md.add_var(VarId("Wv", (x.stage, x.microbatch)), binary=True)
    cname = md.add_var(VarId("C", ()))

    # dependency and intra-micro-batch chains
    for op in sorted(inst.ops()):
        i, j, c = op
        if c is F and i > 1:
            up = OpId(i - 1, j, F)
            md.add(f"dep_f_{i}_{j}", {Ename[op]: 1, Ename[up]: -1}, ">=", tc + tp[op])
        if c is B:
            own = OpId(i, j, F)
            md.add(f"chain_fb_{i}_{j}", {Ename[op]: 1, Ename[own]: -1}, ">=", tp[op])
            if i < P_stages:
                dn = OpId(i + 1, j, B)
                md.add(f"dep_b_{i}_{j}", {Ename[op]: 1, Ename[dn]: -1}, ">=", tc + tp[op])
        if c is W:
            own = OpId(i, j, B)
            md.add(f"chain_bw_{i}_{j}", {Ename[op]: 1, Ename[own]: -1}, ">=", tp[op])

    # same-stage compute exclusivity; P_xy == [x runs before y]
    pairs = _pair_map(inst, opts)
    pvars = {}
    for (x, y), const in sorted(pairs.items()):
        i = x.stage
        nm = (f"{i}_{x.microbatch}{x.kind.letter}"
              f"_{y.microbatch}{y.kind.letter}")
        if const is None:
            pv = md.add_var(VarId("P", (_opkey(x), _opkey(y))), binary=True)
            pvars[(x, y)] = pv
            md.add(f"excl_c_{nm}_a",
                   {Ename[y]: 1, Ename[x]: -1, pv: -big_m}, ">=", tp[y] - big_m)
            md.add(f"excl_c_{nm}_b",
                   {Ename[x]: 1, Ename[y]: -1, pv: big_m}, ">=", tp[x])
        else:
            pvars[(x, y)] = const
            # chain rows already order same-micro-batch pairs; non-adjacent
            # pairs are implied by the rows along the forcing path
            if x.kind == y.kind and y.microbatch == x.microbatch + 1:
                md.add(f"ord_c_{nm}",
                       {Ename[y]: 1, Ename[x]: -1}, ">=", tp[y])

    # memory at every compute end, relaxed accounting
    for i in range(1, P_stages + 1):
        sops = sorted(inst.stage_ops(i))
        mvars, nvars = {}, {}
        for x in offl[i]:
            for y in sops:
                mv = md.add_var(VarId("M", ((x.stage, x.microbatch), _opkey(y))),
                                binary=True)
                nv = md.add_var(VarId("N", ((x.stage, x.microbatch), _opkey(y))),
                                binary=True)
                mvars[(x, y)], nvars[(x, y)] = mv, nv
                tag = f"{i}_{x.microbatch}_{y.microbatch}{y.kind.letter}"
                md.add(f"gate_m_{tag}", {mv: 1, Wname[x]: -1}, "<=", 0)
                md.add(f"gate_n_{tag}", {nv: 1, Wname[x]: -1}, "<=", 0)
                # M=1 -> offload of x starts no later than y ends
                md.add(f"sync_off_{tag}",
                       {Ename[y]: 1, Oname[x]: -1, mv: -big_m, Wname[x]: -big_m},
                       ">=", -2 * big_m)
                # N=1 -> reload of x starts no later than y ends; N=0 -> after
                md.add(f"sync_rel_{tag}",
                       {Ename[y]: 1, Rname[x]: -1, nv: -big_m, Wname[x]: -big_m},
                       ">=", -2 * big_m)
                md.add(f"sync_rel_strict_{tag}",
                       {Rname[x]: 1, Ename[y]: -1, nv: big_m, Wname[x]: -big_m},
                       ">=", 1 - big_m)
        for y in sops:
            coefs = {}
            rhs = inst.mem_limit[i] - inst.mem_delta[y]
            for x in sops:
                if x == y:
                    continue
                lit, const = _lit(pvars, x, y)
                d = inst.mem_delta[x]
                for v, cf in lit.items():
                    coefs[v] = coefs.get(v, 0) + d * cf
                rhs -= d * const
            for x in offl[i]:
                coefs[mvars[(x, y)]] = coefs.get(mvars[(x, y)], 0) - gam[x]
                coefs[nvars[(x, y)]] = coefs.get(nvars[(x, y)], 0) + gam[x]
            md.add(f"mem_{i}_{y.microbatch}{y.kind.letter}", coefs, "<=", rhs)

    # offload placement per activation
    for i in range(1, P_stages + 1):
        for x in offl[i]:
            j = x.microbatch
            wv = Wname[x]
            md.add(f"off_after_f_{i}_{j}",
                   {Oname[x]: 1, Ename[x]: -1, wv: -big_m}, ">=", -big_m)
            md.add(f"rel_after_off_{i}_{j}",
                   {Rname[x]: 1, Oname[x]: -1, wv: -big_m}, ">=", to - big_m)
            bop = OpId(i, j, B)
            md.add(f"rel_before_b_{i}_{j}",
                   {Ename[bop]: 1, Rname[x]: -1, wv: -big_m},
                   ">=", tp[bop] + to - big_m)

    # transfer-channel exclusivity, channel-wide
    for g, group in enumerate(inst.topology_groups):
        chan_ops = [x for i in sorted(group) for x in offl[i]]
        for a in range(len(chan_ops)):
            for b in range(a + 1, len(chan_ops)):
                x, y = chan_ops[a], chan_ops[b]
                cross = x.stage != y.stage
                if cross and not opts.topology_enabled:
                    continue
                tag = (f"{'topo' if cross else 'chan'}_{g}"
                       f"_{x.stage}_{x.microbatch}_{y.stage}_{y.microbatch}")
                xk, yk = (x.stage, x.microbatch), (y.stage, y.microbatch)
                kv = md.add_var(VarId("K", (xk, yk)), binary=True)
                lv = md.add_var(VarId("L", (xk, yk)), binary=True)
                h_xy = md.add_var(VarId("H", (xk, yk)), binary=True)
                h_yx = md.add_var(VarId("H", (yk, xk)), binary=True)
                gates = {Wname[x]: -big_m, Wname[y]: -big_m}
                md.add(f"x_oo_{tag}_a",
                       {Oname[y]: 1, Oname[x]: -1, kv: -big_m, **gates},
                       ">=", to - 3 * big_m)
                md.add(f"x_oo_{tag}_b",
                       {Oname[x]: 1, Oname[y]: -1, kv: big_m, **gates},
                       ">=", to - 2 * big_m)
                md.add(f"x_rr_{tag}_a",
                       {Rname[y]: 1, Rname[x]: -1, lv: -big_m, **gates},
                       ">=", to - 3 * big_m)
                md.add(f"x_rr_{tag}_b",
                       {Rname[x]: 1, Rname[y]: -1, lv: big_m, **gates},
                       ">=", to - 2 * big_m)
                md.add(f"x_or_{tag}_a",
                       {Rname[y]: 1, Oname[x]: -1, h_xy: -big_m, **gates},
                       ">=", to - 3 * big_m)
                md.add(f"x_or_{tag}_b",
                       {Oname[x]: 1, Rname[y]: -1, h_xy: big_m, **gates},
                       ">=", to - 2 * big_m)
                md.add(f"x_ro_{tag}_a",
                       {Rname[x]: 1, Oname[y]: -1, h_yx: -big_m, **gates},
                       ">=", to - 3 * big_m)
                md.add(f"x_ro_{tag}_b",
                       {Oname[y]: 1, Rname[x]: -1, h_yx: big_m, **gates},
                       ">=", to - 2 * big_m)

    # objective linking
    if opts.post_validation:
        for i in range(1, P_stages + 1):
            wops = [op for op in sorted(inst.stage_ops(i)) if op.kind is W]
            fops = [op for op in sorted(inst.stage_ops(i)) if op.kind is F]
            if opts.fix_microbatch_order:
                anchor = OpId(i, 1, F)
                for w in wops:
                    md.add(f"span_{i}_{w.microbatch}",
                           {cname: 1, Ename[w]: -1, Ename[anchor]: 1},
                           ">=", tp[anchor])
            else:
                sname = md.add_var(VarId("S", (i,)))
                for f_ in fops:
                    md.add(f"start_{i}_{f_.microbatch}",
                           {Ename[f_]: 1, sname: -1}, ">=", tp[f_])
                for w in wops:
                    md.add(f"span_{i}_{w.microbatch}",
                           {cname: 1, Ename[w]: -1, sname: 1}, ">=", 0)
    else:
        wops = [op for op in sorted(inst.ops()) if op.kind is W]
        if opts.fix_microbatch_order:
            anchor = OpId(1, 1, F)
            for w in wops:
                md.add(f"span_{w.stage}_{w.microbatch}",
                       {cname: 1, Ename[w]: -1, Ename[anchor]: 1},
                       ">=", tp[anchor])
        else:
            sname = md.add_var(VarId("S", ("glob",)))
            for f_ in [op for op in sorted(inst.ops()) if op.kind is F]:
                md.add(f"start_{f_.stage}_{f_.microbatch}",
                       {Ename[f_]: 1, sname: -1}, ">=", tp[f_])
            for w in wops:
                md.add(f"span_{w.stage}_{w.microbatch}",
                       {cname: 1, Ename[w]: -1, sname: 1}, ">=", 0)

    if opts.triangle_cuts:
        gen_triangle_cuts(md, CUT_BUDGET)
    return md


def gen_triangle_cuts(model: MilpModel, budget: int) -> int:
    """Add transitivity cuts over free same-stage order binaries.

    For ops a<b<c whose three pairwise variables are all materialized and
    free, a-before-b together with b-before-c implies a-before-c:
    P_ac >= P_ab + P_bc - 1.  Every 0/1 point consistent with a total order
    satisfies the row, so cuts never change the optimum.  Triples are
    visited in lexicographic order and at most `budget` rows are added.
    Returns the number of rows added.
    """
    free, by_stage = {}, {}
    for name, var in model.vars.items():
        if var.vid.family == "P" and var.lb != var.ub:
            kx, ky = var.vid.key
            x, y = OpId(*kx), OpId(*ky)
            free[(x, y)] = name
            by_stage.setdefault(x.stage, set()).update((x, y))
    count = 0
    for i in sorted(by_stage):
        sops = sorted(by_stage[i])
        for ai in range(len(sops)):
            for bi in range(ai + 1, len(sops)):
                if (sops[ai], sops[bi]) not in free:
                    continue
                for ci in range(bi + 1, len(sops)):
                    a, b, c = sops[ai], sops[bi], sops[ci]
                    if (b, c) not in free or (a, c) not in free:
                        continue
                    if count >= budget:
                        return count
                    tag = (f"tricut_{i}_{a.microbatch}{a.kind.letter}"
                           f"_{b.microbatch}{b.kind.letter}"
                           f"_{c.microbatch}{c.kind.letter}")
                    model.add(tag, {free[(a, c)]: 1, free[(a, b)]: -1,
                                    free[(b, c)]: -1}, ">=", -1)
                    count += 1
    return count


# -- LP text -----------------------------------------------------------------------


def export_lp(model: MilpModel) -> str:
    """CPLEX-style LP text; the options line lets a reader rebuild the model."""
    lines = ["\\ pipeline schedule model",
             f"\\ options: {json.dumps(model.options.to_dict(), sort_keys=True)}",
             f"\\ big_m: {model.big_m}",
             "Minimize", f" obj: {model.objective}", "Subject To"]
    for c in model.constraints:
        terms = []
        for v in sorted(c.coefs):
            cf = c.coefs[v]
            if cf == 0:
                continue
            sign = "+" if cf >= 0 else "-"
            mag = abs(cf)
            terms.append(f"{sign} {'' if mag == 1 else str(mag) + ' '}{v}")
        if not terms:
            terms = ["+ 0 " + model.objective]
        body = " ".join(terms)
        if body.startswith("+ "):
            body = body[2:]
        lines.append(f" {c.name}: {body} {c.sense} {c.rhs}")
    lines.append("Bounds")
    for name, var in model.vars.items():
        if not var.binary:
            lines.append(f" {var.lb:g} <= {name} <= {var.ub:g}")
    lines.append("Binaries")
    for name, var in model.vars.items():
        if var.binary:
            lines.append(f" {name}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def options_from_lp(text: str) -> ModelOptions:
    """Recover the options a model file was built with."""
    for line in text.splitlines():
        if line.startswith("\\ options: "):
            return ModelOptions.from_dict(json.loads(line[len("\\ options: "):]))
    raise ValueError("no options line in model file")


def parse_solution(model: MilpModel, text: str) -> dict:
    """Assignment from `name value` lines.

    '#' comments and '='-prefixed status lines are skipped.  The result
    covers every model variable: names absent from the file default to 0,
    binaries are rounded onto {0, 1}.
    """
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0].startswith("="):
            continue
        if len(parts) < 2:
            raise ValueError(f"malformed solution line: {raw!r}")
        name, v = parts[0], float(parts[1])
        if name not in model.vars:
            raise UnknownVariable(name)
        values[name] = v
    out = {}
    for name, var in model.vars.items():
        v = values.get(name, 0.0)
        if var.binary:
            r = round(v)
            if abs(v - r) > 1e-6 or r not in (0, 1):
                raise NonIntegralBinary(f"{name} = {v}")
            v = r
        out[name] = v
    return out


def decode_solution(model: MilpModel, assignment: dict,
                    inst: PipelineInstance) -> Schedule:
    """Schedule from a model assignment, with exact residual checking."""
    from .schedule import ComputeEvent, TransferEvent

    vals = {name: assignment.get(name, 0.0) for name in model.vars}
    bad = model.residuals(vals, tol=1e-6)
    if bad:
        name, amt = bad[0]
        raise ConstraintResidual(name, amt, f"{len(bad)} rows or bounds violated")
    snapped = {}
    for name, var in model.vars.items():
        v = vals[name]
        r = round(v)
        if not var.binary and abs(v - r) > 1e-4:
            raise ConstraintResidual(name, abs(v - r),
                                     "time off the integer grid")
        snapped[name] = int(r)

    comp, transfers, offloaded = [], [], []
    for op in sorted(inst.ops()):
        e = snapped[VarId("E", _opkey(op)).name]
        comp.append(ComputeEvent(op, e - inst.proc_time[op], e))
    comp.sort(key=lambda ev: (ev.start, ev.op))
    for x in sorted(inst.offloadable_ops()):
        key = (x.stage, x.microbatch)
        if snapped[VarId("Wv", key).name] == 1:
            o = snapped[VarId("O", key).name]
            r = snapped[VarId("R", key).name]
            transfers.append(TransferEvent(x, TransferKind.OFFLOAD, o,
                                           o + inst.offload_time))
            transfers.append(TransferEvent(x, TransferKind.RELOAD, r,
                                           r + inst.offload_time))
            offloaded.append(x)
    transfers.sort(key=lambda tr: (tr.start, tr.op, tr.kind.value))
    return Schedule(tuple(comp), tuple(transfers), frozenset(offloaded))


def encode_warm_start(schedule: Schedule, model: MilpModel,
                      inst: PipelineInstance) -> dict:
    """Model assignment matching a schedule; exact (zero-residual) or error."""
    ends = {ev.op: ev.end for ev in schedule.compute}
    off_s, rel_s = {}, {}
    for tr in schedule.transfers:
        if tr.kind is TransferKind.OFFLOAD:
            off_s[tr.op] = tr.start
        else:
            rel_s[tr.op] = tr.start
    vals = {}
    for op in sorted(inst.ops()):
        vals[VarId("E", _opkey(op)).name] = ends[op]
    for x in sorted(inst.offloadable_ops()):
        key = (x.stage, x.microbatch)
        vals[VarId("Wv", key).name] = 1 if x in schedule.offloaded else 0
        vals[VarId("O", key).name] = off_s.get(x, 0)
        vals[VarId("R", key).name] = rel_s.get(x, 0)
    for name, var in model.vars.items():
        fam = var.vid.family
        if fam == "P":
            kx, ky = var.vid.key
            x, y = OpId(*kx), OpId(*ky)
            vals[name] = 1 if ends[x] < ends[y] else 0
        elif fam in ("K", "L"):
            kx, ky = var.vid.key
            x, y = OpId(kx[0], kx[1], F), OpId(ky[0], ky[1], F)
            if x in schedule.offloaded and y in schedule.offloaded:
                src = off_s if fam == "K" else rel_s
                vals[name] = 1 if (src[x], x) < (src[y], y) else 0
            else:
                vals[name] = 0
        elif fam == "H":
            kx, ky = var.vid.key
            x, y = OpId(kx[0], kx[1], F), OpId(ky[0], ky[1], F)
            if x in schedule.offloaded and y in schedule.offloaded:
                vals[name] = 1 if off_s[x] <= rel_s[y] else 0
            else:
                vals[name] = 0
        elif fam == "M":
            kx, ky = var.vid.key
            x, y = OpId(kx[0], kx[1], F), OpId(*ky)
            vals[name] = 1 if x in schedule.offloaded and off_s[x] <= ends[y] else 0
        elif fam == "N":
            kx, ky = var.vid.key
            x, y = OpId(kx[0], kx[1], F), OpId(*ky)
            vals[name] = 1 if x in schedule.offloaded and rel_s[x] <= ends[y] else 0
    if model.options.post_validation:
        for i in range(1, inst.num_stages + 1):
            sv = VarId("S", (i,)).name
            if sv in model.vars:
                vals[sv] = min(ends[op] - inst.proc_time[op]
                               for op in inst.stage_ops(i) if op.kind is F)
    else:
        sv = VarId("S", ("glob",)).name
        if sv in model.vars:
            vals[sv] = min(ends[op] - inst.proc_time[op]
                           for op in inst.ops() if op.kind is F)
    vals[model.objective] = _objective_of(inst, ends, model.options.post_validation)
    bad = model.residuals(vals, tol=1e-6)
    if bad:
        name, amt = bad[0]
        raise InfeasibleWarmStart(f"{name} violated by {amt:.3g} "
                                  f"({len(bad)} rows total)")
    return vals


def _objective_of(inst, ends, post):
    if post:
        worst = 0
        for i in range(1, inst.num_stages + 1):
            first_f = min(ends[op] - inst.proc_time[op]
                          for op in inst.stage_ops(i) if op.kind is F)
            last_w = max(ends[op] for op in inst.stage_ops(i) if op.kind is W)
            worst = max(worst, last_w - first_f)
        return worst
    lo = min(ends[op] - inst.proc_time[op] for op in inst.ops() if op.kind is F)
    hi = max(ends.values())
    return hi - lo


def write_solution(values: dict) -> str:
    """Solution text in the format parse_solution reads."""
    lines = [f"{name} {values[name]:g}" for name in sorted(values)]
    return "\n".join(lines) + "\n"
