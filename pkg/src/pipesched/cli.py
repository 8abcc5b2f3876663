"""Command-line front end.

Machine-readable results go to stdout, diagnostics to stderr.  Exit codes:
0 success, 1 infeasible input or failed validation, 2 usage error,
3 file or storage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from . import milp
from .cache import (CacheDb, GRID_STEP, StorageError, discretize,
                    entry_from_schedule, lookup, store, warm_start_from_cache)
from .gantt import render_svg
from .heuristics import (AdaParams, InfeasibleSchedule, NoFeasibleSchedule,
                         ada_offload, best_feasible, one_f_one_b,
                         pipeoffload_like, sequential_schedule)
from .instance import ParseError, load_instance
from .online import online_sim
from .schedule import (IncompleteSchedule, MemorySemantics, load_schedule,
                       makespan, memory_trace, save_schedule, validate)
from .solver import SolveBudget, solve, start_session

_STRATEGIES = (
    ("sequential", lambda inst, p: sequential_schedule(inst)),
    ("1f1b", lambda inst, p: one_f_one_b(inst)),
    ("pipeoffload", lambda inst, p: pipeoffload_like(inst)),
    ("ada", lambda inst, p: ada_offload(inst, p)),
)


def _duration(text: str) -> float:
    """Seconds from '300', '1.5s', or '50ms'."""
    t = text.strip().lower()
    try:
        if t.endswith("ms"):
            return float(t[:-2]) / 1000.0
        if t.endswith("s"):
            return float(t[:-1])
        return float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from None


def _default_db() -> str | None:
    return os.environ.get("PIPESCHED_CACHE")


def _budget(args) -> SolveBudget:
    return SolveBudget(wall_time_limit=args.time_limit,
                       node_limit=args.node_limit,
                       target_gap=args.gap)


def _warm_schedule(spec: str, inst, db_path):
    """Schedule + label for --warm; None means let the solver pick."""
    if spec == "auto":
        if db_path and os.path.exists(db_path):
            return warm_start_from_cache(CacheDb(db_path), inst)
        return None
    if spec.startswith("file:"):
        return load_schedule(spec[5:]), "file"
    named = dict(_STRATEGIES)
    if spec not in named:
        raise argparse.ArgumentTypeError(f"unknown warm start {spec!r}")
    return named[spec](inst, AdaParams()), spec


@dataclass
class _Exit(Exception):
    code: int


def _fail(code: int, message: str):
    print(message, file=sys.stderr)
    raise _Exit(code)


# -- subcommands ----------------------------------------------------------------


def _cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if args.no_cuts:
        print("note: --no-cuts affects exported models only", file=sys.stderr)
    warm = None
    source = None
    try:
        got = _warm_schedule(args.warm, inst, args.db or _default_db())
        if got is not None:
            warm, source = got
    except (InfeasibleSchedule, NoFeasibleSchedule) as e:
        print(f"warm start unavailable: {e}", file=sys.stderr)
    out = start_session(inst, _budget(args), warm=warm,
                        symmetry=not args.no_symmetry,
                        post_validation=True if args.post_validation else None
                        ).outcome
    payload = out.to_dict()
    if source:
        payload["warm_source"] = source
    print(json.dumps(payload, indent=2, sort_keys=True))
    if out.incumbent is None:
        return 1
    save_schedule(out.incumbent, args.output)
    return 0


def _cmd_compare(args) -> int:
    inst = load_instance(args.instance)
    busy = sum(inst.proc_time.values())
    rows = {}
    for name, gen in _STRATEGIES:
        try:
            s = gen(inst, AdaParams())
        except InfeasibleSchedule as e:
            rows[name] = {"makespan": None, "status": "Infeasible",
                          "detail": str(e)}
            continue
        rows[name] = _compare_row(s, inst, busy, "Feasible")
    out = solve(inst, budget=_budget(args))
    if out.incumbent is None:
        rows["exact"] = {"makespan": None, "status": out.status}
    else:
        rows["exact"] = _compare_row(out.incumbent, inst, busy, out.status)
    report = {"strategies": rows, "instance": {
        "stages": inst.num_stages, "microbatches": inst.num_microbatches}}
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        head = f"{'strategy':<12} {'makespan':>8} {'bubble':>7} {'status':>10}  peaks"
        print(head)
        print("-" * len(head))
        for name in [n for n, _ in _STRATEGIES] + ["exact"]:
            r = rows[name]
            if r["makespan"] is None:
                print(f"{name:<12} {'-':>8} {'-':>7} {r['status']:>10}")
            else:
                peaks = ",".join(str(r["peak_memory"][k])
                                 for k in sorted(r["peak_memory"]))
                print(f"{name:<12} {r['makespan']:>8} {r['bubble_ratio']:>7.3f} "
                      f"{r['status']:>10}  [{peaks}]")
    return 0


def _compare_row(s, inst, busy, status):
    span = makespan(s, inst)
    trace = memory_trace(s, inst, MemorySemantics.STRICT)
    return {
        "makespan": span,
        "status": status,
        "bubble_ratio": round(1.0 - busy / (inst.num_stages * span), 6),
        "peak_memory": {str(i): trace.peak[i] for i in sorted(trace.peak)},
    }


def _model_options(inst, args) -> milp.ModelOptions:
    opts = milp.default_options(inst)
    changes = {}
    if getattr(args, "no_cuts", False):
        changes["triangle_cuts"] = False
    if getattr(args, "post_validation", False):
        changes["post_validation"] = True
    if changes:
        opts = milp.ModelOptions(**{**opts.to_dict(), **changes})
    return opts


def _cmd_export_lp(args) -> int:
    inst = load_instance(args.instance)
    model = milp.build_model(inst, _model_options(inst, args))
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(milp.export_lp(model))
    print(json.dumps({"variables": len(model.vars),
                      "constraints": len(model.constraints),
                      "path": args.output}))
    return 0


def _cmd_import_sol(args) -> int:
    inst = load_instance(args.instance)
    with open(args.model, encoding="utf-8") as fh:
        lp_text = fh.read()
    model = milp.build_model(inst, milp.options_from_lp(lp_text))
    with open(args.solution, encoding="utf-8") as fh:
        sol_text = fh.read()
    try:
        assignment = milp.parse_solution(model, sol_text)
        s = milp.decode_solution(model, assignment, inst)
    except (milp.UnknownVariable, milp.NonIntegralBinary,
            milp.ConstraintResidual) as e:
        _fail(1, f"solution rejected: {e}")
    save_schedule(s, args.output)
    print(json.dumps({"makespan": makespan(s, inst),
                      "offloaded": len(s.offloaded), "path": args.output}))
    return 0


def _cmd_gantt(args) -> int:
    inst = load_instance(args.instance)
    s = load_schedule(args.schedule)
    try:
        svg = render_svg(s, inst)
    except IncompleteSchedule as e:
        _fail(1, f"schedule rejected: {e}")
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(json.dumps({"path": args.output}))
    return 0


def _cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    s = load_schedule(args.schedule)
    try:
        report = validate(s, inst, MemorySemantics.parse(args.semantics))
    except IncompleteSchedule as e:
        _fail(1, f"structurally invalid: {e}")
    print(report)
    return 0 if report.ok else 1


def _cmd_cache(args) -> int:
    db_path = args.db or _default_db()
    if not db_path:
        _fail(2, "no cache db: pass --db or set PIPESCHED_CACHE")
    db = CacheDb(db_path)
    if args.cache_cmd == "store":
        inst = load_instance(args.instance)
        s = load_schedule(args.schedule)
        entry = entry_from_schedule(inst, s, args.grid)
        store(db, entry.key, entry)
        print(json.dumps({"stored": entry.key.to_dict(),
                          "makespan_ratio": entry.recorded_makespan_ratio}))
        return 0
    if args.cache_cmd == "lookup":
        inst = load_instance(args.instance)
        hit = lookup(db, discretize(inst, args.grid), args.grid)
        if hit is None:
            print("no matching entry", file=sys.stderr)
            return 1
        print(json.dumps(hit.to_dict(), sort_keys=True))
        return 0
    entries = db.entries()
    for e in entries:
        print(json.dumps({"key": e.key.to_dict(),
                          "makespan_ratio": e.recorded_makespan_ratio},
                         sort_keys=True))
    print(f"{len(entries)} entries", file=sys.stderr)
    return 0


def _cmd_online_sim(args) -> int:
    inst = load_instance(args.instance)
    db_path = args.db or _default_db()
    db = CacheDb(db_path) if db_path and os.path.exists(db_path) else None
    budget = SolveBudget(wall_time_limit=args.time_limit)
    report = online_sim(inst, args.iterations, budget, db=db)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


# -- parser ----------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pipesched",
        description="Pipeline-parallel schedule optimizer with offloading")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_budget(p):
        p.add_argument("--time-limit", type=_duration, default=300.0,
                       metavar="D", help="wall limit: 300, 1.5s, 50ms")
        p.add_argument("--node-limit", type=int, default=None, metavar="N")
        p.add_argument("--gap", type=float, default=0.0, metavar="G")

    p = sub.add_parser("solve", help="find a schedule")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("-o", "--output", required=True)
    add_budget(p)
    p.add_argument("--warm", default="auto",
                   help="auto|ada|pipeoffload|1f1b|sequential|file:PATH")
    p.add_argument("--no-cuts", action="store_true",
                   help="model-option flag; exported models only")
    p.add_argument("--no-symmetry", action="store_true",
                   help="disable micro-batch symmetry reduction")
    p.add_argument("--post-validation", action="store_true",
                   help="per-stage window objective")
    p.add_argument("--db", default=None, help="cache db for --warm auto")
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("compare", help="strategy comparison table")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("--json", action="store_true")
    add_budget(p)
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("export-lp", help="write the model as LP text")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-cuts", action="store_true")
    p.add_argument("--post-validation", action="store_true")
    p.set_defaults(fn=_cmd_export_lp)

    p = sub.add_parser("import-sol", help="decode an external solver solution")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("-m", "--model", required=True, help="LP file from export-lp")
    p.add_argument("-s", "--solution", required=True, help="name value lines")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_import_sol)

    p = sub.add_parser("gantt", help="render a schedule as SVG")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("-s", "--schedule", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_gantt)

    p = sub.add_parser("validate", help="check a schedule against an instance")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("-s", "--schedule", required=True)
    p.add_argument("--semantics", choices=["strict", "milp"], default="strict")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("cache", help="manage the schedule cache")
    csub = p.add_subparsers(dest="cache_cmd", required=True)
    for name in ("store", "lookup", "list"):
        cp = csub.add_parser(name)
        cp.add_argument("--db", default=None)
        cp.add_argument("--grid", type=float, default=GRID_STEP)
        if name in ("store", "lookup"):
            cp.add_argument("-i", "--instance", required=True)
        if name == "store":
            cp.add_argument("-s", "--schedule", required=True)
        cp.set_defaults(fn=_cmd_cache)

    p = sub.add_parser("online-sim", help="simulated training with live solving")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--time-limit", type=_duration, default=1.0, metavar="D")
    p.add_argument("--db", default=None)
    p.set_defaults(fn=_cmd_online_sim)
    return ap


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.fn(args)
    except _Exit as e:
        return e.code
    except (ParseError, StorageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NoFeasibleSchedule as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
