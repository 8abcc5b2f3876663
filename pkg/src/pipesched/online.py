"""Simulated online scheduling: keep training while the solver improves.

The real deployment runs the solver on spare CPUs while accelerators
execute the incumbent schedule, swapping in better schedules between
training iterations.  Here both sides are simulated against one clock:
each iteration consumes its schedule's makespan in simulated time, solver
wall-clock seconds map 1:1 onto that clock, and at every iteration
boundary the latest strictly-better incumbent (if any has arrived by then)
is adopted.  Deterministic apart from the solver's own wall-clock cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .heuristics import AdaParams, best_feasible
from .instance import PipelineInstance
from .schedule import makespan
from .solver import SolveBudget, incumbent_stream, start_session


@dataclass(frozen=True)
class OnlineStep:
    iteration: int
    source: str           # "warm" or "incumbent@<t>"
    span: int


@dataclass(frozen=True)
class OnlineReport:
    total_time: int
    warm_source: str
    solver_status: str
    steps: tuple = ()
    trajectory: tuple = ()     # (solver timestamp, makespan) per incumbent

    def to_dict(self):
        return {
            "total_time": self.total_time,
            "warm_source": self.warm_source,
            "solver_status": self.solver_status,
            "steps": [{"iteration": st.iteration, "source": st.source,
                       "span": st.span} for st in self.steps],
            "trajectory": [{"at": t, "span": s} for t, s in self.trajectory],
        }


def online_sim(inst: PipelineInstance, iterations: int,
               budget: SolveBudget | None = None, db=None,
               params: AdaParams = AdaParams()) -> OnlineReport:
    """Run `iterations` simulated training iterations with boundary swaps."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if db is not None:
        from .cache import warm_start_from_cache
        warm, source = warm_start_from_cache(db, inst, params)
    else:
        warm, source = best_feasible(inst, params)

    session = start_session(inst, budget or SolveBudget(wall_time_limit=0.0),
                            warm=warm)
    incumbents = [(ev.timestamp, ev.makespan, ev.schedule)
                  for ev in incumbent_stream(session)]

    current, cur_src = warm, "warm"
    cur_span = makespan(warm, inst)
    sim, steps = 0, []
    for it in range(1, iterations + 1):
        steps.append(OnlineStep(it, cur_src, cur_span))
        sim += cur_span
        # boundary: newest incumbent that has arrived and strictly improves
        for at, span, sched in incumbents:
            if at <= sim and span < cur_span:
                current, cur_src, cur_span = sched, f"incumbent@{at:.3f}", span
    return OnlineReport(
        total_time=sim,
        warm_source=source,
        solver_status=session.outcome.status,
        steps=tuple(steps),
        trajectory=tuple((round(at, 6), span) for at, span, _ in incumbents),
    )
