"""Pipeline-parallel training schedules: exact optimization, heuristics,
activation offloading, and schedule reuse."""

from .instance import (InvariantViolation, OpId, OpKind, ParseError,
                       PipelineInstance, instance_from_dict, instance_to_dict,
                       load_instance, make_uniform_instance, random_instance,
                       save_instance)
from .schedule import (ComputeEvent, IncompleteSchedule, InvalidSchedule,
                       MemorySemantics, MemoryTrace, NegativeUsage, Schedule,
                       TransferEvent, TransferKind, ValidationReport, Violation,
                       check_structure, load_schedule, makespan, memory_trace,
                       save_schedule, schedule_from_dict, schedule_to_dict,
                       validate)
from .listsched import OrderInfeasible, channel_order_of, run_order, stage_order_of
from .heuristics import (AdaParams, InfeasibleSchedule, NoFeasibleSchedule,
                         ada_offload, best_feasible, fill_profile, one_f_one_b,
                         pipeoffload_like, sequential_schedule)
from .solver import (IncumbentEvent, PreconditionViolation, SessionClosed,
                     SolveBudget, SolveOutcome, SolveSession, brute_force_oracle,
                     incumbent_stream, solve, start_session)
from .milp import (ConstraintResidual, InfeasibleWarmStart, LinConstraint,
                   MilpModel, ModelOptions, NonIntegralBinary, UnknownVariable,
                   VarId, build_model, decode_solution, default_options,
                   encode_warm_start, export_lp, gen_triangle_cuts,
                   options_from_lp, parse_solution, write_solution)
from .cache import (CacheDb, CacheEntry, CacheKey, DegenerateInstance,
                    ShapeMismatch, StorageError, adapt, discretize,
                    entry_from_schedule, lookup, store, warm_start_from_cache)
from .online import OnlineReport, OnlineStep, online_sim
from .gantt import render_svg

__version__ = "0.1.0"
