"""Deterministic SVG rendering of schedules.

One row per stage for compute, one row per transfer channel underneath,
a quantum ruler along the top.  Output depends only on the schedule and
instance contents, so re-rendering the same inputs is byte-identical.
"""

from __future__ import annotations

from .instance import OpKind, PipelineInstance
from .schedule import (InvalidSchedule, MemorySemantics, Schedule,
                       TransferKind, check_structure, makespan, validate)

_FILL = {OpKind.F: "#7aa6d6", OpKind.B: "#74b47a", OpKind.W: "#c9b458"}
_EDGE = {OpKind.F: "#3a6ea5", OpKind.B: "#3e7a46", OpKind.W: "#8f7d1e"}
_TFILL = {TransferKind.OFFLOAD: "#d98c7a", TransferKind.RELOAD: "#9a8fd0"}
_TEDGE = {TransferKind.OFFLOAD: "#a4503c", TransferKind.RELOAD: "#5d4fa2"}

_ROW_H = 30
_GAP = 10
_LEFT = 88
_TOP = 34


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(s: Schedule, inst: PipelineInstance) -> str:
    """SVG text for a valid schedule.

    The gate uses the relaxed memory semantics so that model solutions
    remain renderable; ordering and exclusivity checks are identical.
    """
    check_structure(s, inst)
    report = validate(s, inst, MemorySemantics.MILP_RELAXED)
    if not report.ok:
        raise InvalidSchedule(f"refusing to render: {report}")
    horizon = max(makespan(s, inst),
                  max((tr.end for tr in s.transfers), default=0), 1)
    px = max(6, min(24, 1100 // horizon))
    n_chan = len(inst.topology_groups)
    rows = inst.num_stages + n_chan
    width = _LEFT + horizon * px + 20
    height = _TOP + rows * (_ROW_H + _GAP) + 26

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}" '
           f'font-family="monospace" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="#fdfdfb"/>']

    def row_y(r):
        return _TOP + r * (_ROW_H + _GAP)

    # ruler: a tick per quantum, labels thinned to stay readable
    step = 1
    while step * px < 26:
        step *= 2
    for t in range(0, horizon + 1, step):
        x = _LEFT + t * px
        out.append(f'<line x1="{x}" y1="{_TOP - 6}" x2="{x}" '
                   f'y2="{row_y(rows) - _GAP + 4}" stroke="#ddd"/>')
        out.append(f'<text x="{x}" y="{_TOP - 10}" text-anchor="middle" '
                   f'fill="#666">{t}</text>')

    for i in range(1, inst.num_stages + 1):
        y = row_y(i - 1)
        out.append(f'<text x="{_LEFT - 8}" y="{y + 19}" text-anchor="end" '
                   f'fill="#333">stage {i}</text>')
        for ev in sorted((e for e in s.compute if e.op.stage == i),
                         key=lambda e: (e.start, e.op)):
            x, w = _LEFT + ev.start * px, (ev.end - ev.start) * px
            k = ev.op.kind
            out.append(f'<rect x="{x}" y="{y}" width="{w}" height="{_ROW_H}" '
                       f'fill="{_FILL[k]}" stroke="{_EDGE[k]}"/>')
            label = f"{k.letter}{ev.op.microbatch}"
            if w >= 7 * len(label):
                out.append(f'<text x="{x + w / 2:g}" y="{y + 19}" '
                           f'text-anchor="middle" fill="#1a1a1a">'
                           f'{_esc(label)}</text>')

    for g in range(n_chan):
        y = row_y(inst.num_stages + g)
        out.append(f'<text x="{_LEFT - 8}" y="{y + 19}" text-anchor="end" '
                   f'fill="#333">chan {g}</text>')
        evs = sorted((tr for tr in s.transfers
                      if inst.stage_channel(tr.op.stage) == g),
                     key=lambda tr: (tr.start, tr.op, tr.kind.value))
        for tr in evs:
            x, w = _LEFT + tr.start * px, (tr.end - tr.start) * px
            out.append(f'<rect x="{x}" y="{y}" width="{w}" height="{_ROW_H}" '
                       f'fill="{_TFILL[tr.kind]}" stroke="{_TEDGE[tr.kind]}" '
                       f'rx="4"/>')
            tag = "↓" if tr.kind is TransferKind.OFFLOAD else "↑"
            label = f"{tag}{tr.op.stage}.{tr.op.microbatch}"
            if w >= 7 * len(label):
                out.append(f'<text x="{x + w / 2:g}" y="{y + 19}" '
                           f'text-anchor="middle" fill="#1a1a1a">'
                           f'{_esc(label)}</text>')

    out.append(f'<text x="{_LEFT}" y="{height - 8}" fill="#555">'
               f'makespan {makespan(s, inst)} · {inst.num_stages} stages · '
               f'{inst.num_microbatches} micro-batches</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
