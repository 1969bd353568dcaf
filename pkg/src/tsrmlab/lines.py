"""Dyadic skeleton of coalescing forward lines, with backward-line queries.

The uncountable coalescing system is approximated by a family started from
every dyadic lattice point of a window at refinement level m.  Forward values
from an arbitrary (x, h) are suprema over skeleton lines passing strictly
below h at x; backward values are the dual suprema over lines started left of
the query column.  All tolerances scale as 2^-m.
"""

from __future__ import annotations

import json
import math
import warnings
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .barrier import Barrier
from .core import mix_seed
from .errors import EdgeEffect, InvalidConfig, UndefinedStart
from .rab import FamilyBuilder, Line

_FALLBACK_TAG = 0xFA11
_REVERSAL_TAG = 0x9E7E


def dyadic_starts(x_window: tuple[float, float], h_window: tuple[float, float],
                  m: int) -> list[tuple[float, float]]:
    """Dyadic lattice points of the window at step 2^-m, enumerated by level
    (the max of the two coordinate levels), then x, then h.  Frozen order."""
    if m < 1:
        raise InvalidConfig("refinement level m must be >= 1")
    step = 2.0 ** (-m)

    def indices(lo, hi):
        k0 = math.ceil(lo / step - 1e-9)
        k1 = math.floor(hi / step + 1e-9)
        return range(k0, k1 + 1)

    def level(k: int) -> int:
        if k == 0:
            return 0
        tz = (k & -k).bit_length() - 1
        return max(0, m - tz)

    pts = [(max(level(kx), level(kh)), kx * step, kh * step)
           for kx in indices(*x_window) for kh in indices(*h_window)]
    pts.sort()
    return [(x, h) for _lvl, x, h in pts]


@dataclass
class Skeleton:
    barrier: Barrier
    v: float
    m: int
    seed: int
    builder: FamilyBuilder = field(repr=False)
    starts: list = field(repr=False)
    start_lids: list = field(repr=False)
    x_window: tuple
    h_window: tuple
    merges_at: list = field(repr=False)
    starts_at: list = field(repr=False)
    edge_margin: int
    area_cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.barrier.grid

    def column_index(self, col: int) -> tuple[list[float], list[int]]:
        """Sorted (values, line ids) alive at the column."""
        return self.builder.alive_at(col)

    def defined_line_count(self) -> int:
        return sum(1 for lid in self.start_lids if lid is not None)


def build_skeleton(b: Barrier, m: int, seed: int, *, v: float = 1.0,
                   x_window: tuple[float, float] | None = None,
                   h_window: tuple[float, float] | None = None,
                   max_lines: int = 200_000) -> Skeleton:
    """Coalescing family over all dyadic starts of the window above the barrier."""
    g = b.grid
    if x_window is None:
        x_window = (g.x0, g.x_end)
    if h_window is None:
        h_window = (float(np.min(b.lam)), float(np.max(b.lam)) + 1.0)
    if not (g.x0 <= x_window[0] < x_window[1] <= g.x_end + 1e-12):
        raise InvalidConfig("x_window must lie inside the grid window")
    starts = dyadic_starts(x_window, h_window, m)
    fb = FamilyBuilder(b, v, max_lines=max_lines)
    lids: list[int | None] = []
    for j, (x, h) in enumerate(starts):
        col = g.index_of(x)
        if h <= b.lam[col]:
            lids.append(None)
            continue
        lids.append(fb.add_rab(x, h, mix_seed(seed, j)))
    merges_at: list[list[int]] = [[] for _ in range(g.n)]
    starts_at: list[list[int]] = [[] for _ in range(g.n)]
    for ln in fb.lines:
        if ln is None:
            continue
        starts_at[ln.start_idx].append(ln.lid)
        if ln.merge_idx is not None:
            merges_at[ln.merge_idx].append(ln.lid)
    return Skeleton(barrier=b, v=v, m=m, seed=seed, builder=fb, starts=starts,
                    start_lids=lids, x_window=x_window, h_window=h_window,
                    merges_at=merges_at, starts_at=starts_at,
                    edge_margin=max(4, g.n // 64))


def _warn_edge(s: Skeleton, col: int, what: str):
    if col < s.edge_margin or col > s.grid.n - 1 - s.edge_margin:
        warnings.warn(f"{what} at column {col} is within {s.edge_margin} columns "
                      f"of the window edge", EdgeEffect, stacklevel=3)


def _top_qualifying(s: Skeleton, ix: int, h: float) -> Line | None:
    """Highest alive line at column ix passing strictly below h whose cluster
    has a member started strictly left of ix."""
    cv, cl = s.builder.alive_at(ix)
    j = bisect_left(cv, h)
    while j > 0:
        j -= 1
        ln = s.builder.lines[cl[j]]
        if s.builder.has_member_started_before(ln, ix, ix):
            return ln
    return None


def _fallback_line(s: Skeleton, ix: int, h: float) -> Line:
    # one noise stream per start column, shared by all h: keeps the fallback
    # monotone in h and deterministic per skeleton
    seed = mix_seed(s.seed, _FALLBACK_TAG, ix)
    return s.builder.probe_rab(s.grid.x(ix), h, seed, fallback=True)


def eval_forward(s: Skeleton, x: float, h: float, y: float,
                 with_flag: bool = False):
    """Forward-line value at y from (x, h); positions snap to grid columns.

    When no skeleton line qualifies at finite m, the value comes from a fresh
    path coalesced into the skeleton; `with_flag` exposes that fallback.
    """
    if y < x:
        raise InvalidConfig("eval_forward needs y >= x")
    ix = s.grid.index_of(x)
    iy = s.grid.index_of(y)
    if h <= s.barrier.lam[ix]:
        raise UndefinedStart(f"h={h} at or below barrier at x={x}")
    _warn_edge(s, iy, "forward query")
    top = _top_qualifying(s, ix, h)
    if top is not None:
        val = h if iy == ix else s.builder.value_at(top.lid, iy)
        return (val, False) if with_flag else val
    probe = _fallback_line(s, ix, h)
    val = h if iy == ix else s.builder.probe_value_at(probe, iy)
    return (val, True) if with_flag else val


@dataclass
class LineView:
    skeleton: Skeleton
    start: tuple[float, float]
    start_col: int
    values: np.ndarray = field(repr=False)  # columns [start_col, n)
    fallback: bool
    absorbed_at: int | None

    def value(self, col: int) -> float:
        return float(self.values[col - self.start_col])


def forward_view(s: Skeleton, x: float, h: float) -> LineView:
    """Whole resolved forward path from (x, h) to the right window edge."""
    ix = s.grid.index_of(x)
    if h <= s.barrier.lam[ix]:
        raise UndefinedStart(f"h={h} at or below barrier at x={x}")
    n = s.grid.n
    top = _top_qualifying(s, ix, h)
    if top is not None:
        vals = np.empty(n - ix)
        vals[0] = h
        c = ix + 1
        ln = s.builder.root_at(top.lid, c) if c < n else top
        while c < n:
            stop = n - 1 if ln.merge_idx is None else min(n - 1, ln.merge_idx - 1)
            vals[c - ix: stop - ix + 1] = ln.own[c - ln.start_idx: stop - ln.start_idx + 1]
            c = stop + 1
            if c < n:
                ln = s.builder.root_at(ln.parent, c)
        absorbed = _resolved_absorption(s, top, ix)
        return LineView(s, (x, h), ix, vals, False, absorbed)
    probe = _fallback_line(s, ix, h)
    vals = np.array([h] + [s.builder.probe_value_at(probe, c) for c in range(ix + 1, n)])
    absorbed = probe.absorbed_idx
    if probe.merge_idx is not None:
        absorbed = _resolved_absorption(s, s.builder.lines[probe.parent], probe.merge_idx)
    return LineView(s, (x, h), ix, vals, True, absorbed)


def _resolved_absorption(s: Skeleton, ln: Line, col_from: int) -> int | None:
    """First column >= col_from at which the resolved trajectory is glued."""
    b = s.builder
    c = col_from
    cur = b.root_at(ln.lid, c) if ln.lid >= 0 else ln
    n = s.grid.n
    while True:
        if cur.absorbed_idx is not None:
            return max(cur.absorbed_idx, col_from)
        if cur.merge_idx is None or cur.merge_idx >= n:
            return None
        c = cur.merge_idx
        cur = b.root_at(cur.parent, c)


def eval_backward(s: Skeleton, x: float, h: float, y: float) -> float:
    """Backward-line value at y <= x: supremum over skeleton lines started
    strictly left of y whose value at x is below h; barrier value if none."""
    if y > x:
        raise InvalidConfig("eval_backward needs y <= x")
    ix = s.grid.index_of(x)
    iy = s.grid.index_of(y)
    if h <= s.barrier.lam[ix]:
        raise UndefinedStart(f"h={h} at or below barrier at x={x}")
    _warn_edge(s, iy, "backward query")
    b = s.builder
    cv, cl = b.alive_at(iy)
    best = None
    for val, lid in zip(reversed(cv), reversed(cl)):
        ln = b.lines[lid]
        if not b.has_member_started_before(ln, iy, iy):
            continue
        if b.value_at(lid, ix) < h:
            best = val
            break
    return float(best) if best is not None else float(s.barrier.lam[iy])


def backward_profile(s: Skeleton, x: float, h: float
                     ) -> tuple[np.ndarray, int, bool]:
    """Backward-line values on columns [stop_col, ix - 1], walking left from x
    until the qualifying set empties (then the profile is the barrier onward).

    Returns (values, stop_col, left_closed); left_closed is False when the
    walk was still live inside the edge margin.
    """
    ix = s.grid.index_of(x)
    if h <= s.barrier.lam[ix]:
        raise UndefinedStart(f"h={h} at or below barrier at x={x}")
    b = s.builder
    lam = s.barrier.lam
    good: dict[int, bool] = {}
    cv, cl = b.alive_at(ix)
    stop = bisect_left(cv, h)
    for lid in cl[:stop]:
        good[lid] = True
    out: list[float] = []
    col = ix - 1
    left_closed = False
    while col >= 0:
        for lid in s.starts_at[col + 1]:
            good.pop(lid, None)
        for lid in s.merges_at[col + 1]:
            ln = b.lines[lid]
            if b.root_at(ln.parent, col + 1).lid in good:
                good[lid] = True
        best = None
        for lid in good:
            ln = b.lines[lid]
            if not b.has_member_started_before(ln, col, col):
                continue
            val = float(ln.own[col - ln.start_idx])
            if best is None or val > best:
                best = val
        if best is None:
            # an empty qualifying column stays empty further left, so the
            # profile is the barrier onward; near the edge that is untrusted
            left_closed = col >= s.edge_margin
            break
        out.append(best)
        col -= 1
    out.reverse()
    return np.asarray(out), col + 1, bool(left_closed)


def trace_set(s: Skeleton, x: float, y: float) -> np.ndarray:
    """Distinct skeleton-line values at column y among lines started strictly
    left of x (the trace at y of the system started before x), sorted."""
    if not (x < y):
        raise InvalidConfig("trace_set needs x < y")
    ix = s.grid.index_of(x)
    iy = s.grid.index_of(y)
    b = s.builder
    cv, cl = b.alive_at(iy)
    vals = [val for val, lid in zip(cv, cl)
            if b.has_member_started_before(b.lines[lid], iy, ix)]
    return np.asarray(vals)


def reversal_sample(s: Skeleton, x: float, h: float, y: float,
                    sample_index: int = 0) -> float:
    """eval_backward under a fresh skeleton seed; one draw of the backward
    value's distribution at fixed (x, h, y)."""
    fresh = build_skeleton(s.barrier, s.m, mix_seed(s.seed, _REVERSAL_TAG, sample_index),
                           v=s.v, x_window=s.x_window, h_window=s.h_window,
                           max_lines=s.builder.max_lines or 200_000)
    return eval_backward(fresh, x, h, y)


def noncrossing_violations(s: Skeleton, tol: float = 1e-12) -> int:
    """Count adjacent-column order inversions beyond tol over all line pairs."""
    b = s.builder
    bad = 0
    for col in range(s.grid.n - 1):
        vals_next = []
        for lid in b.col_lines[col]:  # sorted by value at col
            ln = b.lines[lid]
            if ln.merge_idx is not None and ln.merge_idx <= col + 1:
                continue
            vals_next.append(ln.own[col + 1 - ln.start_idx])
        bad += sum(1 for a, c in zip(vals_next, vals_next[1:]) if c < a - tol)
    return bad


def dump_skeleton(s: Skeleton, ndjson_path, values_path):
    """NDJSON line records plus a sidecar text table of own values."""
    with open(ndjson_path, "w") as f:
        for lid, ln in enumerate(s.builder.lines):
            if ln is None:
                rec = {"line_id": lid, "defined": False}
            else:
                rec = {"line_id": lid,
                       "start_x": s.grid.x(ln.start_idx),
                       "start_h": ln.start_h,
                       "merge_into": ln.parent,
                       "merge_index": ln.merge_idx,
                       "values_ref": lid}
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(values_path, "w") as f:
        for lid, ln in enumerate(s.builder.lines):
            own = "" if ln is None else " ".join(f"{v:.17g}" for v in ln.own)
            f.write(f"{lid} {own}\n".rstrip() + "\n")
