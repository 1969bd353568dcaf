"""Single reflected-then-absorbed paths and coalescing families of them.

A path started at (x, h) above the barrier runs as a Brownian motion, is
pushed up by the barrier left of chi (running-supremum reflection, which on
the grid is the recursion R_{i+1} = max(R_i + dW, lam_{i+1})), and right of
chi is glued to the barrier at first contact.  Families merge inductively:
each new path follows its own noise until it meets the trajectory of an
earlier one, then shares that trajectory's tail by reference.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .barrier import Barrier
from .core import Grid, NoisePath, mix_seed, rng_for
from .errors import InvalidConfig, ResourceLimit, UndefinedStart

_BRIDGE_TAG = 0xB21D6E
_CHUNK = 64


@dataclass
class RabPath:
    barrier: Barrier
    start_index: int
    start_h: float
    values: np.ndarray = field(repr=False)  # columns [start_index, n)
    absorbed_at: int | None
    first_hit_before_chi: int | None
    noise_seed: int

    def value(self, col: int) -> float:
        return float(self.values[col - self.start_index])


class _Stepper:
    """Incremental RAB evolution; one call per grid column.

    `barrier_bridge` adds the sub-step crossing test in the absorbing phase:
    with probability exp(-2*(R_i-lam_i)*(R_{i+1}-lam_{i+1})/(v*dx)) an unseen
    mid-step contact is declared.  Bridge uniforms come from a side stream so
    the Gaussian increments are the same with the flag on or off.
    """

    __slots__ = ("lam", "chi_idx", "v", "dx", "i", "r", "absorbed_at",
                 "first_hit", "from_barrier", "bridge_rng")

    def __init__(self, b: Barrier, v: float, i0: int, h: float, *,
                 barrier_start: bool = False, bridge_seed: int | None = None):
        self.lam = b.lam
        self.chi_idx = b.chi_index
        self.v = v
        self.dx = b.grid.dx
        self.i = i0
        self.absorbed_at = None
        self.first_hit = None
        self.bridge_rng = None if bridge_seed is None else rng_for(bridge_seed, _BRIDGE_TAG)
        if barrier_start:
            if i0 >= self.chi_idx:
                self.r = float(self.lam[i0])
                self.absorbed_at = i0
            else:
                self.r = float(self.lam[i0])
                self.first_hit = i0
        else:
            if h <= self.lam[i0]:
                raise UndefinedStart(
                    f"start height {h} not above barrier {self.lam[i0]} at column {i0}"
                )
            self.r = float(h)

    def step(self, dw: float) -> float:
        """Advance from column i to i+1 given the noise increment."""
        i1 = self.i + 1
        lam1 = float(self.lam[i1])
        if self.absorbed_at is not None:
            self.r = lam1
        elif i1 <= self.chi_idx:
            # reflecting region (the supremum formula includes the switch column)
            free = self.r + dw
            if free <= lam1:
                self.r = lam1
                if self.first_hit is None:
                    self.first_hit = i1
                if i1 == self.chi_idx:
                    self.absorbed_at = i1
            else:
                self.r = free
        else:
            nxt = self.r + dw
            if nxt <= lam1:
                self.r = lam1
                self.absorbed_at = i1
            else:
                if self.bridge_rng is not None:
                    lam0 = float(self.lam[self.i])
                    p = math.exp(-2.0 * (self.r - lam0) * (nxt - lam1) / (self.v * self.dx))
                    if self.bridge_rng.random() < p:
                        self.r = lam1
                        self.absorbed_at = i1
                        self.i = i1
                        return self.r
                self.r = nxt
        self.i = i1
        return self.r


def _run_stepper(st: _Stepper, increments: np.ndarray, i0: int, n: int) -> np.ndarray:
    out = np.empty(n - i0)
    out[0] = st.r
    for k in range(i0, n - 1):
        out[k - i0 + 1] = st.step(float(increments[k]))
    return out


def sample_rab(b: Barrier, x: float, h: float, noise: NoisePath, *,
               bridge: bool = False) -> RabPath:
    """Sample one path from (x, h), driven by the given noise."""
    if noise.grid != b.grid:
        raise InvalidConfig("noise grid does not match barrier grid")
    i0 = b.grid.index_of(x)
    st = _Stepper(b, noise.v, i0, h,
                  bridge_seed=noise.seed if bridge else None)
    inc = np.diff(noise.values)
    vals = _run_stepper(st, inc, i0, b.grid.n)
    return RabPath(barrier=b, start_index=i0, start_h=h, values=vals,
                   absorbed_at=st.absorbed_at, first_hit_before_chi=st.first_hit,
                   noise_seed=noise.seed)


def sample_barrier_start_rab(b: Barrier, x: float, noise: NoisePath, *,
                             bridge: bool = False) -> RabPath:
    """Path started exactly on the barrier: identically the barrier right of
    chi, the running-supremum reflection from the start otherwise."""
    if noise.grid != b.grid:
        raise InvalidConfig("noise grid does not match barrier grid")
    i0 = b.grid.index_of(x)
    st = _Stepper(b, noise.v, i0, float(b.lam[i0]), barrier_start=True,
                  bridge_seed=noise.seed if bridge else None)
    inc = np.diff(noise.values)
    vals = _run_stepper(st, inc, i0, b.grid.n)
    return RabPath(barrier=b, start_index=i0, start_h=float(b.lam[i0]), values=vals,
                   absorbed_at=st.absorbed_at, first_hit_before_chi=st.first_hit,
                   noise_seed=noise.seed)


def crossing_index(p: Sequence[float], q: Sequence[float], from_: int) -> int | None:
    """First index i >= from_ where the two aligned paths meet or swap order."""
    p = np.asarray(p)
    q = np.asarray(q)
    d = p - q
    if from_ >= len(d):
        return None
    if d[from_] == 0.0:
        return from_
    lo = max(from_, 1)
    prod = d[lo:] * d[lo - 1:-1]
    hits = np.nonzero(prod <= 0.0)[0]
    return int(hits[0]) + lo if hits.size else None


@dataclass
class Line:
    lid: int
    start_idx: int
    start_h: float
    own: np.ndarray = field(repr=False)  # values at columns [start_idx, merge_idx)
    merge_idx: int | None = None
    parent: int | None = None
    absorbed_idx: int | None = None
    first_hit_idx: int | None = None
    seed: int | None = None
    fallback: bool = False
    # (column, member start column) pairs for every cluster member gained at
    # that column; queried to decide whether the cluster has a member started
    # strictly left of a given column
    member_events: list = field(default_factory=list, repr=False)


class FamilyBuilder:
    """Inductive coalescing-family construction over a shared barrier.

    Lines are added one by one; per column a sorted index of the values of
    all currently-unmerged (alive) lines is maintained, so each new path only
    compares against its two value-neighbours to detect its merge column.
    Ties at exact equality resolve to the smallest line id.
    """

    def __init__(self, b: Barrier, v: float, *, barrier_bridge: bool = False,
                 line_bridge: bool = False, max_lines: int | None = None):
        if not (v > 0):
            raise InvalidConfig(f"variance must be positive, got {v}")
        self.barrier = b
        self.v = v
        self.barrier_bridge = barrier_bridge
        self.line_bridge = line_bridge
        self.max_lines = max_lines
        self.lines: list[Line | None] = []
        self.merge_records: list[tuple[int, int, int]] = []
        n = b.grid.n
        self.col_values: list[list[float]] = [[] for _ in range(n)]
        self.col_lines: list[list[int]] = [[] for _ in range(n)]

    # -- queries -----------------------------------------------------------

    def root_at(self, lid: int, col: int) -> Line:
        ln = self.lines[lid]
        while ln.merge_idx is not None and col >= ln.merge_idx:
            ln = self.lines[ln.parent]
        return ln

    def value_at(self, lid: int, col: int) -> float:
        ln = self.root_at(lid, col)
        return float(ln.own[col - ln.start_idx])

    def has_member_started_before(self, ln: Line, alive_col: int, cutoff_col: int) -> bool:
        """True when ln's cluster, as of alive_col, has a member line that
        started strictly left of cutoff_col."""
        if ln.start_idx < cutoff_col:
            return True
        for at_col, start_col in ln.member_events:
            if at_col <= alive_col and start_col < cutoff_col:
                return True
        return False

    def probe_value_at(self, ln: Line, col: int) -> float:
        """Resolved value at col of a probe line (lid -1, not registered)."""
        if ln.merge_idx is None or col < ln.merge_idx:
            return float(ln.own[col - ln.start_idx])
        return self.value_at(ln.parent, col)

    def alive_at(self, col: int) -> tuple[list[float], list[int]]:
        return self.col_values[col], self.col_lines[col]

    def distinct_count_at(self, col: int) -> int:
        return len(self.col_values[col])

    # -- construction ------------------------------------------------------

    def add_undefined(self) -> int:
        self.lines.append(None)
        return len(self.lines) - 1

    def add_rab(self, x: float, h: float, seed: int, *,
                barrier_start: bool = False, fallback: bool = False) -> int:
        """Add one independently-driven path from (x, h) and merge it in."""
        if self.max_lines is not None and len(self.lines) >= self.max_lines:
            raise ResourceLimit(f"line budget {self.max_lines} exceeded")
        ln = self.probe_rab(x, h, seed, barrier_start=barrier_start, fallback=fallback)
        return self._commit(ln)

    def probe_rab(self, x: float, h: float, seed: int, *,
                  barrier_start: bool = False, fallback: bool = False) -> Line:
        """March a fresh path against the family without inserting it.

        The returned Line is not registered: its lid is -1 and the family is
        unchanged, so probes are safe on a finished (shared, read-only)
        family.  Resolution past its merge column goes through `parent`.
        """
        b = self.barrier
        i0 = b.grid.index_of(x)
        if not barrier_start and h <= b.lam[i0]:
            raise UndefinedStart(f"start height {h} at or below barrier at column {i0}")
        st = _Stepper(b, self.v, i0, h, barrier_start=barrier_start,
                      bridge_seed=seed if self.barrier_bridge else None)
        rng = rng_for(seed)
        sd = math.sqrt(self.v * b.grid.dx)
        buf = np.empty(0)
        pos = 0

        def next_value(_col: int) -> float:
            nonlocal buf, pos
            if pos >= len(buf):
                buf = rng.standard_normal(_CHUNK)
                pos = 0
            dw = float(buf[pos]) * sd
            pos += 1
            return st.step(dw)

        ln = self._march(i0, st.r, next_value, seed=seed, fallback=fallback)
        ln.absorbed_idx = st.absorbed_at
        ln.first_hit_idx = st.first_hit
        return ln

    def add_path(self, start_idx: int, values: Sequence[float]) -> int:
        """Add a fully materialized path (used for hand-built cases and tests)."""
        values = np.asarray(values, dtype=float)
        if start_idx + len(values) != self.barrier.grid.n:
            raise InvalidConfig("path must cover [start_idx, grid end]")
        it = iter(values[1:])
        return self._commit(self._march(start_idx, float(values[0]),
                                        lambda _c: float(next(it))))

    def _march(self, i0: int, first: float, next_value: Callable[[int], float],
               *, seed: int | None = None, fallback: bool = False) -> Line:
        n = self.barrier.grid.n
        dx = self.barrier.grid.dx
        own = [first]
        merge_idx = None
        parent = None
        cv, cl = self.col_values[i0], self.col_lines[i0]
        j = bisect_left(cv, first)
        if j < len(cv) and cv[j] == first:
            merge_idx, parent = i0, cl[j]
            own = []
        r_prev = first
        col = i0
        while merge_idx is None and col + 1 < n:
            cv, cl = self.col_values[col], self.col_lines[col]
            j = bisect_left(cv, r_prev)
            lo = cl[j - 1] if j >= 1 else None
            hi = cl[j] if j < len(cl) else None
            col += 1
            r = next_value(col)
            lo_v = self.value_at(lo, col) if lo is not None else None
            hi_v = self.value_at(hi, col) if hi is not None else None
            crossed = []
            if lo_v is not None and r <= lo_v:
                crossed.append(lo)
            if hi_v is not None and r >= hi_v:
                crossed.append(hi)
            if crossed:
                merge_idx = col
                parent = min(crossed)
                break
            if self.line_bridge and self.bridge_allowed():
                hit = self._line_bridge_check(seed, col, r_prev, r, lo, lo_v, hi, hi_v)
                if hit is not None:
                    merge_idx, parent = col, hit
                    break
            own.append(r)
            r_prev = r

        return Line(lid=-1, start_idx=i0, start_h=first, own=np.asarray(own),
                    merge_idx=merge_idx, parent=parent, seed=seed, fallback=fallback)

    def _commit(self, ln: Line) -> int:
        lid = len(self.lines)
        ln.lid = lid
        self.lines.append(ln)
        for k, val in enumerate(ln.own):
            c = ln.start_idx + k
            p = bisect_right(self.col_values[c], val)
            self.col_values[c].insert(p, float(val))
            self.col_lines[c].insert(p, lid)
        if ln.merge_idx is not None:
            self.merge_records.append((lid, ln.merge_idx, ln.parent))
            self._register_member(ln.parent, ln.merge_idx, ln.start_idx)
        return lid

    def bridge_allowed(self) -> bool:
        return self.line_bridge

    def _line_bridge_check(self, seed, col, r_prev, r, lo, lo_v, hi, hi_v):
        # difference of two independent paths has variance 2v while both are
        # free; near the barrier this is an upper-biased approximation
        rng = rng_for(seed if seed is not None else 0, _BRIDGE_TAG, col)
        two_vdx = 2.0 * self.v * self.barrier.grid.dx
        if lo is not None:
            lo_prev = self.value_at(lo, col - 1)
            p = math.exp(-2.0 * (r_prev - lo_prev) * (r - lo_v) / two_vdx)
            if rng.random() < p:
                return lo
        if hi is not None:
            hi_prev = self.value_at(hi, col - 1)
            p = math.exp(-2.0 * (hi_prev - r_prev) * (hi_v - r) / two_vdx)
            if rng.random() < p:
                return hi
        return None

    def _register_member(self, parent: int, omega: int, member_start: int):
        # record the new member's start column on every root its trajectory
        # passes through from the merge column onward
        ln = self.lines[parent]
        col = omega
        while True:
            while ln.merge_idx is not None and col >= ln.merge_idx:
                ln = self.lines[ln.parent]
            ln.member_events.append((col, member_start))
            if ln.merge_idx is None:
                return
            col = ln.merge_idx
            ln = self.lines[ln.parent]

    def family(self) -> "CoalescingFamily":
        return CoalescingFamily(self)


@dataclass
class CoalescingFamily:
    """Finished family; thin façade over the builder's line table."""

    builder: FamilyBuilder

    @property
    def barrier(self) -> Barrier:
        return self.builder.barrier

    @property
    def lines(self) -> list:
        return self.builder.lines

    @property
    def merge_records(self) -> list:
        return self.builder.merge_records

    @property
    def tail_sharing(self) -> dict:
        return {lid: ln.parent for lid, ln in enumerate(self.lines)
                if ln is not None and ln.parent is not None}

    def value_at(self, lid: int, col: int) -> float:
        return self.builder.value_at(lid, col)

    def values_of(self, lid: int, col_from: int, col_to: int) -> np.ndarray:
        """Resolved values of one line over [col_from, col_to], tail-shared."""
        out = np.empty(col_to - col_from + 1)
        ln = self.builder.root_at(lid, col_from)
        c = col_from
        while c <= col_to:
            stop = col_to if ln.merge_idx is None else min(col_to, ln.merge_idx - 1)
            out[c - col_from: stop - col_from + 1] = \
                ln.own[c - ln.start_idx: stop - ln.start_idx + 1]
            c = stop + 1
            if c <= col_to:
                ln = self.builder.root_at(ln.parent, c)
        return out

    def distinct_count_at(self, col: int) -> int:
        return self.builder.distinct_count_at(col)


def build_ficrab(b: Barrier, starts: Sequence[tuple[float, float]],
                 seeds: int | Sequence[int], v: float = 1.0, *,
                 barrier_bridge: bool = False, line_bridge: bool = False
                 ) -> CoalescingFamily:
    """Independent coalescing paths from the given starts, merged inductively.

    `seeds` is either one master seed (per-path seeds are derived from it) or
    an explicit per-path sequence.  Starts at or below the barrier yield
    absent lines.
    """
    if not starts:
        raise InvalidConfig("starts must be non-empty")
    if isinstance(seeds, (int, np.integer)):
        seed_list = [mix_seed(int(seeds), j) for j in range(len(starts))]
    else:
        seed_list = list(seeds)
        if len(seed_list) != len(starts):
            raise InvalidConfig("need one seed per start")
    fb = FamilyBuilder(b, v, barrier_bridge=barrier_bridge, line_bridge=line_bridge)
    for (x, h), s in zip(starts, seed_list):
        i0 = b.grid.index_of(x)
        if h <= b.lam[i0]:
            fb.add_undefined()
        else:
            fb.add_rab(x, h, s)
    return fb.family()


def coalesce_paths(b: Barrier, entries: Sequence[tuple[int, Sequence[float]]],
                   v: float = 1.0) -> CoalescingFamily:
    """Family from explicit raw paths (start column, values); test support."""
    fb = FamilyBuilder(b, v)
    for start_idx, values in entries:
        fb.add_path(start_idx, values)
    return fb.family()
