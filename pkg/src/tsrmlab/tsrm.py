"""Area functional over line envelopes, its inversion into the self-repelling
motion, local times, and the occupation / profile-identity checks.

The envelope ("bubble") through (x, h) stitches the forward line right of x
to the backward line left of x.  Its area above the barrier is the clock
T(x, h): strictly increasing in h, inverted by bisection.  The moving point
at time t is the column whose h-bracket pins t the tightest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, NotClosedInWindow, TimeOutOfRange, UndefinedStart
from .lines import Skeleton, _fallback_line, _resolved_absorption, _top_qualifying, \
    backward_profile


@dataclass
class BubbleProfile:
    start: tuple[float, float]
    start_col: int
    left_col: int
    right_col: int
    values: np.ndarray = field(repr=False)  # columns [left_col, right_col]
    area: float
    left_closed: bool
    right_closed: bool
    used_fallback: bool

    def value(self, col: int) -> float:
        """Profile value at any grid column (barrier outside the support)."""
        if self.left_col <= col <= self.right_col:
            return float(self.values[col - self.left_col])
        raise IndexError(col)


def profile_area(dx: float, values: np.ndarray, lam: np.ndarray) -> float:
    """Trapezoid area between a profile and the barrier, zero-extended at the
    ends (exact for profiles that sit on the barrier at both ends)."""
    f = np.asarray(values) - np.asarray(lam)
    if len(f) == 0:
        return 0.0
    # zero-extension adds one trapezoid cell of half-weight at each end, which
    # restores exactly the half-weights the interior formula removes
    return float(dx * np.sum(f))


def _forward_until_absorbed(s: Skeleton, ix: int, h: float):
    """Resolved forward values from (column ix, h) up to absorption (or the
    window edge).  Returns (values, last_col, right_closed, used_fallback)."""
    b = s.builder
    n = s.grid.n
    top = _top_qualifying(s, ix, h)
    if top is not None:
        stop = _resolved_absorption(s, top, ix)
        used_fallback = False
        last = stop if stop is not None else n - 1
        vals = np.empty(last - ix + 1)
        vals[0] = h
        c = ix + 1
        ln = b.root_at(top.lid, c) if c <= last else top
        while c <= last:
            seg_end = last if ln.merge_idx is None else min(last, ln.merge_idx - 1)
            vals[c - ix: seg_end - ix + 1] = ln.own[c - ln.start_idx: seg_end - ln.start_idx + 1]
            c = seg_end + 1
            if c <= last:
                ln = b.root_at(ln.parent, c)
        return vals, last, stop is not None, used_fallback
    probe = _fallback_line(s, ix, h)
    stop = probe.absorbed_idx
    if stop is None and probe.merge_idx is not None:
        stop = _resolved_absorption(s, b.lines[probe.parent], probe.merge_idx)
    last = stop if stop is not None else n - 1
    vals = np.empty(last - ix + 1)
    vals[0] = h
    for c in range(ix + 1, last + 1):
        vals[c - ix] = b.probe_value_at(probe, c)
    return vals, last, stop is not None, True


def bubble(s: Skeleton, x: float, h: float, *, require_closed: bool = True
           ) -> BubbleProfile:
    """Stitched forward/backward envelope through (x, h) with its area."""
    ix = s.grid.index_of(x)
    if h <= s.barrier.lam[ix]:
        raise UndefinedStart(f"h={h} at or below barrier at x={x}")
    fwd, right_col, right_closed, used_fallback = _forward_until_absorbed(s, ix, h)
    back, left_col, left_closed = backward_profile(s, x, h)
    values = np.concatenate([back, fwd])
    area = profile_area(s.grid.dx, values,
                        s.barrier.lam[left_col: right_col + 1])
    prof = BubbleProfile(start=(x, h), start_col=ix, left_col=left_col,
                         right_col=right_col, values=values, area=area,
                         left_closed=left_closed, right_closed=right_closed,
                         used_fallback=used_fallback)
    if require_closed and not (left_closed and right_closed):
        raise NotClosedInWindow(
            f"envelope from ({x}, {h}) open (left_closed={left_closed}, "
            f"right_closed={right_closed}); enlarge the window or check the barrier"
        )
    return prof


def area(s: Skeleton, x: float, h: float) -> float:
    """T(x, h): cached envelope area above the barrier."""
    ix = s.grid.index_of(x)
    key = (ix, h)
    hit = s.area_cache.get(key)
    if hit is None:
        hit = bubble(s, s.grid.x(ix), h).area
        s.area_cache[key] = hit
    return hit


@dataclass
class TPlusResult:
    value: float
    spread: float
    etas: tuple
    areas: tuple


def t_plus(s: Skeleton, x: float, h: float, eta_list=None) -> TPlusResult:
    """Right limit of T(x, .) at h, by linear extrapolation over small eta.

    The spread (largest minus smallest evaluated area) exposes a jump of
    T(x, .) at h when one exists.
    """
    ix = s.grid.index_of(x)
    if h < s.barrier.lam[ix]:
        raise UndefinedStart(f"h={h} below barrier at x={x}")
    if eta_list is None:
        base = 2.0 ** (-s.m - 2)
        eta_list = (4 * base, 2 * base, base)
    etas = tuple(sorted(eta_list, reverse=True))
    if etas[-1] <= 0:
        raise InvalidConfig("eta values must be positive")
    areas = tuple(area(s, x, h + e) for e in etas)
    slope, intercept = np.polyfit(etas, areas, 1) if len(etas) > 1 else (0.0, areas[0])
    return TPlusResult(value=float(intercept), spread=float(max(areas) - min(areas)),
                       etas=etas, areas=areas)


def local_time(s: Skeleton, t: float, x: float, h_tol: float | None = None,
               bracket: tuple[float, float] | None = None) -> float:
    """sup{h above the barrier with T(x, h) < t}, by bisection; the barrier
    value when no height qualifies."""
    if t < 0:
        raise InvalidConfig("t must be >= 0")
    ix = s.grid.index_of(x)
    lam_x = float(s.barrier.lam[ix])
    if h_tol is None:
        h_tol = 2.0 ** (-s.m - 2)
    if t == 0 or area(s, x, lam_x + h_tol) >= t:
        return lam_x
    lo = lam_x + h_tol
    hi = None
    if bracket is not None:
        blo, bhi = max(bracket[0], lo), bracket[1]
        if bhi > blo and area(s, x, bhi) >= t:
            hi = bhi
            if area(s, x, blo) < t:
                lo = blo
    if hi is None:
        hi = lo + 2.0 ** (-s.m)
        top = s.h_window[1] + 2.0
        while area(s, x, hi) < t:
            hi = lam_x + 2.0 * (hi - lam_x)
            if hi > top:
                raise TimeOutOfRange(
                    f"t={t} exceeds the largest closed envelope area at x={x}")
    while hi - lo > h_tol:
        mid = 0.5 * (lo + hi)
        if area(s, x, mid) < t:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class InvertResult:
    x: float
    h: float
    residual: float
    col: int
    bracket_gap: float


def _column_bracket(s: Skeleton, t: float, col: int, h_tol: float,
                    guess: tuple[float, float] | None):
    """(h_lo, h_hi, T_lo, T_hi) with T(h_lo) < t <= T(h_hi), width <= h_tol;
    None when even the smallest envelope at this column is open in-window."""
    x = s.grid.x(col)
    lam_x = float(s.barrier.lam[col])
    lo = lam_x + h_tol
    try:
        t_first = area(s, x, lo)
    except NotClosedInWindow:
        return None
    if t_first >= t:
        return lam_x, lo, 0.0, t_first
    try:
        hi = None
        if guess is not None:
            glo, ghi = max(guess[0], lo), guess[1]
            if ghi > glo and area(s, x, ghi) >= t:
                hi = ghi
                if area(s, x, glo) < t:
                    lo = glo
        if hi is None:
            hi = lo + 2.0 ** (-s.m)
            top = s.h_window[1] + 2.0
            while area(s, x, hi) < t:
                hi = lam_x + 2.0 * (hi - lam_x)
                if hi > top:
                    raise TimeOutOfRange(f"t={t} out of range at column {col}")
        while hi - lo > h_tol:
            mid = 0.5 * (lo + hi)
            if area(s, x, mid) < t:
                lo = mid
            else:
                hi = mid
        t_lo = area(s, x, lo) if lo > lam_x else 0.0
        return lo, hi, t_lo, area(s, x, hi)
    except NotClosedInWindow:
        return None


def invert_time(s: Skeleton, t: float, *, coarse_stride: int | None = None,
                h_tol: float | None = None) -> InvertResult:
    """Locate the unique point whose envelope area equals t.

    Coarse-to-fine column scan; per column, bisection in h brackets t using
    the monotonicity of T(x, .); the winning column is the one whose area
    bracket is tightest, and the residual reports |T(X, H) - t|.
    Ties go to the smaller |x|, then the smaller x.
    """
    if t < 0:
        raise InvalidConfig("t must be >= 0")
    g = s.grid
    if h_tol is None:
        h_tol = 2.0 ** (-s.m - 2)
    if coarse_stride is None:
        coarse_stride = max(1, g.n // 48)
    lo_col, hi_col = s.edge_margin, g.n - 1 - s.edge_margin

    def scan(cols):
        best = None
        guess = None
        for col in cols:
            br = _column_bracket(s, t, col, h_tol, guess)
            if br is None:
                guess = None
                continue
            h_lo, h_hi, t_lo, t_hi = br
            guess = (h_lo - 4 * h_tol, h_hi + 4 * h_tol)
            gap = t_hi - t_lo
            x = g.x(col)
            key = (gap, abs(x), x)
            if best is None or key < best[0]:
                best = (key, col, h_lo, t_lo)
        return best

    cols = list(range(lo_col, hi_col + 1, coarse_stride))
    best = scan(cols)
    if best is None:
        raise TimeOutOfRange(f"no column brackets t={t}; enlarge the window")
    if coarse_stride > 1:
        col0 = best[1]
        fine = range(max(lo_col, col0 - coarse_stride),
                     min(hi_col, col0 + coarse_stride) + 1)
        fine_best = scan(fine)
        if fine_best is not None:
            best = min(best, fine_best)
    _key, col, h_lo, t_lo = best
    h = h_lo if h_lo > s.barrier.lam[col] else float(s.barrier.lam[col])
    residual = abs(t - t_lo)
    return InvertResult(x=g.x(col), h=h, residual=residual, col=col,
                        bracket_gap=_key[0])


@dataclass
class TsrmSample:
    times: np.ndarray
    X: np.ndarray
    H: np.ndarray
    residuals: np.ndarray
    max_step: float
    local_time_snapshots: dict | None = None


def tsrm_path(s: Skeleton, t_grid, *, snapshots: bool = False,
              coarse_stride: int | None = None) -> TsrmSample:
    """Invert the area clock on each time of an increasing grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise InvalidConfig("t_grid must be strictly increasing")
    xs, hs, res = [], [], []
    snaps = {} if snapshots else None
    for t in t_grid:
        r = invert_time(s, float(t), coarse_stride=coarse_stride)
        xs.append(r.x)
        hs.append(r.h)
        res.append(r.residual)
        if snapshots:
            cols = np.arange(s.edge_margin, s.grid.n - s.edge_margin)
            prof = local_time_profile(s, float(t), cols)
            snaps[float(t)] = (s.grid.x0 + cols * s.grid.dx, prof)
    xs = np.asarray(xs)
    max_step = float(np.max(np.abs(np.diff(xs)))) if len(xs) > 1 else 0.0
    return TsrmSample(times=t_grid, X=xs, H=np.asarray(hs),
                      residuals=np.asarray(res), max_step=max_step,
                      local_time_snapshots=snaps)


def local_time_profile(s: Skeleton, t: float, cols) -> np.ndarray:
    """Local-time heights over the given columns, warm-starting each bisection
    from its left neighbour."""
    out = np.empty(len(cols))
    prev = None
    pad = 8.0 * 2.0 ** (-s.m)
    for k, col in enumerate(cols):
        x = s.grid.x(int(col))
        br = (prev - pad, prev + pad) if prev is not None else None
        val = local_time(s, t, x, bracket=br)
        out[k] = val
        prev = val if val > s.barrier.lam[int(col)] else None
    return out


def ray_knight_check(s: Skeleton, x: float, h: float, *, stride: int = 1,
                     margin_cols: int = 16) -> float:
    """Max |local-time profile - envelope profile| at t = T(x, h).

    The profile identity pins the local times at the area time of an envelope
    to the envelope itself; both sides here live on the same skeleton, so the
    discrepancy measures grid and refinement error only.
    """
    prof = bubble(s, x, h)
    t = prof.area
    lo = max(s.edge_margin, prof.left_col - margin_cols)
    hi = min(s.grid.n - 1 - s.edge_margin, prof.right_col + margin_cols)
    cols = range(lo, hi + 1, max(1, stride))
    lam = s.barrier.lam
    worst = 0.0
    prev = None
    pad = 8.0 * 2.0 ** (-s.m)
    for col in cols:
        ref = prof.value(col) if prof.left_col <= col <= prof.right_col else float(lam[col])
        br = (prev - pad, prev + pad) if prev is not None else None
        lt = local_time(s, t, s.grid.x(col), bracket=br)
        worst = max(worst, abs(lt - ref))
        prev = lt if lt > lam[col] else None
    return worst


def occupation_check(s: Skeleton, t: float, interval: tuple[float, float],
                     *, n_time: int = 200, coarse_stride: int | None = None
                     ) -> tuple[float, float]:
    """(time the motion spends in the interval, integral of local-time height
    over it); the two sides agree in the limit of fine grids."""
    a, bb = interval
    if not (a < bb):
        raise InvalidConfig("interval must have positive length")
    g = s.grid
    if not (g.x0 <= a and bb <= g.x_end):
        raise InvalidConfig("interval must lie inside the window")
    dt = t / n_time
    lhs = 0.0
    for k in range(n_time):
        r = invert_time(s, (k + 0.5) * dt, coarse_stride=coarse_stride)
        if a <= r.x <= bb:
            lhs += dt
    ca, cb = g.index_of(a), g.index_of(bb)
    cols = np.arange(ca, cb + 1)
    prof = local_time_profile(s, t, cols)
    f = prof - s.barrier.lam[ca: cb + 1]
    rhs = float(g.dx * (np.sum(f) - 0.5 * f[0] - 0.5 * f[-1]))
    return lhs, rhs
