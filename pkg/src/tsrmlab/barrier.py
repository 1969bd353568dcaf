"""Barrier construction, sampling, file I/O, and regularity checks.

A barrier is a continuous function lambda sampled on a grid together with a
switch abscissa chi: paths reflect on lambda left of chi and are absorbed by
it right of chi. chi may be +/-inf as a sentinel for a pure-reflect or
pure-absorb window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Grid, mix_seed, rng_for, sample_bm
from .errors import ChiOutsideWindow, InvalidConfig, MalformedKnots

PURE_REFLECT = math.inf
PURE_ABSORB = -math.inf


@dataclass(frozen=True)
class Barrier:
    grid: Grid
    lam: np.ndarray = field(repr=False)
    chi: float
    family_tag: str = "file"

    def __post_init__(self):
        if len(self.lam) != self.grid.n:
            raise InvalidConfig(
                f"barrier needs exactly {self.grid.n} values, got {len(self.lam)}"
            )
        if not np.all(np.isfinite(self.lam)):
            raise InvalidConfig("barrier values must be finite")

    def value_at(self, x: float) -> float:
        """Linear interpolation between grid nodes; exact at nodes."""
        return float(np.interp(x, self.grid.xs(), self.lam))

    @property
    def chi_index(self) -> int:
        """First grid index at or right of chi (n if chi is past the window)."""
        return self.grid.first_index_at_or_right_of(self.chi)

    def require_chi_inside(self):
        if not (self.grid.x0 <= self.chi <= self.grid.x_end):
            raise ChiOutsideWindow(f"chi={self.chi} outside window")


def make_flat(grid: Grid, c: float, chi: float) -> Barrier:
    return Barrier(grid=grid, lam=np.full(grid.n, float(c)), chi=chi, family_tag="flat")


def make_affine(grid: Grid, intercept: float, slope: float, chi: float) -> Barrier:
    lam = intercept + slope * grid.xs()
    return Barrier(grid=grid, lam=lam, chi=chi, family_tag="affine")


def make_brownian(grid: Grid, v_b: float, anchor: float, chi: float, seed: int,
                  anchor_value: float = 0.0) -> Barrier:
    """Two-sided Brownian barrier with lambda(anchor) = anchor_value.

    Implemented by sampling from the left edge and recentering at the anchor;
    increments on either side of the anchor stay independent Gaussians.
    """
    if not (v_b > 0):
        raise InvalidConfig(f"barrier variance must be positive, got {v_b}")
    if not (grid.x0 <= anchor <= grid.x_end):
        raise InvalidConfig(f"anchor {anchor} outside window")
    w = sample_bm(grid, v_b, 0.0, mix_seed(seed, 0xB4)).values
    at_anchor = float(np.interp(anchor, grid.xs(), w))
    return Barrier(grid=grid, lam=w - at_anchor + anchor_value, chi=chi,
                   family_tag="brownian")


def make_cusp(grid: Grid, chi: float = 0.0) -> Barrier:
    """lambda(t) = -|t|^(1/3), extended symmetrically to t < 0."""
    if not (grid.x0 <= 0.0 <= grid.x_end):
        raise InvalidConfig("cusp barrier needs 0 inside the window")
    lam = -np.abs(grid.xs()) ** (1.0 / 3.0)
    return Barrier(grid=grid, lam=lam, chi=chi, family_tag="cusp")


def make_piecewise_linear(grid: Grid, knots: Sequence[tuple[float, float]],
                          chi: float) -> Barrier:
    xs = [k[0] for k in knots]
    if len(knots) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
        raise MalformedKnots("knots must be strictly increasing in x, with >= 2 entries")
    if xs[0] > grid.x0 or xs[-1] < grid.x_end:
        raise MalformedKnots(
            f"knots [{xs[0]}, {xs[-1]}] do not cover window [{grid.x0}, {grid.x_end}]"
        )
    lam = np.interp(grid.xs(), xs, [k[1] for k in knots])
    return Barrier(grid=grid, lam=lam, chi=chi, family_tag="piecewise_linear")


def lipschitz_constant(knots: Sequence[tuple[float, float]]) -> float:
    return max(abs((y2 - y1) / (x2 - x1)) for (x1, y1), (x2, y2) in zip(knots, knots[1:]))


@dataclass(frozen=True)
class NiceVerdict:
    nice: bool
    failed_eps: float | None  # smallest eps with no witness, when not nice
    witnesses: dict  # eps -> witness x (or None)


def is_nice_numeric(b: Barrier, eps_list: Sequence[float]) -> NiceVerdict:
    """Numeric check of the left-of-chi regularity condition.

    For each eps it scans grid points x in [chi - eps, chi) for a witness with
    lam(x) - lam(chi) > -sqrt(chi - x); the barrier is reported nice iff every
    eps has one. A sufficient test at grid resolution, not a proof.
    """
    b.require_chi_inside()
    if not eps_list or any(e <= 0 for e in eps_list):
        raise InvalidConfig("eps_list must be non-empty and positive")
    lam_chi = b.value_at(b.chi)
    xs = b.grid.xs()
    witnesses: dict = {}
    failed = None
    for eps in sorted(eps_list):
        if b.chi - eps < b.grid.x0 - 1e-12:
            raise InvalidConfig(f"eps={eps} reaches left of the window")
        sel = (xs >= b.chi - eps) & (xs < b.chi)
        gap = b.lam[sel] - lam_chi + np.sqrt(b.chi - xs[sel])
        hit = np.nonzero(gap > 0)[0]
        if hit.size:
            witnesses[eps] = float(xs[sel][hit[0]])
        else:
            witnesses[eps] = None
            if failed is None:
                failed = eps
    return NiceVerdict(nice=failed is None, failed_eps=failed, witnesses=witnesses)


@dataclass(frozen=True)
class GoodEstimate:
    hit_prob_right: float
    hit_prob_left: float
    window_halfwidths: tuple
    hit_right_per_window: tuple
    hit_left_per_window: tuple
    verdict: str  # "good-consistent" | "not-good-consistent"


def is_good_numeric(b: Barrier, trials: int, horizon_growth: float, seed: int,
                    start_clearance: float = 0.05, v: float = 1.0,
                    hit_level: float = 0.99) -> GoodEstimate:
    """Monte Carlo check that a Brownian path started just above the barrier
    hits it on both sides of the grid centre.

    Runs one two-sided path per trial and reads off first-hit distances; hit
    fractions are reported on a geometric ladder of sub-windows so escape
    plateaus (a non-good barrier) are visible. Only a plateau is observable:
    the verdict is "good-consistent" when both sides hit with frequency at
    least hit_level on the largest window.
    """
    if trials < 1:
        raise InvalidConfig("trials must be >= 1")
    if horizon_growth <= 1:
        raise InvalidConfig("horizon_growth must exceed 1")
    g = b.grid
    ic = (g.n - 1) // 2
    half = min(ic, g.n - 1 - ic) * g.dx
    widths = [half]
    while widths[-1] / horizon_growth > 8 * g.dx:
        widths.append(widths[-1] / horizon_growth)
    widths = widths[::-1]

    h0 = float(b.lam[ic]) + start_clearance
    sd = math.sqrt(v * g.dx)
    dist_r = np.empty(trials)
    dist_l = np.empty(trials)
    for t in range(trials):
        rng = rng_for(seed, t)
        steps = rng.standard_normal(g.n - 1) * sd
        w = np.empty(g.n)
        w[ic] = h0
        np.cumsum(steps[ic:], out=w[ic + 1:])
        w[ic + 1:] += h0
        np.cumsum(steps[:ic][::-1], out=w[:ic])
        w[:ic] = h0 - w[:ic][::-1]
        below = w <= b.lam
        right = np.nonzero(below[ic:])[0]
        left = np.nonzero(below[:ic + 1][::-1])[0]
        dist_r[t] = right[0] * g.dx if right.size else math.inf
        dist_l[t] = left[0] * g.dx if left.size else math.inf

    hr = tuple(float(np.mean(dist_r <= wd)) for wd in widths)
    hl = tuple(float(np.mean(dist_l <= wd)) for wd in widths)
    ok = hr[-1] >= hit_level and hl[-1] >= hit_level
    return GoodEstimate(
        hit_prob_right=hr[-1], hit_prob_left=hl[-1],
        window_halfwidths=tuple(widths),
        hit_right_per_window=hr, hit_left_per_window=hl,
        verdict="good-consistent" if ok else "not-good-consistent",
    )


def save_barrier(path, b: Barrier, v: float):
    """Plain-text barrier file: header `x0 dx n chi v`, then n lambda values."""
    with open(path, "w") as f:
        f.write(f"{b.grid.x0:.17g} {b.grid.dx:.17g} {b.grid.n} {b.chi:.17g} {v:.17g}\n")
        f.write(" ".join(f"{val:.17g}" for val in b.lam))
        f.write("\n")


def load_barrier(path) -> tuple[Barrier, float]:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 5:
            raise InvalidConfig(f"barrier file header needs 5 fields, got {len(header)}")
        x0, dx, n, chi, v = (float(header[0]), float(header[1]), int(header[2]),
                             float(header[3]), float(header[4]))
        vals = np.array([float(tok) for tok in f.read().split()])
    if len(vals) != n:
        raise InvalidConfig(f"barrier file promises {n} values, has {len(vals)}")
    return Barrier(grid=Grid(x0, dx, n), lam=vals, chi=chi, family_tag="file"), v
