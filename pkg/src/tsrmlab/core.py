"""Uniform grids, seeded Gaussian noise, and closed-form Brownian bounds.

All randomness in the library flows through ``mix_seed``: a trial (or a
line, or a fallback query) gets its own 64-bit stream key derived from a
master seed and a counter, so results do not depend on scheduling order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig

_MASK64 = (1 << 64) - 1

# splitmix64 constants (Vigna's public-domain reference implementation).
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(state: int) -> int:
    """One splitmix64 output step for the given 64-bit state."""
    z = (state + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def mix_seed(seed: int, *counters: int) -> int:
    """Derive an order-independent stream key from a seed and counters.

    Trials keyed by ``mix_seed(seed, trial)`` can run in any order, on any
    number of threads, and still see identical noise.
    """
    state = seed & _MASK64
    for c in counters:
        state = splitmix64(state ^ (c & _MASK64))
    return state


def rng_for(seed: int, *counters: int) -> np.random.Generator:
    return np.random.default_rng(mix_seed(seed, *counters))


@dataclass(frozen=True)
class Grid:
    """Uniform abscissa lattice x_i = x0 + i*dx, i in [0, n)."""

    x0: float
    dx: float
    n: int

    def __post_init__(self):
        if not (self.dx > 0):
            raise InvalidConfig(f"grid step must be positive, got {self.dx}")
        if self.n < 2:
            raise InvalidConfig(f"grid needs at least 2 points, got {self.n}")

    def x(self, i: int) -> float:
        return self.x0 + i * self.dx

    def xs(self) -> np.ndarray:
        return self.x0 + np.arange(self.n) * self.dx

    @property
    def x_end(self) -> float:
        return self.x(self.n - 1)

    def index_of(self, x: float) -> int:
        """Nearest grid index for x; raises if x is outside the window."""
        if x < self.x0 - 0.5 * self.dx or x > self.x_end + 0.5 * self.dx:
            raise InvalidConfig(f"x={x} outside grid window [{self.x0}, {self.x_end}]")
        i = int(round((x - self.x0) / self.dx))
        return min(max(i, 0), self.n - 1)

    def first_index_at_or_right_of(self, x: float) -> int:
        """Smallest i with x_i >= x, clipped to [0, n]; n means 'past the end'."""
        if x == math.inf:
            return self.n
        if x == -math.inf:
            return 0
        i = math.ceil((x - self.x0) / self.dx - 1e-12)
        return min(max(i, 0), self.n)


@dataclass(frozen=True)
class NoisePath:
    """One sampled Brownian path W(x_i) on a grid, with its provenance.

    Increments are i.i.d. N(0, v*dx); identical (seed, grid, v, start)
    always reproduce the identical value sequence.
    """

    grid: Grid
    v: float
    seed: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (self.v > 0):
            raise InvalidConfig(f"variance must be positive, got {self.v}")


def sample_bm(grid: Grid, v: float, start_value: float, seed: int) -> NoisePath:
    """Sample a Brownian path on the grid, anchored at the left endpoint."""
    if not (v > 0):
        raise InvalidConfig(f"variance must be positive, got {v}")
    rng = np.random.default_rng(seed & _MASK64)
    steps = rng.standard_normal(grid.n - 1) * math.sqrt(v * grid.dx)
    values = np.empty(grid.n)
    values[0] = start_value
    np.cumsum(steps, out=values[1:])
    values[1:] += start_value
    return NoisePath(grid=grid, v=v, seed=seed & _MASK64, values=values)


def bm_fluct_upper_bound(a: float, v: float, delta_x: float) -> float:
    """Upper bound on P(some |W_y - W_{y1}| >= a over an interval of length delta_x)."""
    if not (a > 0 and v > 0 and delta_x > 0):
        raise InvalidConfig("bm_fluct_upper_bound needs a, v, delta_x > 0")
    s = 2.0 * v * delta_x
    return 2.0 * math.sqrt(s) / (a * math.sqrt(math.pi)) * math.exp(-a * a / s)


def bm_small_max_bound(a: float, v: float, delta_x: float) -> float:
    """Upper bound on P(max of W - W_{y1} over an interval of length delta_x <= a)."""
    if a < 0 or not (v > 0 and delta_x > 0):
        raise InvalidConfig("bm_small_max_bound needs a >= 0 and v, delta_x > 0")
    return 2.0 * a / math.sqrt(2.0 * math.pi * v * delta_x)


def three_bm_separation_asymptote(delta: float, eps: float, v: float) -> float:
    """Leading-order probability that three ordered Brownian motions started
    delta apart have no pairwise meeting within horizontal distance eps."""
    if delta < 0 or not (eps > 0 and v > 0):
        raise InvalidConfig("three_bm_separation_asymptote needs delta >= 0 and eps, v > 0")
    return (delta / math.sqrt(eps)) ** 3 / (2.0 * math.sqrt(math.pi * v**3))


def pair_noncoalescence_bound(dh: float, v: float, delta_x: float) -> float:
    """Upper bound on two coalescing barrier paths started dh apart staying
    strictly ordered and above the barrier after horizontal distance delta_x."""
    if dh < 0 or not (v > 0 and delta_x > 0):
        raise InvalidConfig("pair_noncoalescence_bound needs dh >= 0 and v, delta_x > 0")
    return dh / math.sqrt(math.pi * v * delta_x)


def line_count_bound(k: float, v: float, delta_x: float) -> float:
    """Upper bound on the mean number of distinct coalescing-path values a
    height window of half-extent k produces after horizontal distance delta_x."""
    if not (k > 0 and v > 0 and delta_x > 0):
        raise InvalidConfig("line_count_bound needs k, v, delta_x > 0")
    return 2.0 + 2.0 * k / math.sqrt(math.pi * v * delta_x)


def parallel_batches(fn, n_batches: int, threads: int = 1) -> list:
    """Run fn(batch_index) for each batch and return results in batch order.

    Reductions done on the returned list are deterministic for any thread
    count; fn must derive all randomness from its batch index.
    """
    if threads <= 1 or n_batches <= 1:
        return [fn(b) for b in range(n_batches)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_batches)))
