"""Brownian path sampling on uniform time grids.

Increments are Gaussian with variance dt per coordinate (standard Brownian
normalization, which makes the free-theory identity E[e^{i P.b(t)}] =
e^{-t |P|^2 / 2} exact).  Randomness comes from counter-based Philox streams
keyed by ``(seed, stream_id)``: path ``stream_id`` is reproducible on its own,
independent of chunking, worker count, or how many other paths are drawn.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "BrownianPath",
    "PathGrid",
    "refine_midpoints",
    "sample_increments",
    "sample_path",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class PathGrid:
    """Uniform grid 0 = s_0 < s_1 < ... < s_n = t_end."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")

    @property
    def dt(self):
        return self.t_end / self.n_steps

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def index_of(self, s, tol=1e-9):
        """Grid index of time ``s``; raises if s is not (nearly) on the grid."""
        idx = int(round(s / self.dt))
        if idx < 0 or idx > self.n_steps or abs(s - idx * self.dt) > tol * max(self.t_end, 1.0):
            raise ValueError(f"time {s} is not on the grid (dt = {self.dt})")
        return idx


@dataclass
class BrownianPath:
    """One sampled path: increments of shape (n_steps, d), b(0) = 0."""

    grid: PathGrid
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != self.grid.n_steps:
            raise ValueError("increments must have shape (n_steps, d)")
        self.increments = inc

    @property
    def d(self):
        return self.increments.shape[1]

    @cached_property
    def positions(self):
        """(n_steps + 1, d) array of b(s_k), starting at the origin."""
        pos = np.empty((self.grid.n_steps + 1, self.d))
        pos[0] = 0.0
        np.cumsum(self.increments, axis=0, out=pos[1:])
        return pos

    def antithetic(self):
        """The sign-flipped path -b, an exact measure-preserving involution."""
        return BrownianPath(self.grid, -self.increments)


def _generator(seed, stream_id):
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be nonnegative integers")
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_path(grid, stream_id, seed, d=3):
    """Sample the path of substream ``stream_id`` under master ``seed``."""
    rng = _generator(seed, stream_id)
    inc = rng.standard_normal((grid.n_steps, d)) * np.sqrt(grid.dt)
    return BrownianPath(grid, inc)


def sample_increments(grid, stream_ids, seed, d=3):
    """Stacked increments (len(stream_ids), n_steps, d) of many substreams.

    Row i equals ``sample_path(grid, stream_ids[i], seed).increments``
    exactly; batching is a convenience, not a different stream layout.
    """
    out = np.empty((len(stream_ids), grid.n_steps, d))
    scale = np.sqrt(grid.dt)
    for row, sid in enumerate(stream_ids):
        rng = _generator(seed, int(sid))
        out[row] = rng.standard_normal((grid.n_steps, d))
    out *= scale
    return out


def refine_midpoints(path, seed):
    """Brownian-bridge refinement: insert conditionally sampled midpoints.

    Returns a path on the doubled grid whose endpoint values at the original
    times coincide with the input path.  Given an increment D over a step of
    length dt, the first half-step is D/2 + N(0, dt/4).  Used by the action
    convergence diagnostics (seed-coupled refinement keeps the coarse path
    fixed while resolving finer time structure).
    """
    grid = path.grid
    rng = _generator(seed, 0)
    n, d = path.increments.shape
    noise = rng.standard_normal((n, d)) * np.sqrt(grid.dt / 4.0)
    first = 0.5 * path.increments + noise
    second = path.increments - first
    inc = np.empty((2 * n, d))
    inc[0::2] = first
    inc[1::2] = second
    return BrownianPath(PathGrid(grid.t_end, 2 * n), inc)
