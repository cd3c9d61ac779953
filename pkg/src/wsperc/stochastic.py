"""Reproducible random sampling: counter-based streams, Brownian paths, Poisson clouds.

Streams are built on Philox (counter-based, 64-bit keys), so identical
(seed, stream_id) pairs reproduce identical output on every platform.
Stream ids are derived by hashing index tuples, which lets parallel trials
draw independent randomness without coordination.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import Aabb, as_point

_M64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def stream_id_for(*indices: int) -> int:
    """Collapse an index tuple (trial, entity, purpose...) into a 64-bit stream id."""
    h = 0x243F6A8885A308D3
    for ix in indices:
        h = _splitmix64(h ^ _splitmix64(int(ix) & _M64))
    return h


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream; owned by exactly one worker."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _M64, self.stream_id & _M64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *indices: int) -> "RngStream":
        return RngStream(self.seed, stream_id_for(self.stream_id, *indices))


def derive_stream(seed: int, *indices: int) -> RngStream:
    return RngStream(seed, stream_id_for(*indices))


@dataclass(frozen=True)
class BrownianPath:
    """Discretised Brownian trajectory: positions on the grid 0, delta, 2*delta, ..., t.

    The final step may be shorter than ``step`` when the horizon is not a
    multiple of it; ``times`` always carries the actual grid.
    """

    start: np.ndarray
    step: float
    positions: np.ndarray
    horizon: float
    times: np.ndarray = field(default=None)

    def __post_init__(self):
        start = as_point(self.start)
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != start.shape[0]:
            raise ConfigurationError("positions must be (n, d)")
        if not np.array_equal(pos[0], start):
            raise ConfigurationError("positions[0] must equal start")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "positions", pos)
        if self.times is None:
            object.__setattr__(self, "times", _grid_times(self.horizon, self.step))
        else:
            object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        if self.times.shape[0] != pos.shape[0]:
            raise ConfigurationError("times/positions length mismatch")

    @property
    def dim(self) -> int:
        return self.start.shape[0]

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]


def _grid_times(t: float, delta: float) -> np.ndarray:
    k = int(np.floor(t / delta + 1e-9))
    rem = t - k * delta
    times = np.arange(k + 1, dtype=np.float64) * delta
    if rem > 1e-12 * max(t, 1.0):
        times = np.concatenate([times, [t]])
    return times


def sample_brownian(rng: RngStream, start, t: float, delta: float) -> BrownianPath:
    """Brownian path from ``start`` to horizon ``t`` at step ``delta``.

    Increments are i.i.d. centred Gaussians with per-coordinate variance
    ``delta`` (the last one ``t - floor(t/delta)*delta`` when nonzero).
    """
    if not (t > 0) or not (delta > 0):
        raise ConfigurationError("t and delta must be positive")
    start = as_point(start)
    d = start.shape[0]
    times = _grid_times(t, delta)
    g = rng.generator()
    steps = np.diff(times)
    incr = g.standard_normal((len(steps), d)) * np.sqrt(steps)[:, None]
    pos = np.empty((len(times), d), dtype=np.float64)
    pos[0] = start
    np.cumsum(incr, axis=0, out=pos[1:])
    pos[1:] += start
    return BrownianPath(start=start, step=delta, positions=pos, horizon=t, times=times)


def constant_path(start, t: float, delta: float) -> BrownianPath:
    """Frozen fixture: every position equals ``start`` (zero increments)."""
    start = as_point(start)
    times = _grid_times(t, delta)
    pos = np.tile(start, (len(times), 1))
    return BrownianPath(start=start, step=delta, positions=pos, horizon=t, times=times)


def refine_bridge(path: BrownianPath, levels: int, rng: RngStream) -> BrownianPath:
    """Halve every step ``levels`` times by Brownian-bridge midpoint insertion.

    Midpoints are Gaussian around the segment midpoint with per-coordinate
    variance (step length)/4, which leaves the marginal law of the original
    grid points unchanged.
    """
    if levels < 0:
        raise ConfigurationError("levels must be >= 0")
    if levels == 0:
        return path
    g = rng.generator()
    pos = path.positions
    times = path.times
    for _ in range(levels):
        dt = np.diff(times)
        mids = 0.5 * (pos[:-1] + pos[1:]) + g.standard_normal(pos[:-1].shape) * (
            0.5 * np.sqrt(dt)[:, None]
        )
        new_pos = np.empty((2 * len(pos) - 1, pos.shape[1]), dtype=np.float64)
        new_pos[0::2] = pos
        new_pos[1::2] = mids
        new_times = np.empty(2 * len(times) - 1, dtype=np.float64)
        new_times[0::2] = times
        new_times[1::2] = 0.5 * (times[:-1] + times[1:])
        pos, times = new_pos, new_times
    return BrownianPath(
        start=path.start,
        step=path.step / 2**levels,
        positions=pos,
        horizon=path.horizon,
        times=times,
    )


@dataclass(frozen=True)
class PoissonCloud:
    """Homogeneous Poisson point sample inside a box."""

    box: Aabb
    intensity: float
    points: np.ndarray

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def sample_poisson_cloud(rng: RngStream, box: Aabb, lam: float) -> PoissonCloud:
    """Poisson(lam * vol(box)) many i.i.d. uniform points in ``box``."""
    if not (lam > 0):
        raise ConfigurationError("intensity must be positive")
    g = rng.generator()
    vol = box.volume()
    n = int(g.poisson(lam * vol)) if vol > 0 else 0
    d = box.dim
    if n > 0:
        u = g.random((n, d))
        pts = box.lo + u * (box.hi - box.lo)
    else:
        pts = np.empty((0, d), dtype=np.float64)
    return PoissonCloud(box=box, intensity=lam, points=pts)
