"""Exact d-dimensional primitives: segments, boxes, distances, and a spatial hash grid.

Points are plain numpy float64 arrays of shape (d,).  The dimension is a
run-wide constant in {3..8}; every public function checks consistency and
raises ConfigurationError on mismatch.  All objects are immutable after
construction and safe to share across worker processes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

SUPPORTED_DIMS = range(3, 9)


def as_point(x, d: int | None = None) -> np.ndarray:
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 1:
        raise ConfigurationError(f"point must be 1-d, got shape {p.shape}")
    if d is not None and p.shape[0] != d:
        raise ConfigurationError(f"expected dimension {d}, got {p.shape[0]}")
    if not np.all(np.isfinite(p)):
        raise ConfigurationError("point has non-finite coordinates")
    return p


@dataclass(frozen=True)
class Segment:
    """Directed segment with a time stamp range [t_start, t_end]."""

    a: np.ndarray
    b: np.ndarray
    t_start: float = 0.0
    t_end: float = 0.0

    def __post_init__(self):
        a = as_point(self.a)
        b = as_point(self.b, a.shape[0])
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.t_start > self.t_end:
            raise ConfigurationError("segment with t_start > t_end")

    @property
    def dim(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box lo <= hi componentwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = as_point(self.lo)
        hi = as_point(self.hi, lo.shape[0])
        if np.any(lo > hi):
            raise ConfigurationError("Aabb with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def inflate(self, margin) -> "Aabb":
        m = np.broadcast_to(np.asarray(margin, dtype=np.float64), self.lo.shape)
        return Aabb(self.lo - m, self.hi + m)

    def intersects(self, other: "Aabb") -> bool:
        if other.dim != self.dim:
            raise ConfigurationError("Aabb dimension mismatch")
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def contains_point(self, p: np.ndarray) -> bool:
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    @staticmethod
    def of_points(points: np.ndarray) -> "Aabb":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return Aabb(pts.min(axis=0), pts.max(axis=0))


def _clamp01(x):
    return np.clip(x, 0.0, 1.0)


def segment_distance_arrays(a1, b1, a2, b2) -> np.ndarray:
    """Min distance between segments [a1,b1] and [a2,b2], broadcast over leading axes.

    Closed-form quadratic minimisation over the unit square with boundary
    cases (degenerate segments included); exact up to floating round-off.
    """
    a1 = np.asarray(a1, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    d1 = b1 - a1
    d2 = b2 - a2
    r = a1 - a2
    A = np.sum(d1 * d1, axis=-1)
    E = np.sum(d2 * d2, axis=-1)
    F = np.sum(d2 * r, axis=-1)
    C = np.sum(d1 * r, axis=-1)
    B = np.sum(d1 * d2, axis=-1)
    eps = 1e-30
    safeA = np.where(A > eps, A, 1.0)
    safeE = np.where(E > eps, E, 1.0)

    # general (non-degenerate) branch
    denom = A * E - B * B
    s_gen = np.where(denom > eps, _clamp01((B * F - C * E) / np.where(denom > eps, denom, 1.0)), 0.0)
    t_raw = (B * s_gen + F) / safeE
    s_gen = np.where(
        t_raw < 0.0,
        _clamp01(-C / safeA),
        np.where(t_raw > 1.0, _clamp01((B - C) / safeA), s_gen),
    )
    t_gen = _clamp01(t_raw)

    # degenerate branches: point-vs-segment and point-vs-point
    s = np.where(A > eps, np.where(E > eps, s_gen, _clamp01(-C / safeA)), 0.0)
    t = np.where(E > eps, np.where(A > eps, t_gen, _clamp01(F / safeE)), 0.0)
    p = a1 + s[..., None] * d1
    q = a2 + t[..., None] * d2
    return np.linalg.norm(p - q, axis=-1)


def segment_distance(s1: Segment, s2: Segment) -> float:
    """Min over (u,v) in [0,1]^2 of ||(a1 + u(b1-a1)) - (a2 + v(b2-a2))||."""
    if s1.dim != s2.dim:
        raise ConfigurationError("segment dimension mismatch")
    return float(segment_distance_arrays(s1.a, s1.b, s2.a, s2.b))


def _polyline_arrays(p: Sequence[Segment]) -> tuple[np.ndarray, np.ndarray]:
    if len(p) == 0:
        raise ConfigurationError("empty polyline")
    a = np.stack([s.a for s in p])
    b = np.stack([s.b for s in p])
    return a, b


def polyline_gap(P: np.ndarray, Q: np.ndarray, early_exit: float = 0.0) -> float:
    """Min distance between two polylines given as vertex arrays (n, d).

    Short-circuit contract: once a pair of segments below ``early_exit`` is
    found the current minimum (<= early_exit) may be returned immediately.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P.shape[1] != Q.shape[1]:
        raise ConfigurationError("polyline dimension mismatch")
    if len(P) == 1:
        P = np.vstack([P, P])
    if len(Q) == 1:
        Q = np.vstack([Q, Q])
    a2, b2 = Q[:-1], Q[1:]
    best = np.inf
    for k in range(len(P) - 1):
        dmin = segment_distance_arrays(P[k], P[k + 1], a2, b2).min()
        if dmin < best:
            best = float(dmin)
            if best <= early_exit:
                return best
    return best


def polyline_distance(p1: Sequence[Segment], p2: Sequence[Segment], early_exit: float = 0.0) -> float:
    """Min pairwise segment distance between two polylines (short-circuiting)."""
    a1, b1 = _polyline_arrays(p1)
    a2, b2 = _polyline_arrays(p2)
    if a1.shape[1] != a2.shape[1]:
        raise ConfigurationError("polyline dimension mismatch")
    best = np.inf
    for k in range(len(a1)):
        dmin = segment_distance_arrays(a1[k], b1[k], a2, b2).min()
        if dmin < best:
            best = float(dmin)
            if best <= early_exit:
                return best
    return best


@dataclass
class GridIndex:
    """Uniform spatial hash over axis-aligned boxes for broad-phase pruning.

    Every inserted item is registered in exactly the cells its box overlaps,
    so a query can never miss a true overlap (no false negatives).
    Construction is single-writer; queries are read-only afterwards.
    """

    cell_size: float
    cells: dict = field(default_factory=dict)
    boxes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.cell_size > 0):
            raise ConfigurationError("cell_size must be positive")

    def _cell_range(self, box: Aabb):
        lo = np.floor(box.lo / self.cell_size).astype(np.int64)
        hi = np.floor(box.hi / self.cell_size).astype(np.int64)
        return lo, hi

    def insert(self, item_id: int, box: Aabb) -> None:
        lo, hi = self._cell_range(box)
        self.boxes[item_id] = box
        shape = tuple(int(n) for n in (hi - lo + 1))
        for cell in np.ndindex(shape):
            key = tuple(int(lo[k]) + cell[k] for k in range(len(cell)))
            self.cells.setdefault(key, []).append(item_id)

    def candidates(self, query: Aabb) -> set:
        lo, hi = self._cell_range(query)
        out: set = set()
        shape = tuple(int(n) for n in (hi - lo + 1))
        for cell in np.ndindex(shape):
            key = tuple(int(lo[k]) + cell[k] for k in range(len(cell)))
            lst = self.cells.get(key)
            if lst:
                out.update(lst)
        return out


def build_grid(boxes: Iterable[Aabb], cell_size: float | None = None) -> GridIndex:
    """Index boxes 0..n-1; default cell size is the 90th percentile longest edge."""
    boxes = list(boxes)
    if cell_size is None:
        if not boxes:
            raise ConfigurationError("cannot derive cell size from an empty set")
        edges = [float((b.hi - b.lo).max()) for b in boxes]
        cell_size = float(np.percentile(edges, 90))
        if cell_size <= 0:
            cell_size = 1.0
    idx = GridIndex(cell_size=cell_size)
    for i, b in enumerate(boxes):
        idx.insert(i, b)
    return idx


def grid_candidates(idx: GridIndex, query: Aabb) -> set:
    """Superset of all item ids whose stored box intersects ``query``."""
    return idx.candidates(query)
