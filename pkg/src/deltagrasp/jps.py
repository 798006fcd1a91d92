"""Jump Point Search on a 26-connected 3-D voxel grid.

Moves may go to any free neighbor (corner cutting allowed) at Euclidean cost.
Neighbor pruning is derived from the general rule instead of hand-written
tables: with parent ``p`` and current cell ``x``, neighbor ``n`` is pruned if
some path ``p -> n`` inside the 3x3x3 block around ``x`` that avoids ``x`` is
shorter than ``p -> x -> n``, or equally long but taking the longer move
first (diagonal-first canonical order). Results are memoized per
(occupancy pattern, direction).
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class NoPath(RuntimeError):
    def __init__(self, leg: int, message: str):
        super().__init__(f"leg {leg}: {message}")
        self.leg = leg


DIRS = tuple(d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0))
_NORM = {d: float(np.sqrt(sum(c * c for c in d))) for d in DIRS}
_BIT = {d: i for i, d in enumerate(DIRS)}
_TOL = 1e-9


def _in_block(c) -> bool:
    return all(-1 <= v <= 1 for v in c)


@lru_cache(maxsize=None)
def successors(d: tuple[int, int, int] | None, mask: int) -> tuple[tuple[int, int, int], ...]:
    """Directions to explore from a cell entered along ``d``.

    ``mask`` has bit ``_BIT[e]`` set when neighbor ``e`` is blocked. ``d is
    None`` marks the start cell, which expands every free neighbor.
    """
    free = {e for e in DIRS if not mask >> _BIT[e] & 1}
    if d is None:
        return tuple(e for e in DIRS if e in free)
    p = tuple(-c for c in d)
    # shortest paths from p inside the block, avoiding the center
    dist = {p: 0.0}
    heap = [(0.0, p)]
    while heap:
        c, u = heapq.heappop(heap)
        if c > dist[u] + _TOL:
            continue
        for m in DIRS:
            v = (u[0] + m[0], u[1] + m[1], u[2] + m[2])
            if v == (0, 0, 0) or not _in_block(v) or v not in free:
                continue
            nc = c + _NORM[m]
            if nc < dist.get(v, np.inf) - _TOL:
                dist[v] = nc
                heapq.heappush(heap, (nc, v))
    out = []
    nd = _NORM[d]
    for e in DIRS:
        if e not in free or e == p:
            continue
        via = nd + _NORM[e]
        alt = dist.get(e, np.inf)
        if alt < via - _TOL:
            continue
        if abs(alt - via) <= _TOL and _canonical_alternative(p, e, via, nd, free):
            continue
        out.append(e)
    return tuple(out)


def _canonical_alternative(p, n, cost, first_norm, free) -> bool:
    """An equal-cost two-move path ``p -> n`` avoiding the center whose first move is longer."""
    for a in DIRS:
        mid = (p[0] + a[0], p[1] + a[1], p[2] + a[2])
        b = (n[0] - mid[0], n[1] - mid[1], n[2] - mid[2])
        if mid == (0, 0, 0) or not _in_block(mid) or mid not in free or b not in _NORM:
            continue
        if abs(_NORM[a] + _NORM[b] - cost) <= _TOL and _NORM[a] > first_norm + _TOL:
            return True
    return False


def natural(d: tuple[int, int, int]) -> tuple[tuple[int, int, int], ...]:
    return successors(d, 0)


@dataclass
class VoxelGrid:
    """Occupancy grid over an axis-aligned world box; ``occ[i, j, k]`` True is blocked."""

    origin: np.ndarray
    resolution: float
    occ: np.ndarray

    @classmethod
    def from_boxes(cls, lo, hi, resolution: float, boxes=(), inflate: float = 0.0) -> "VoxelGrid":
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        shape = tuple(int(np.ceil((hi[k] - lo[k]) / resolution - 1e-9)) for k in range(3))
        occ = np.zeros(shape, dtype=bool)
        centers = [lo[k] + (np.arange(shape[k]) + 0.5) * resolution for k in range(3)]
        for b_lo, b_hi in boxes:
            b_lo = np.asarray(b_lo, float) - inflate
            b_hi = np.asarray(b_hi, float) + inflate
            sel = [(centers[k] >= b_lo[k]) & (centers[k] <= b_hi[k]) for k in range(3)]
            occ[np.ix_(*sel)] = True
        return cls(lo, float(resolution), occ)

    @property
    def shape(self):
        return self.occ.shape

    def to_index(self, point) -> tuple[int, int, int]:
        idx = np.floor((np.asarray(point, float) - self.origin) / self.resolution).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise ValueError(f"point {list(point)} lies outside the grid")
        return tuple(int(v) for v in idx)

    def to_point(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, float) + 0.5) * self.resolution

    def free(self, c) -> bool:
        i, j, k = c
        sx, sy, sz = self.occ.shape
        return 0 <= i < sx and 0 <= j < sy and 0 <= k < sz and not self.occ[i, j, k]


class _Searcher:
    def __init__(self, grid: VoxelGrid):
        self.grid = grid
        # cells with at least one blocked (or out-of-grid) neighbor
        padded = np.pad(grid.occ, 1, constant_values=True)
        near = np.zeros(grid.occ.shape, dtype=bool)
        sx, sy, sz = grid.occ.shape
        for d in DIRS:
            near |= padded[1 + d[0]:1 + d[0] + sx, 1 + d[1]:1 + d[1] + sy, 1 + d[2]:1 + d[2] + sz]
        self.near = near

    def mask(self, c) -> int:
        if not self.near[c]:
            return 0
        m = 0
        for e in DIRS:
            if not self.grid.free((c[0] + e[0], c[1] + e[1], c[2] + e[2])):
                m |= 1 << _BIT[e]
        return m

    def forced(self, c, d) -> bool:
        if not self.near[c]:
            return False
        nat = natural(d)
        return any(e not in nat for e in successors(d, self.mask(c)))

    def jump(self, c, d, goal):
        free = self.grid.free
        diagonal = sum(abs(v) for v in d) > 1
        subdirs = [e for e in natural(d) if e != d] if diagonal else []
        while True:
            c = (c[0] + d[0], c[1] + d[1], c[2] + d[2])
            if not free(c):
                return None
            if c == goal or self.forced(c, d):
                return c
            for e in subdirs:
                if self.jump(c, e, goal) is not None:
                    return c

    def search(self, start, goal):
        if start == goal:
            return [start]
        g_cost = {start: 0.0}
        parent = {start: None}
        goal_arr = np.asarray(goal, float)
        counter = itertools.count()

        def h(c):
            return float(np.linalg.norm(np.asarray(c, float) - goal_arr))

        heap = [(h(start), next(counter), start, None)]
        closed = set()
        while heap:
            _, _, c, d = heapq.heappop(heap)
            if c in closed:
                continue
            closed.add(c)
            if c == goal:
                path = [c]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return path[::-1]
            for e in successors(d, self.mask(c)):
                y = self.jump(c, e, goal)
                if y is None or y in closed:
                    continue
                ng = g_cost[c] + _NORM[e] * max(abs(y[k] - c[k]) for k in range(3))
                if ng < g_cost.get(y, np.inf) - 1e-12:
                    g_cost[y] = ng
                    parent[y] = c
                    heapq.heappush(heap, (ng + h(y), next(counter), y, e))
        return None


def jps_cells(grid: VoxelGrid, start, goal) -> list[tuple[int, int, int]] | None:
    """Jump points of a shortest path between two free cells, or None."""
    if not grid.free(start) or not grid.free(goal):
        return None
    return _Searcher(grid).search(tuple(start), tuple(goal))


def path_cost(cells) -> float:
    c = np.asarray(cells, float)
    return float(np.linalg.norm(np.diff(c, axis=0), axis=1).sum()) if len(c) > 1 else 0.0


def jps_path(grid: VoxelGrid, points) -> np.ndarray:
    """World-frame polyline visiting ``points`` in order via per-leg JPS.

    Raises ``NoPath`` naming the first leg that cannot be connected.
    """
    points = [np.asarray(p, float) for p in points]
    searcher = _Searcher(grid)
    poly = [points[0]]
    for leg, (a, b) in enumerate(zip(points[:-1], points[1:])):
        ia, ib = grid.to_index(a), grid.to_index(b)
        if not grid.free(ia) or not grid.free(ib):
            raise NoPath(leg, "endpoint lies in an occupied voxel")
        cells = searcher.search(ia, ib)
        if cells is None:
            raise NoPath(leg, "no collision-free path")
        inner = [grid.to_point(c) for c in cells[1:-1]]
        poly.extend(inner)
        poly.append(b)
    out = [poly[0]]
    for p in poly[1:]:
        if np.linalg.norm(p - out[-1]) > 1e-12:
            out.append(p)
    return np.asarray(out)
