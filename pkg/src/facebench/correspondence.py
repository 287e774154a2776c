"""Chamfer (nearest-neighbour) correspondence with duplicate-match diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .mesh import Mesh

_K_CANDIDATES = 4


def _points(m) -> np.ndarray:
    return m.vertices if isinstance(m, Mesh) else np.asarray(m, dtype=np.float64).reshape(-1, 3)


class SpatialIndex:
    """Exact nearest-neighbour queries; equidistant candidates resolve to the lowest index.

    The kd-tree only proposes candidates. Distances are re-scored here in one
    fixed arithmetic so the tie rule does not depend on tree traversal order.
    """

    def __init__(self, points):
        pts = np.ascontiguousarray(_points(points), dtype=np.float64)
        if len(pts) == 0:
            raise DataError("cannot index an empty point set")
        self.points = pts
        self.points.setflags(write=False)
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def query(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Return (indices, distances) of the nearest indexed point for each row of ``q``."""
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        k = min(_K_CANDIDATES, len(self.points))
        _, cand = self._tree.query(q, k=k)
        cand = cand.reshape(len(q), k)
        d2 = ((self.points[cand] - q[:, None, :]) ** 2).sum(-1)
        best = d2.min(axis=1)
        # lowest index among candidates attaining the minimum
        masked = np.where(d2 == best[:, None], cand, np.iinfo(np.int64).max)
        idx = masked.min(axis=1)
        # every candidate tied: more equidistant points may lie outside the k candidates
        full = (d2 == best[:, None]).all(axis=1) & (k < len(self.points))
        for row in np.flatnonzero(full):
            r = np.sqrt(best[row])
            near = np.asarray(self._tree.query_ball_point(q[row], r * (1 + 1e-9) + 1e-300), dtype=np.int64)
            dd = ((self.points[near] - q[row]) ** 2).sum(-1)
            idx[row] = near[dd == dd.min()].min()
            best[row] = dd.min()
        return idx, np.sqrt(best)

    def query_k(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k nearest neighbours (no tie guarantee beyond the tree's own order)."""
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        d, i = self._tree.query(q, k=k)
        return i.reshape(len(q), k), d.reshape(len(q), k)


def build_index(g) -> SpatialIndex:
    return SpatialIndex(g)


@dataclass(frozen=True, eq=False)
class Correspondence:
    matched_indices: np.ndarray
    matched_points: np.ndarray

    def __len__(self):
        return len(self.matched_indices)


@dataclass(frozen=True)
class DuplicateStats:
    duplicate_count: int
    duplicate_rate: float


def chamfer_match(r, index: SpatialIndex) -> Correspondence:
    """Match every vertex of ``r`` to its nearest point in the indexed set."""
    idx, _ = index.query(_points(r))
    return Correspondence(idx, index.points[idx])


def duplicate_stats(c: Correspondence, n: int | None = None) -> DuplicateStats:
    """Count R vertices whose match was already claimed by another vertex."""
    n = len(c.matched_indices) if n is None else int(n)
    if n == 0:
        return DuplicateStats(0, 0.0)
    count = n - len(np.unique(c.matched_indices))
    return DuplicateStats(int(count), count / n)
