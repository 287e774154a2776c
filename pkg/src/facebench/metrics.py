"""Per-vertex distances (P2P, P2Tri) and the topology-consistency correction (ETC).

ETC works one axis at a time: vertices are sorted by their reconstructed
coordinate, and the matched ground-truth coordinates are nudged so that the
gaps between consecutive sorted entries follow the reconstruction's gaps.
Each axis is a tridiagonal SPD system solved with a banded Cholesky factor.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.spatial.distance import cdist

from .correspondence import SpatialIndex
from .errors import DataError, NumericalError
from .mesh import LandmarkSet, Mesh, PerVertexError

W_FLOOR = 1e-6
OUTER_EYE_IDS = (19, 28)
RESIDUAL_TOL = 1e-8


def _pts(x) -> np.ndarray:
    return x.vertices if isinstance(x, Mesh) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _check_rows(r, g):
    if len(r) != len(g):
        raise DataError(f"row count mismatch: {len(r)} vs {len(g)}")


def p2p(r, g_hat) -> PerVertexError:
    r, g = _pts(r), _pts(g_hat)
    _check_rows(r, g)
    return PerVertexError(np.sqrt(((r - g) ** 2).sum(axis=1)))


# ---------------------------------------------------------------------------
# point-to-triangle


def _seg_dist2(p, a, b):
    ab = b - a
    den = (ab * ab).sum(-1)
    t = np.divide(((p - a) * ab).sum(-1), den, out=np.zeros_like(den), where=den > 0)
    t = np.clip(t, 0.0, 1.0)
    d = p - (a + t[:, None] * ab)
    return (d * d).sum(-1)


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    """Exact distance from each row of ``p`` to triangle (a, b, c), row-wise.

    Closest point is either the plane projection (when it falls inside) or on
    one of the three edges. Degenerate triangles skip the interior test, so
    collinear triples reduce to segments and repeated points to a point.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64).reshape(-1, 3) for x in (p, a, b, c))
    d2 = np.minimum(np.minimum(_seg_dist2(p, a, b), _seg_dist2(p, b, c)), _seg_dist2(p, c, a))
    e0, e1 = b - a, c - a
    n = np.cross(e0, e1)
    nn = (n * n).sum(-1)
    scale = (e0 * e0).sum(-1) * (e1 * e1).sum(-1)
    ok = nn > 1e-24 * scale
    w = p - a
    safe = np.where(ok, nn, 1.0)
    lc = (np.cross(e0, w) * n).sum(-1) / safe
    lb = (np.cross(w, e1) * n).sum(-1) / safe
    inside = ok & (lb >= 0) & (lc >= 0) & (lb + lc <= 1)
    plane2 = (w * n).sum(-1) ** 2 / safe
    d2 = np.where(inside, np.minimum(d2, plane2), d2)
    return np.sqrt(d2)


def p2tri(r, g_hat) -> PerVertexError:
    """Distance from r_i to the triangle spanned by its 3 nearest distinct points of G-hat."""
    r, g = _pts(r), _pts(g_hat)
    _check_rows(r, g)
    uniq = np.unique(g, axis=0)
    if len(uniq) < 3:
        raise DataError(f"P2Tri needs at least 3 distinct matched points, got {len(uniq)}")
    nn, _ = SpatialIndex(uniq).query_k(r, 3)
    tri = uniq[nn]
    d = point_triangle_distance(r, tri[:, 0], tri[:, 1], tri[:, 2])
    # the triangle holds a point no farther than g_hat_i; clamp round-off
    return PerVertexError(np.minimum(d, p2p(r, g).values))


# ---------------------------------------------------------------------------
# ETC


@dataclass(frozen=True, eq=False)
class EtcWeights:
    w: np.ndarray
    d_iod: float
    h1: np.ndarray
    h2: np.ndarray


def interocular_distance(lmks: LandmarkSet, eye_ids=OUTER_EYE_IDS) -> float:
    """Outer-eye-corner distance, or the largest pairwise landmark distance when absent."""
    if all(i in lmks.ids for i in eye_ids):
        d = float(np.linalg.norm(lmks.point(eye_ids[0]) - lmks.point(eye_ids[1])))
    else:
        p = lmks.points
        d = float(cdist(p, p).max())
    if not d > 0:
        raise DataError("inter-ocular distance is zero")
    return d


def etc_weights(g_hat, g_lmks: LandmarkSet, d_iod: float | None = None,
                floor: float = W_FLOOR, eye_ids=OUTER_EYE_IDS) -> EtcWeights:
    """w_i = (h1_i + h2_i - min_j h2_j) / (2 d_iod), floored at ``floor``.

    h1 is the distance to the closest landmark, h2 the mean landmark distance.
    """
    g = _pts(g_hat)
    pts = g_lmks.points
    if len(pts) < 2:
        raise DataError("ETC weights need at least 2 landmarks")
    d_iod = interocular_distance(g_lmks, eye_ids) if d_iod is None else float(d_iod)
    dist = cdist(g, pts)
    h1 = dist.min(axis=1)
    h2 = dist.mean(axis=1)
    w = (h1 + h2 - h2.min()) / (2.0 * d_iod)
    return EtcWeights(np.maximum(w, floor), d_iod, h1, h2)


def forward_difference(n: int) -> sp.csr_matrix:
    """(n-1) x n matrix with rows e_i - e_{i+1}."""
    return sp.diags([np.ones(n - 1), -np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _dtd_mul(x: np.ndarray) -> np.ndarray:
    """D^T D x without forming D."""
    dx = x[:-1] - x[1:]
    out = np.empty_like(x)
    out[0] = dx[0]
    out[1:-1] = dx[1:] - dx[:-1]
    out[-1] = -dx[-1]
    return out


@dataclass(frozen=True, eq=False)
class EtcAxisSystem:
    permutation: np.ndarray   # sorted position -> original row
    epsilon: np.ndarray       # sorted r - sorted g
    w2: np.ndarray            # squared weights in sorted order
    delta: np.ndarray         # solved correction in sorted order

    @cached_property
    def D(self) -> sp.csr_matrix:
        return forward_difference(len(self.epsilon))

    @cached_property
    def Q(self) -> sp.csr_matrix:
        return (self.D.T @ self.D + sp.diags(self.w2)).tocsr()

    @property
    def rhs(self) -> np.ndarray:
        return _dtd_mul(self.epsilon)

    def unpermuted(self) -> np.ndarray:
        out = np.empty_like(self.delta)
        out[self.permutation] = self.delta
        return out


def _q_mul(x, w2):
    return _dtd_mul(x) + w2 * x


def solve_etc_axis(r_col: np.ndarray, g_col: np.ndarray, w: np.ndarray) -> EtcAxisSystem:
    """Minimise 0.5 d^T Q d - eps^T D^T D d for one axis (Q = D^T D + diag(w^2))."""
    n = len(r_col)
    if n < 2:
        raise DataError("ETC needs at least 2 vertices")
    perm = np.argsort(r_col, kind="stable")
    eps = r_col[perm] - g_col[perm]
    w2 = (w * w)[perm]
    rhs = _dtd_mul(eps)
    ab = np.empty((2, n))
    ab[0, 0] = 0.0
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0 + w2
    ab[1, 0] -= 1.0
    ab[1, -1] -= 1.0
    try:
        chol = cholesky_banded(ab, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorisation of Q failed: {exc}") from None
    delta = cho_solve_banded((chol, False), rhs, check_finite=False)
    bnorm = np.linalg.norm(rhs)
    res = _q_mul(delta, w2) - rhs
    if np.linalg.norm(res) >= RESIDUAL_TOL * bnorm and bnorm > 0:
        delta -= cho_solve_banded((chol, False), res, check_finite=False)
        res = _q_mul(delta, w2) - rhs
        if np.linalg.norm(res) >= RESIDUAL_TOL * bnorm:
            raise NumericalError("ETC solve residual above tolerance")
    return EtcAxisSystem(perm, eps, w2, delta)


@dataclass(frozen=True, eq=False)
class CorrectionField:
    delta: np.ndarray                 # (N, 3) offsets in original row order
    axes: tuple = ()                  # EtcAxisSystem per axis

    def __len__(self):
        return len(self.delta)


def etc_correction(r, g_hat, w) -> CorrectionField:
    """Per-axis corrections assembled back into original vertex order."""
    r, g = _pts(r), _pts(g_hat)
    _check_rows(r, g)
    weights = w.w if isinstance(w, EtcWeights) else np.asarray(w, dtype=np.float64)
    if len(weights) != len(r) or not (weights > 0).all():
        raise DataError("ETC weights must be positive, one per vertex")
    rt, gt = np.ascontiguousarray(r.T), np.ascontiguousarray(g.T)
    axes = tuple(solve_etc_axis(rt[a], gt[a], weights) for a in range(3))
    delta = np.column_stack([s.unpermuted() for s in axes])
    if not np.isfinite(delta).all():
        raise NumericalError("non-finite ETC correction")
    return CorrectionField(delta, axes)


def corrected_error(r, g_hat, field: CorrectionField, sign: int = 1) -> PerVertexError:
    """|r_i - (g_hat_i + sign * delta_i)|; ``sign=-1`` applies the offset with the opposite sign."""
    r, g = _pts(r), _pts(g_hat)
    _check_rows(r, g)
    if len(field) != len(r):
        raise DataError(f"correction has {len(field)} rows, mesh has {len(r)}")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return p2p(r, g + sign * field.delta)
