"""Elastic landmark registration (ELR) and the registry for external warps.

ELR moves every vertex by a distance-weighted blend of per-landmark motion
vectors chosen so that the mesh's landmark vertices land exactly on the
target landmarks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .correspondence import SpatialIndex
from .errors import ConfigError, DataError, NumericalError
from .mesh import LandmarkSet, Mesh

RCOND_MIN = 1e-12

WarpFn = Callable[[Mesh, Mesh, LandmarkSet, LandmarkSet], Mesh]

_PLUGINS: dict[str, WarpFn] = {}
BUILTIN_WARPS = ("none", "ELR")


@dataclass(frozen=True, eq=False)
class ElrSystem:
    A: np.ndarray                    # (N, L) magnitude coefficients
    A_tilde: np.ndarray              # (L, L) rows of A at the landmark vertices
    E: Optional[np.ndarray] = None   # (L, 3) landmark displacements
    U: Optional[np.ndarray] = None   # (L, 3) solved motion vectors


def elr_coefficients(r: Mesh, lmk_vertex_indices) -> ElrSystem:
    """alpha[k, i] = 1 - |r_k - r_li| / max_j |r_j - r_li|."""
    idx = np.asarray(lmk_vertex_indices, dtype=np.int64).reshape(-1)
    v = r.vertices
    if len(idx) == 0 or idx.min() < 0 or idx.max() >= len(v):
        raise DataError("landmark vertex index out of range")
    dist = cdist(v, v[idx])
    far = dist.max(axis=0)
    if (far <= 0).any():
        raise NumericalError("zero-diameter mesh: every vertex coincides with a landmark")
    a = 1.0 - dist / far
    np.clip(a, 0.0, 1.0, out=a)
    return ElrSystem(a, a[idx])


def snap_to_vertices(r: Mesh, points: np.ndarray) -> np.ndarray:
    """Indices of the R vertices nearest to ``points``."""
    idx, _ = SpatialIndex(r.vertices).query(points)
    return idx


def _source_indices(r: Mesh, src):
    if isinstance(src, LandmarkSet):
        if src.on_mesh_indices is not None:
            return src.on_mesh_indices, src.ids
        return snap_to_vertices(r, src.points), src.ids
    return np.asarray(src, dtype=np.int64).reshape(-1), None


def elr_solve(r: Mesh, src, target_lmks: LandmarkSet) -> ElrSystem:
    """Build and solve the landmark system; ``src`` is a LandmarkSet on R or a vertex-index list.

    When ``src`` is a plain index list its order must match ``target_lmks``.
    """
    idx, ids = _source_indices(r, src)
    target = target_lmks
    if ids is not None:
        if set(ids) != set(target_lmks.ids):
            raise DataError(f"landmark id mismatch: {sorted(ids)} vs {sorted(target_lmks.ids)}")
        target = target_lmks.subset(ids)
    elif len(idx) != len(target_lmks):
        raise DataError(f"{len(idx)} source landmarks for {len(target_lmks)} targets")
    if len(np.unique(idx)) != len(idx):
        raise NumericalError("two landmarks share one mesh vertex; the landmark system is singular")
    sys = elr_coefficients(r, idx)
    cond = np.linalg.cond(sys.A_tilde)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_MIN:
        raise NumericalError(f"landmark system is ill-conditioned (cond={cond:.3g})")
    e = target.points - r.vertices[idx]
    u = np.linalg.solve(sys.A_tilde, e)
    return ElrSystem(sys.A, sys.A_tilde, e, u)


def elr_warp(r: Mesh, lmk_vertex_indices, target_lmks: LandmarkSet) -> Mesh:
    """R' = R + A U with A_tilde U = E."""
    sys = elr_solve(r, lmk_vertex_indices, target_lmks)
    return r.with_vertices(r.vertices + sys.A @ sys.U)


# ---------------------------------------------------------------------------
# plug-ins


def register_warp_plugin(name: str, fn: WarpFn) -> None:
    if not name or "+" in name or name in BUILTIN_WARPS:
        raise ConfigError(f"invalid warp plugin name {name!r}")
    if name in _PLUGINS:
        raise ConfigError(f"warp plugin {name!r} already registered")
    if not callable(fn):
        raise ConfigError(f"warp plugin {name!r} is not callable")
    _PLUGINS[name] = fn


def unregister_warp_plugin(name: str) -> None:
    _PLUGINS.pop(name, None)


def get_warp_plugin(name: str) -> WarpFn:
    try:
        return _PLUGINS[name]
    except KeyError:
        raise ConfigError(f"warp plugin {name!r} is not registered") from None


def registered_plugins() -> dict[str, WarpFn]:
    return dict(_PLUGINS)


def run_plugin(name: str, r: Mesh, g: Mesh, r_lmks: LandmarkSet, g_lmks: LandmarkSet) -> Mesh:
    out = get_warp_plugin(name)(r, g, r_lmks, g_lmks)
    if not isinstance(out, Mesh):
        out = Mesh(np.asarray(out), r.faces, r.label)
    if out.n_vertices != r.n_vertices:
        raise DataError(f"warp plugin {name!r} returned {out.n_vertices} vertices, expected {r.n_vertices}")
    return out
