"""Mesh cropping and rigid (similarity) registration by landmarks or ICP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correspondence import SpatialIndex, build_index
from .errors import DataError, NumericalError
from .mesh import LandmarkSet, Mesh

DEFAULT_CROP_RADIUS = 100.0
NOSE_TIP_ID = 13  # crop centre
_DEGENERATE_RATIO = 1e-10


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise NumericalError(f"scale must be positive, got {self.scale}")
        if np.abs(rot.T @ rot - np.eye(3)).max() >= 1e-9 or np.linalg.det(rot) <= 0:
            raise NumericalError("rotation is not a proper orthonormal matrix")
        rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points) @ self.rotation.T) + self.translation

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def compose(self, first: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equivalent to applying ``first`` and then ``self``."""
        return SimilarityTransform(
            self.scale * first.scale,
            self.rotation @ first.rotation,
            self.scale * self.rotation @ first.translation + self.translation,
        )

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    rel_tolerance: float = 1e-6
    subsample: int | None = None
    with_scale: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be > 0")
        if self.subsample is not None and self.subsample < 3:
            raise ValueError("subsample must keep at least 3 points")


@dataclass(frozen=True, eq=False)
class IcpResult:
    transform: SimilarityTransform
    rms_history: list
    iterations: int
    converged: bool


def crop_mesh(g: Mesh, center, radius: float) -> tuple[Mesh, np.ndarray]:
    """Keep vertices within ``radius`` of ``center``.

    Returns the cropped mesh and an old->new index array (-1 for dropped vertices).
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    if not np.isfinite(center).all():
        raise ValueError("crop centre must be finite")
    keep = np.linalg.norm(g.vertices - center, axis=1) <= radius
    n_keep = int(keep.sum())
    if n_keep < 3:
        raise DataError(f"crop radius {radius} leaves {n_keep} vertices")
    old_to_new = np.full(g.n_vertices, -1, dtype=np.int64)
    old_to_new[keep] = np.arange(n_keep)
    faces = None
    if g.faces is not None:
        fk = keep[g.faces].all(axis=1)
        faces = old_to_new[g.faces[fk]]
    return Mesh(g.vertices[keep], faces, g.label), old_to_new


def fit_similarity(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity (or rigid) transform taking ``src`` rows onto ``dst`` rows.

    SVD of the cross-covariance of the centred sets; the last singular
    direction is flipped when needed so the result is a proper rotation.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DataError(f"point sets must be matching (n, 3) arrays, got {src.shape} and {dst.shape}")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0 or sv[1] <= _DEGENERATE_RATIO * sv[0]:
        raise NumericalError("source points are collinear or coincident; rotation is underdetermined")
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= _DEGENERATE_RATIO * max(d[0], 1e-300):
        raise NumericalError("degenerate correspondence; rotation is underdetermined")
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rot = (u * s) @ vt
    scale = 1.0
    if with_scale:
        scale = float((d * s).sum() / (xs ** 2).sum(axis=1).mean())
        if not scale > 0:
            raise NumericalError("non-positive similarity scale")
    t = mu_d - scale * rot @ mu_s
    return SimilarityTransform(scale, rot, t)


def rlr(src_lmks: LandmarkSet, dst_lmks: LandmarkSet, with_scale: bool = True) -> SimilarityTransform:
    """Landmark-based similarity registration, matching landmarks by id."""
    if set(src_lmks.ids) != set(dst_lmks.ids):
        raise DataError(f"landmark id mismatch: {sorted(src_lmks.ids)} vs {sorted(dst_lmks.ids)}")
    dst = dst_lmks.subset(src_lmks.ids)
    return fit_similarity(src_lmks.points, dst.points, with_scale)


def apply_transform(m: Mesh, t: SimilarityTransform) -> Mesh:
    return m.with_vertices(t.apply(m.vertices))


def _subsample(n: int, count: int | None) -> np.ndarray:
    if count is None or count >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, count).round().astype(np.int64))


def run_icp(r: Mesh, g: Mesh, init: SimilarityTransform | None = None,
            params: IcpParams = IcpParams(), index: SpatialIndex | None = None) -> IcpResult:
    """Point-to-point ICP with closed-form similarity updates.

    ``rms_history[k]`` is the RMS nearest-neighbour distance at the k-th
    iterate; the last entry belongs to the returned transform.
    """
    if g.n_vertices < 3:
        raise DataError("ICP target needs at least 3 points")
    init = init or SimilarityTransform.identity()
    index = index or build_index(g)
    src = r.vertices[_subsample(r.n_vertices, params.subsample)]

    def match(t):
        nn, d = index.query(t.apply(src))
        return nn, float(np.sqrt(np.mean(d ** 2)))

    t = init
    nn, rms = match(t)
    history = [rms]
    converged = False
    it = 0
    while it < params.max_iterations:
        it += 1
        if len(np.unique(nn)) < 3:
            raise NumericalError("ICP correspondences collapsed to fewer than 3 distinct points")
        candidate = fit_similarity(src, index.points[nn], params.with_scale)
        nn_new, rms_new = match(candidate)
        if rms_new > rms:
            # guard the monotone guarantee against round-off
            converged = True
            break
        improvement = rms - rms_new
        t, nn, rms = candidate, nn_new, rms_new
        history.append(rms)
        if rms == 0.0 or improvement <= params.rel_tolerance * history[-2]:
            converged = True
            break
    return IcpResult(t, history, it, converged)


def icp(r: Mesh, g: Mesh, init: SimilarityTransform | None = None,
        params: IcpParams = IcpParams(), index: SpatialIndex | None = None) -> SimilarityTransform:
    return run_icp(r, g, init, params, index).transform
