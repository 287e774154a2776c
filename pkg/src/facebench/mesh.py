"""Core geometric containers and mesh / landmark file IO.

All coordinates are millimetres. Containers are frozen and hold read-only
numpy arrays so they can be shared between threads and processes.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from plyfile import PlyData, PlyElement

from .errors import DataError, MeshFormatError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DataError(f"vertices must be (N, 3), got {v.shape}")
        if len(v) < 3:
            raise DataError(f"a mesh needs at least 3 vertices, got {len(v)}")
        bad = ~np.isfinite(v).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite coordinate at vertex {int(np.argmax(bad))}")
        object.__setattr__(self, "vertices", _readonly(v))
        if self.faces is not None:
            f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
            if len(f) and (f.min() < 0 or f.max() >= len(v)):
                raise DataError("face index out of range")
            if len(f) and ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
                raise DataError("face with repeated vertex index")
            object.__setattr__(self, "faces", _readonly(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def __len__(self):
        return len(self.vertices)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology, new positions."""
        return Mesh(vertices, self.faces, self.label)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        if self.faces is None:
            return np.empty((0, 2), dtype=np.int64)
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def mean_edge_length(self) -> float:
        e = self.edges()
        if not len(e):
            raise DataError("mesh has no faces")
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    points: np.ndarray
    ids: tuple
    on_mesh_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        ids = tuple(int(i) for i in self.ids)
        if len(ids) != len(p):
            raise DataError(f"{len(ids)} landmark ids for {len(p)} points")
        if len(p) < 3:
            raise DataError(f"fewer than 3 landmarks ({len(p)})")
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate landmark id(s) {dup}")
        if not np.isfinite(p).all():
            raise DataError("non-finite landmark coordinate")
        object.__setattr__(self, "points", _readonly(p))
        object.__setattr__(self, "ids", ids)
        if self.on_mesh_indices is not None:
            idx = np.asarray(self.on_mesh_indices, dtype=np.int64).reshape(-1)
            if len(idx) != len(ids):
                raise DataError("on_mesh_indices length differs from ids")
            object.__setattr__(self, "on_mesh_indices", _readonly(idx))

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_mesh(cls, mesh: Mesh, indices: Sequence[int], ids: Sequence[int]) -> "LandmarkSet":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.min() < 0 or idx.max() >= mesh.n_vertices:
            raise DataError("landmark vertex index out of range")
        return cls(mesh.vertices[idx], tuple(ids), idx)

    def subset(self, ids: Iterable[int]) -> "LandmarkSet":
        """Landmarks restricted to ``ids``, in the order given."""
        pos = {i: k for k, i in enumerate(self.ids)}
        ids = list(ids)
        missing = [i for i in ids if i not in pos]
        if missing:
            raise DataError(f"landmark id(s) {missing} not available")
        rows = [pos[i] for i in ids]
        idx = None if self.on_mesh_indices is None else self.on_mesh_indices[rows]
        return LandmarkSet(self.points[rows], tuple(ids), idx)

    def point(self, lid: int) -> np.ndarray:
        return self.points[self.ids.index(lid)]


@dataclass(frozen=True, eq=False)
class PerVertexError:
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if (v < 0).any() or not np.isfinite(v).all():
            raise DataError("per-vertex errors must be finite and non-negative")
        object.__setattr__(self, "values", _readonly(v))
        if self.mask is not None:
            object.__setattr__(self, "mask", VertexMask(self.mask, len(v)).indices)

    @property
    def mean(self) -> float:
        if self.mask is None:
            return float(self.values.mean())
        return float(self.values[self.mask].mean())

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class VertexMask:
    indices: np.ndarray
    n: Optional[int] = field(default=None)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if len(np.unique(idx)) != len(idx):
            raise DataError("mask indices must be unique")
        if len(idx) and idx.min() < 0:
            raise DataError("negative mask index")
        if self.n is not None and len(idx) and idx.max() >= self.n:
            raise DataError(f"mask index {int(idx.max())} >= {self.n}")
        object.__setattr__(self, "indices", _readonly(idx))

    def __len__(self):
        return len(self.indices)


# ---------------------------------------------------------------------------
# IO


def _parse_floats(tokens, path, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise MeshFormatError(f"{path}:{lineno}: cannot parse {' '.join(tokens)!r}") from None
    if not all(np.isfinite(vals)):
        raise MeshFormatError(f"{path}:{lineno}: non-finite value in row {lineno}")
    return vals


def _read_lines(path):
    try:
        with open(path, "r") as fh:
            return fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from None


def _load_txt(path):
    rows = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) != 3:
            raise MeshFormatError(f"{path}:{lineno}: expected 3 values in row {lineno}, got {len(tok)}")
        rows.append(_parse_floats(tok, path, lineno))
    return np.array(rows, dtype=np.float64).reshape(-1, 3), None


def _load_obj(path):
    verts, faces = [], []
    for lineno, line in enumerate(_read_lines(path), start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            if len(tok) < 4:
                raise MeshFormatError(f"{path}:{lineno}: vertex row needs 3 coordinates")
            verts.append(_parse_floats(tok[1:4], path, lineno))
        elif tok[0] == "f":
            try:
                idx = [int(t.split("/")[0]) for t in tok[1:]]
            except ValueError:
                raise MeshFormatError(f"{path}:{lineno}: bad face row") from None
            n = len(verts)
            idx = [i - 1 if i > 0 else n + i for i in idx]
            if any(i < 0 or i >= n for i in idx):
                raise MeshFormatError(f"{path}:{lineno}: face index out of range in row {lineno}")
            # fan-triangulate polygons
            faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    f = np.array(faces, dtype=np.int64).reshape(-1, 3) if faces else None
    return np.array(verts, dtype=np.float64).reshape(-1, 3), f


def _face_prop(face_el):
    for name in ("vertex_indices", "vertex_index"):
        if name in face_el.data.dtype.names:
            return name
    raise MeshFormatError("PLY face element has no vertex_indices property")


def _load_ply(path, scalar=None):
    try:
        ply = PlyData.read(str(path))
    except Exception as exc:  # plyfile raises a zoo of types
        raise MeshFormatError(f"cannot read {path}: {exc}") from None
    try:
        vel = ply["vertex"]
    except KeyError:
        raise MeshFormatError(f"{path}: no vertex element") from None
    v = np.column_stack([vel[c] for c in ("x", "y", "z")]).astype(np.float64)
    bad = ~np.isfinite(v).all(axis=1)
    if bad.any():
        raise MeshFormatError(f"{path}: non-finite value in vertex row {int(np.argmax(bad)) + 1}")
    faces = None
    if "face" in ply and ply["face"].count:
        fel = ply["face"]
        tri = []
        for row, poly in enumerate(fel[_face_prop(fel)], start=1):
            poly = [int(i) for i in poly]
            if any(i < 0 or i >= len(v) for i in poly):
                raise MeshFormatError(f"{path}: face index out of range in face row {row}")
            tri.extend([poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1))
        faces = np.array(tri, dtype=np.int64).reshape(-1, 3)
    extra = None
    if scalar is not None:
        if scalar not in vel.data.dtype.names:
            raise MeshFormatError(f"{path}: no per-vertex property {scalar!r}")
        extra = np.asarray(vel[scalar], dtype=np.float64)
    return v, faces, extra


def load_mesh(path) -> Mesh:
    """Read a mesh from ``.txt`` (xyz rows), ``.obj`` or ``.ply``."""
    path = Path(path)
    if not path.exists():
        raise MeshFormatError(f"no such file: {path}")
    ext = path.suffix.lower()
    if ext == ".txt":
        v, f = _load_txt(path)
    elif ext == ".obj":
        v, f = _load_obj(path)
    elif ext == ".ply":
        v, f, _ = _load_ply(path)
    else:
        raise MeshFormatError(f"unsupported mesh extension {ext!r}")
    try:
        return Mesh(v, f, label=path.stem)
    except DataError as exc:
        raise MeshFormatError(f"{path}: {exc}") from None


def _atomic_write(path, write_fn, mode="w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, mode) as fh:
        write_fn(fh)
    os.replace(tmp, path)


def save_mesh(mesh: Mesh, path) -> None:
    """Write a mesh; txt rows use 17 significant digits so float64 round-trips."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".txt":
        _atomic_write(path, lambda fh: np.savetxt(fh, mesh.vertices, fmt="%.17g"))
    elif ext == ".obj":
        def w(fh):
            np.savetxt(fh, mesh.vertices, fmt="v %.17g %.17g %.17g")
            if mesh.faces is not None:
                np.savetxt(fh, mesh.faces + 1, fmt="f %d %d %d")
        _atomic_write(path, w)
    elif ext == ".ply":
        _write_ply(path, mesh, None)
    else:
        raise MeshFormatError(f"unsupported mesh extension {ext!r}")


def _write_ply(path, mesh, scalars, name="error_mm"):
    dtype = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if scalars is not None:
        dtype.append((name, "f4"))
    vert = np.empty(mesh.n_vertices, dtype=dtype)
    vert["x"], vert["y"], vert["z"] = mesh.vertices.T
    if scalars is not None:
        vert[name] = scalars
    elements = [PlyElement.describe(vert, "vertex")]
    if mesh.faces is not None:
        face = np.empty(len(mesh.faces), dtype=[("vertex_indices", "i4", (3,))])
        face["vertex_indices"] = mesh.faces
        elements.append(PlyElement.describe(face, "face"))
    _atomic_write(path, lambda fh: PlyData(elements, text=False, byte_order="<").write(fh), mode="wb")


def save_error_mesh(mesh: Mesh, err: PerVertexError, path) -> None:
    """Binary PLY carrying a per-vertex float scalar ``error_mm``."""
    values = err.values if isinstance(err, PerVertexError) else np.asarray(err, dtype=np.float64)
    if len(values) != mesh.n_vertices:
        raise DataError(f"{len(values)} error values for a mesh with {mesh.n_vertices} vertices")
    _write_ply(path, mesh, values)


def load_error_mesh(path) -> tuple[Mesh, np.ndarray]:
    v, f, e = _load_ply(Path(path), scalar="error_mm")
    return Mesh(v, f, label=Path(path).stem), e


def load_landmarks(path) -> LandmarkSet:
    """Read ``id x y z`` rows."""
    path = Path(path)
    if not path.exists():
        raise MeshFormatError(f"no such file: {path}")
    ids, pts = [], []
    for lineno, line in enumerate(_read_lines(path), start=1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) != 4:
            raise MeshFormatError(f"{path}:{lineno}: expected 'id x y z'")
        try:
            ids.append(int(tok[0]))
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: landmark id must be an integer") from None
        pts.append(_parse_floats(tok[1:], path, lineno))
    if len(ids) < 3:
        raise MeshFormatError(f"{path}: fewer than 3 landmarks ({len(ids)})")
    try:
        return LandmarkSet(np.array(pts).reshape(-1, 3), tuple(ids))
    except DataError as exc:
        raise MeshFormatError(f"{path}: {exc}") from None


def save_landmarks(lmks: LandmarkSet, path) -> None:
    def w(fh):
        for lid, p in zip(lmks.ids, lmks.points):
            fh.write(f"{lid} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    _atomic_write(path, w)
