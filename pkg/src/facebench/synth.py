"""Procedural face-like corpora with exactly known (topology-identical) ground truth.

A subject is a ground-truth mesh ``g_true`` sharing its template topology with
one or more simulated reconstructions ``r``; the true error is therefore the
plain per-vertex distance. The "scan" ``g_scan`` given to estimators is a
re-meshed, noisy, partially dropped copy of ``g_true`` with its own topology.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError
from .mesh import LandmarkSet, Mesh, PerVertexError, save_landmarks, save_mesh
from .registration import NOSE_TIP_ID

# (id, u, v) in the template's parametric square [-1, 1]^2
TEMPLATE_LANDMARKS = (
    (2, -0.40, 0.52),
    (7, 0.40, 0.52),
    (13, 0.0, -0.05),
    (19, -0.56, 0.30),
    (22, -0.20, 0.30),
    (25, 0.20, 0.30),
    (28, 0.56, 0.30),
    (31, -0.30, -0.50),
    (34, 0.0, -0.42),
    (37, 0.30, -0.50),
    (40, 0.0, -0.62),
)

TOPOLOGY = "SYNTH"


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    n_subjects: int = 100
    deform_amplitude: float = 2.0
    noise_sigma: float = 0.15
    dropout_rate: float = 0.3
    identity_amplitude: float = 5.0
    landmark_sigma: float = 0.0

    def __post_init__(self):
        if self.deform_amplitude < 0 or self.noise_sigma < 0 or self.identity_amplitude < 0:
            raise ValueError("amplitudes and noise must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.landmark_sigma < 0:
            raise ValueError("landmark_sigma must be non-negative")


@dataclass(frozen=True, eq=False)
class Template:
    mesh: Mesh
    landmark_indices: np.ndarray
    landmark_ids: tuple
    inner_mask: np.ndarray

    @property
    def crop_name(self) -> str:
        return f"p{self.mesh.n_vertices}"

    def landmarks(self, mesh: Mesh | None = None) -> LandmarkSet:
        return LandmarkSet.from_mesh(mesh or self.mesh, self.landmark_indices, self.landmark_ids)


@dataclass(frozen=True, eq=False)
class SyntheticSubject:
    subject_id: int
    g_true: Mesh
    r: Mesh
    g_scan: Mesh
    g_lmks: LandmarkSet
    r_lmk_indices: np.ndarray
    lmk_ids: tuple = field(default=())


def _depth(u, v):
    z = 80.0 - 38.0 * u ** 2 - 22.0 * v ** 2
    z += 24.0 * np.exp(-(u ** 2 / 0.018 + (v + 0.02) ** 2 / 0.09))
    z -= 7.0 * np.exp(-((np.abs(u) - 0.38) ** 2 + (v - 0.3) ** 2) / 0.025)
    z += 4.0 * np.exp(-(u ** 2 / 0.08 + (v + 0.5) ** 2 / 0.01))
    z += 5.0 * np.exp(-((v - 0.52) ** 2) / 0.01) * np.exp(-(np.abs(u) - 0.4) ** 2 / 0.06)
    return z


def _lattice_faces(n_rows, n_cols):
    """Triangles of an offset-row lattice whose odd rows are shifted by half a column."""
    tris = []
    for i in range(n_rows - 1):
        j = np.arange(n_cols - 1)
        a, b = i * n_cols + j, i * n_cols + j + 1
        c, d = a + n_cols, b + n_cols
        if i % 2 == 0:
            tris += [np.column_stack([a, b, c]), np.column_stack([b, d, c])]
        else:
            tris += [np.column_stack([a, d, c]), np.column_stack([a, b, d])]
    return np.concatenate(tris)


def generate_template(resolution: int = 60, width: float = 150.0, height: float = 190.0) -> Template:
    """Face-like open surface, ``resolution`` vertices per row (millimetres).

    Vertices sit on a near-equilateral lattice (rows offset by half a
    column), so every face barycentre has the face's own corners as its
    three nearest vertices even where the surface is steep.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    du = 2.0 / (resolution - 1)
    n_rows = int(round(1 + (height / width) * (resolution - 1) / (np.sqrt(3) / 2)))
    rows = np.arange(n_rows)
    v = np.repeat(np.linspace(-1.0, 1.0, n_rows), resolution)
    u = (np.linspace(-1.0, 1.0, resolution)[None, :] + du * (0.5 * (rows[:, None] % 2) - 0.25)).ravel()
    verts = np.column_stack([0.5 * width * u, 0.5 * height * v, _depth(u, v)])
    faces = _lattice_faces(n_rows, resolution)
    uv = np.column_stack([u, v])
    idx = [int(np.argmin(((uv - (lu, lv)) ** 2).sum(1))) for _, lu, lv in TEMPLATE_LANDMARKS]
    if len(set(idx)) != len(idx):
        raise DataError("template resolution too coarse to separate landmarks")
    ids = tuple(i for i, _, _ in TEMPLATE_LANDMARKS)
    inner = np.flatnonzero((u / 0.72) ** 2 + (v / 0.8) ** 2 <= 1.0)
    return Template(Mesh(verts, faces, "template"), np.array(idx), ids, inner)


def template_with_vertex_count(n: int) -> Template:
    """Template trimmed to exactly ``n`` vertices (those nearest the nose tip)."""
    res = int(np.sqrt(n / 1.46))
    while True:
        t = generate_template(res)
        if t.mesh.n_vertices >= n:
            break
        res += 1
    v = t.mesh.vertices
    nose = v[t.landmark_indices[t.landmark_ids.index(NOSE_TIP_ID)]]
    d = np.linalg.norm(v[:, :2] - nose[:2], axis=1)
    keep = np.sort(np.argsort(d, kind="stable")[:n])
    old_to_new = np.full(len(v), -1)
    old_to_new[keep] = np.arange(n)
    f = t.mesh.faces
    f = old_to_new[f[(old_to_new[f] >= 0).all(1)]]
    lidx = old_to_new[t.landmark_indices]
    if (lidx < 0).any():
        raise DataError(f"vertex count {n} too small to keep all landmarks")
    inner = old_to_new[t.inner_mask]
    return Template(Mesh(v[keep], f, "template"), lidx, t.landmark_ids, inner[inner >= 0])


def _rng(seed, subject_id, stream):
    return np.random.default_rng([int(seed), int(subject_id), int(stream)])


def smooth_field(points: np.ndarray, rng: np.random.Generator, amplitude: float,
                 n_terms: int = 8, wavelength=(90.0, 240.0)) -> np.ndarray:
    """Sum of random plane-wave displacement fields rescaled to RMS ``amplitude``."""
    d = np.zeros_like(points)
    if amplitude == 0:
        return d
    for _ in range(n_terms):
        k = rng.normal(size=3)
        k *= 2 * np.pi / rng.uniform(*wavelength) / np.linalg.norm(k)
        phase = rng.uniform(0, 2 * np.pi)
        d += np.outer(np.sin(points @ k + phase), rng.normal(size=3))
    rms = np.sqrt((d ** 2).sum(1).mean())
    return d * (amplitude / rms)


def barycentric_remesh(m: Mesh) -> np.ndarray:
    """One point per face: the face barycentre."""
    if m.faces is None or not len(m.faces):
        raise DataError("barycentric re-meshing needs faces")
    return m.vertices[m.faces].mean(axis=1)


def simulate_reconstruction(g_true: Mesh, amplitude: float, rng: np.random.Generator) -> Mesh:
    return g_true.with_vertices(g_true.vertices + smooth_field(g_true.vertices, rng, amplitude))


def make_scan(g_true: Mesh, params: SynthParams, rng: np.random.Generator) -> Mesh:
    pts = barycentric_remesh(g_true)
    if params.noise_sigma:
        pts = pts + rng.normal(scale=params.noise_sigma, size=pts.shape)
    if params.dropout_rate:
        keep = rng.random(len(pts)) >= params.dropout_rate
        pts = pts[keep]
    return Mesh(pts, None, "scan")


def _ground_truth(template: Template, params: SynthParams, subject_id: int):
    rng = _rng(params.seed, subject_id, 0)
    g_true = template.mesh.with_vertices(
        template.mesh.vertices + smooth_field(template.mesh.vertices, rng, params.identity_amplitude))
    g_scan = make_scan(g_true, params, _rng(params.seed, subject_id, 1))
    lm = g_true.vertices[template.landmark_indices]
    if params.landmark_sigma:
        lm = lm + _rng(params.seed, subject_id, 2).normal(scale=params.landmark_sigma, size=lm.shape)
    return g_true, g_scan, LandmarkSet(lm, template.landmark_ids)


def generate_subject(template: Template, params: SynthParams, subject_id: int,
                     method_stream: int = 0, amplitude: float | None = None) -> SyntheticSubject:
    """Deterministic in (seed, subject_id, method_stream)."""
    g_true, g_scan, g_lmks = _ground_truth(template, params, subject_id)
    amp = params.deform_amplitude if amplitude is None else amplitude
    r = simulate_reconstruction(g_true, amp, _rng(params.seed, subject_id, 16 + method_stream))
    return SyntheticSubject(subject_id, g_true, r, g_scan, g_lmks,
                            template.landmark_indices, template.landmark_ids)


def true_error(r: Mesh, g_true: Mesh) -> PerVertexError:
    if r.n_vertices != g_true.n_vertices:
        raise DataError(f"topology mismatch: {r.n_vertices} vs {g_true.n_vertices} vertices")
    return PerVertexError(np.sqrt(((r.vertices - g_true.vertices) ** 2).sum(1)))


def subject_name(subject_id: int) -> str:
    return f"id{subject_id:04d}"


def write_corpus(data_dir, dataset: str, template: Template, params: SynthParams,
                 methods: Mapping[str, float]) -> dict:
    """Write a corpus in the benchmark directory layout.

    ``methods`` maps a method name to its deformation amplitude (mm). Returns
    a dict with the mms_info path and the method strings for an experiment file.
    """
    root = Path(data_dir) / dataset
    crop = template.crop_name
    names = list(methods)
    for sid in range(1, params.n_subjects + 1):
        name = subject_name(sid)
        g_true, g_scan, g_lmks = _ground_truth(template, params, sid)
        save_mesh(g_scan, root / "Gmeshes" / f"{name}.txt")
        save_landmarks(g_lmks, root / "Gmeshes" / f"{name}.lmks")
        save_mesh(g_true, root / "Gtrue" / TOPOLOGY / crop / f"{name}.txt")
        for k, m in enumerate(names):
            r = simulate_reconstruction(g_true, methods[m], _rng(params.seed, sid, 16 + k))
            save_mesh(r, root / "Rmeshes" / TOPOLOGY / crop / m / f"{name}.txt")
    mms = {
        "landmark_ids": list(template.landmark_ids),
        "landmark_indices": [int(i) for i in template.landmark_indices],
        "masks": {"full": list(range(template.mesh.n_vertices)),
                  "inner": [int(i) for i in template.inner_mask]},
        "faces": template.mesh.faces.tolist(),
    }
    mms_path = root / f"{TOPOLOGY}-{crop}.json"
    mms_path.write_text(json.dumps(mms, separators=(",", ":")))
    return {
        "mms_info": {f"{TOPOLOGY}/{crop}": str(mms_path)},
        "methods": [f"{TOPOLOGY}/{crop}/{m}" for m in names],
    }
