"""Execution of one estimator on one (R, G) pair.

Stage order is fixed: crop -> rigid -> warp -> correspond -> distance -> correct.
The warped mesh only drives correspondence; distances are always taken from
the rigidly aligned reconstruction.
"""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..correspondence import build_index, chamfer_match, duplicate_stats
from ..errors import FacebenchError, StageError
from ..mesh import LandmarkSet, Mesh, PerVertexError
from ..metrics import corrected_error, etc_correction, etc_weights, p2p, p2tri
from ..registration import NOSE_TIP_ID, apply_transform, crop_mesh, icp, rlr
from ..warp import elr_warp, run_plugin
from .config import EstimatorSpec

_DISTANCES = {"P2P": p2p, "P2Tri": p2tri}


@dataclass
class SubjectResult:
    subject: str
    estimator: str
    method: str
    values: np.ndarray
    mean: float
    duplicate_rate: float
    timings: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)


@dataclass
class PipelineTrace:
    """Intermediate meshes, kept only when instrumentation is requested."""

    aligned: Optional[Mesh] = None
    warped: Optional[Mesh] = None
    distance_input: Optional[Mesh] = None
    g_used: Optional[Mesh] = None
    matched_indices: Optional[np.ndarray] = None


def _common_ids(a: LandmarkSet, b: LandmarkSet) -> list:
    other = set(b.ids)
    return [i for i in a.ids if i in other]


def run_estimator(spec: EstimatorSpec, r: Mesh, g: Mesh, r_lmks: LandmarkSet, g_lmks: LandmarkSet,
                  subject: str = "", method: str = "", mask=None,
                  trace: PipelineTrace | None = None) -> SubjectResult:
    """Run ``spec`` on one subject. ``r_lmks`` must carry on-mesh vertex indices for ELR."""
    timings: dict[str, float] = {}
    stages: list[str] = []

    @contextmanager
    def stage(name):
        t0 = time.perf_counter()
        try:
            yield
        except FacebenchError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(name, subject, exc) from exc
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise StageError(name, subject, exc) from exc
        timings[name] = (time.perf_counter() - t0) * 1e3
        stages.append(name)

    g_used = g
    if spec.crops:
        with stage("Crop"):
            g_used, _ = crop_mesh(g, g_lmks.point(NOSE_TIP_ID), spec.crop_radius)

    index = None
    if spec.rigid == "RLR":
        with stage("RLR"):
            t = rlr(r_lmks.subset(spec.rlr_landmark_ids), g_lmks.subset(spec.rlr_landmark_ids),
                    spec.with_scale)
    else:
        with stage("ICP-with-RLR-init"):
            t0 = rlr(r_lmks.subset(spec.rlr_landmark_ids), g_lmks.subset(spec.rlr_landmark_ids),
                     spec.with_scale)
            index = build_index(g_used)
            t = icp(r, g_used, t0, spec.icp, index)
    aligned = apply_transform(r, t)

    warped = aligned
    if spec.warp_stages:
        ids = _common_ids(r_lmks, g_lmks)
        src = r_lmks.subset(ids)
        tgt = g_lmks.subset(ids)
        for w in spec.warp_stages:
            with stage(w):
                moved = LandmarkSet(warped.vertices[src.on_mesh_indices], src.ids, src.on_mesh_indices)
                if w == "ELR":
                    warped = elr_warp(warped, moved, tgt)
                else:
                    warped = run_plugin(w, warped, g_used, moved, tgt)

    with stage("Chamfer"):
        index = index or build_index(g_used)
        corr = chamfer_match(warped, index)
    dup = duplicate_stats(corr, aligned.n_vertices)

    dist_fn = _DISTANCES[spec.distance]
    with stage(spec.distance):
        err = dist_fn(aligned, corr.matched_points)

    if spec.correction == "ETC":
        with stage("ETC"):
            w = etc_weights(corr.matched_points, g_lmks)
            fld = etc_correction(aligned, corr.matched_points, w)
            if spec.distance == "P2P":
                err = corrected_error(aligned, corr.matched_points, fld, spec.etc_sign)
            else:
                err = dist_fn(aligned, corr.matched_points + spec.etc_sign * fld.delta)

    if trace is not None:
        trace.aligned, trace.warped, trace.g_used = aligned, warped, g_used
        trace.distance_input = aligned
        trace.matched_indices = corr.matched_indices
    values = err.values.astype(np.float32)
    mean = PerVertexError(values, mask).mean
    return SubjectResult(subject, spec.name, method, values, mean, dup.duplicate_rate, timings, stages)
