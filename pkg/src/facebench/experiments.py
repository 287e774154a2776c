"""Self-contained experiments on synthetic data (used by scripts/ and the acceptance suite)."""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bench.config import ExperimentConfig, estimator_from_dict
from .bench.pipeline import run_estimator
from .bench.runner import run_experiment
from .correspondence import build_index, chamfer_match, duplicate_stats
from .metrics import p2p, p2tri
from .synth import (SynthParams, barycentric_remesh, generate_subject, generate_template,
                    template_with_vertex_count, write_corpus)

RLR_ELR = {"name": "RLR+ELR", "rigid": "RLR", "warp": "ELR", "distance": "P2P", "correction": "none"}
RLR_ELR_ETC = {"name": "RLR+ELR+ETC", "rigid": "RLR", "warp": "ELR", "distance": "P2P", "correction": "ETC"}


# ---------------------------------------------------------------------------
# re-meshing


@dataclass
class RemeshResult:
    p2p: np.ndarray          # per-subject mean
    p2tri: np.ndarray
    mean_edge: float
    seconds: float

    @property
    def ratio(self) -> float:
        return float(self.p2p.mean() / max(self.p2tri.mean(), np.finfo(float).tiny))


def remesh_experiment(n_subjects: int = 100, resolution: int = 60, seed: int = 0) -> RemeshResult:
    """Match each face barycentre to its nearest vertex of the (noise-free) source mesh.

    The two point sets sample one surface, so any non-zero P2P is pure
    discretisation error; P2Tri should see (almost) none of it.
    """
    t0 = time.perf_counter()
    template = generate_template(resolution)
    params = SynthParams(seed=seed, n_subjects=n_subjects, noise_sigma=0.0, dropout_rate=0.0)
    a, b, edges = [], [], []
    for sid in range(1, n_subjects + 1):
        g = generate_subject(template, params, sid).g_true
        bc = barycentric_remesh(g)
        c = chamfer_match(bc, build_index(g))
        a.append(p2p(bc, c.matched_points).mean)
        b.append(p2tri(bc, c.matched_points).mean)
        edges.append(g.mean_edge_length())
    return RemeshResult(np.array(a), np.array(b), float(np.mean(edges)), time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# stage timings


def timing_experiment(n_vertices: int = 23470, repeats: int = 3, seed: int = 0) -> dict[str, float]:
    """Best-of-``repeats`` wall time (seconds) per pipeline stage on one mesh pair."""
    template = template_with_vertex_count(n_vertices)
    s = generate_subject(template, SynthParams(seed=seed, n_subjects=1), 1)
    r_lmks = template.landmarks(s.r)
    specs = [estimator_from_dict({"name": "icp", "rigid": "ICP"}),
             estimator_from_dict(dict(RLR_ELR_ETC))]
    best: dict[str, float] = {}
    for _ in range(repeats):
        for spec in specs:
            res = run_estimator(spec, s.r, s.g_scan, r_lmks, s.g_lmks)
            for k, ms in res.timings.items():
                best[k] = min(best.get(k, np.inf), ms / 1e3)
    best["n_vertices"] = s.r.n_vertices
    return best


# ---------------------------------------------------------------------------
# duplicates


@dataclass
class DuplicateRow:
    subject: int
    n: int
    distinct: int
    count: int
    rate: float


def duplicate_experiment(n_subjects: int = 10, resolution: int = 60, seed: int = 0,
                         params: SynthParams | None = None) -> list[DuplicateRow]:
    """Chamfer-match each simulated reconstruction into its scan and count shared matches."""
    template = generate_template(resolution)
    params = params or SynthParams(seed=seed, n_subjects=n_subjects)
    rows = []
    for sid in range(1, n_subjects + 1):
        s = generate_subject(template, params, sid)
        c = chamfer_match(s.r, build_index(s.g_scan))
        st = duplicate_stats(c, s.r.n_vertices)
        distinct = len(np.unique(c.matched_indices))
        rows.append(DuplicateRow(sid, s.r.n_vertices, distinct, st.duplicate_count, st.duplicate_rate))
    return rows


# ---------------------------------------------------------------------------
# correction efficacy


@dataclass
class EfficacyRow:
    seed: int
    roi_plain: float
    roi_etc: float
    r_plain: float
    r_etc: float
    true_means: list = field(default_factory=list)
    plain_means: list = field(default_factory=list)
    etc_means: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.roi_etc <= self.roi_plain and self.r_etc >= self.r_plain


DEFAULT_AMPLITUDES = (1.0, 1.25, 1.5, 1.75, 2.0)


def correction_efficacy(seeds=(0, 1, 2, 3), n_subjects: int = 20, amplitudes=DEFAULT_AMPLITUDES,
                        resolution: int = 60, workdir=None, num_processes: int = 1) -> list[EfficacyRow]:
    """RLR+ELR with and without ETC on graded simulated methods, one corpus per seed."""
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        base = Path(workdir) if workdir else Path(tmp)
        template = generate_template(resolution)
        methods = {f"a{k + 1}": float(a) for k, a in enumerate(amplitudes)}
        specs = (estimator_from_dict(dict(RLR_ELR)), estimator_from_dict(dict(RLR_ELR_ETC)))
        for seed in seeds:
            dataset = f"efficacy-s{seed}"
            info = write_corpus(base, dataset, template, SynthParams(seed=seed, n_subjects=n_subjects), methods)
            cfg = ExperimentConfig(dataset=dataset, methods=tuple(info["methods"]), estimators=specs,
                                   mms_info=info["mms_info"], out_dir=str(base / f"{dataset}-out"),
                                   top_k=len(methods))
            res = run_experiment(cfg, base, num_processes)
            plain, etc = res.metrics[specs[0].name], res.metrics[specs[1].name]
            rows.append(EfficacyRow(seed, plain.rate_of_inconsistency, etc.rate_of_inconsistency,
                                    plain.pearson_r, etc.pearson_r, plain.true_means,
                                    plain.est_means, etc.est_means))
    return rows

