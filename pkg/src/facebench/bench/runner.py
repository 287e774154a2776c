"""Cached, parallel execution of an experiment over a benchmark data directory.

Layout::

    DATA_DIR/<dataset>/Gmeshes/idNNNN.txt, idNNNN.lmks
    DATA_DIR/<dataset>/Rmeshes/<topology>/<crop>/<method>/idNNNN.txt
    DATA_DIR/<dataset>/Gtrue/<topology>/<crop>/idNNNN.txt      (synthetic only)

One work unit is (method, estimator, subject). Each unit's per-vertex errors
are cached as little-endian float32 plus a JSON sidecar; the cache key hashes
the input file contents and the canonical estimator description.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, FacebenchError, NumericalError, StageError
from ..mesh import LandmarkSet, _atomic_write, load_landmarks, load_mesh
from ..synth import true_error
from ..warp import get_warp_plugin, register_warp_plugin, registered_plugins
from .config import EstimatorSpec, ExperimentConfig, load_mms_info
from .pipeline import run_estimator
from .scores import BenchmarkMetrics, benchmark_metrics

log = logging.getLogger(__name__)

CACHE_VERSION = 1
TRUE = "__true__"


@dataclass
class Record:
    values: np.ndarray
    duplicate_rate: float | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    data_dir: Path
    subjects: list
    records: dict = field(default_factory=dict)       # (method, estimator, subject) -> Record
    truth: dict = field(default_factory=dict)         # (method, subject) -> Record
    gaps: list = field(default_factory=list)          # (method, estimator, subject, reason)
    failures: list = field(default_factory=list)      # subset of gaps caused by numerical errors
    n_computed: int = 0
    n_cached: int = 0
    est_means: dict = field(default_factory=dict)     # estimator -> {method: mean}
    true_means: dict = field(default_factory=dict)    # method -> mean
    subject_means: dict = field(default_factory=dict)  # (method, estimator) -> {subject: mean}
    metrics: dict = field(default_factory=dict)       # estimator -> BenchmarkMetrics
    masks: dict = field(default_factory=dict)         # method -> mask indices or None

    @property
    def has_truth(self) -> bool:
        return bool(self.true_means) and len(self.true_means) == len(self.config.methods)


# ---------------------------------------------------------------------------
# paths and hashing


def dataset_root(data_dir, cfg: ExperimentConfig) -> Path:
    return Path(data_dir) / cfg.dataset


def list_subjects(root: Path) -> list[str]:
    gdir = root / "Gmeshes"
    if not gdir.is_dir():
        raise DataError(f"missing ground-truth directory {gdir}")
    return sorted(p.stem for p in gdir.glob("id*.txt"))


class _Hasher:
    def __init__(self):
        self._memo = {}

    def __call__(self, path: Path) -> str:
        path = Path(path)
        if path not in self._memo:
            self._memo[path] = hashlib.sha256(path.read_bytes()).hexdigest()
        return self._memo[path]


def _key(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _record_base(cache_dir: Path, method: str, tag: str, subject: str) -> Path:
    return cache_dir / method.replace("/", "__") / tag / subject


def read_record(base: Path, key: str) -> Record | None:
    """Cached record, or None when missing, stale or corrupt."""
    meta_p, data_p = base.with_suffix(".json"), base.with_suffix(".f32")
    try:
        meta = json.loads(meta_p.read_text())
        payload = data_p.read_bytes()
    except (OSError, ValueError):
        return None
    if meta.get("key") != key or hashlib.sha256(payload).hexdigest() != meta.get("sha256"):
        return None
    if len(payload) != 4 * meta.get("n", -1):
        return None
    return Record(np.frombuffer(payload, dtype="<f4").copy(), meta.get("duplicate_rate"))


def write_record(base: Path, key: str, values: np.ndarray, meta: dict) -> None:
    payload = np.asarray(values, dtype="<f4").tobytes()
    meta = dict(meta, key=key, n=len(values), sha256=hashlib.sha256(payload).hexdigest())
    _atomic_write(base.with_suffix(".f32"), lambda fh: fh.write(payload), mode="wb")
    _atomic_write(base.with_suffix(".json"), lambda fh: json.dump(meta, fh, sort_keys=True, indent=1))


# ---------------------------------------------------------------------------
# work units


@dataclass(frozen=True)
class Task:
    method: str
    estimator: str
    subject: str
    key: str
    base: Path
    r_path: Path
    g_path: Path | None = None
    lmk_path: Path | None = None
    gtrue_path: Path | None = None
    spec: EstimatorSpec | None = None
    lm_ids: tuple = ()
    lm_idx: tuple = ()


def _execute(task: Task):
    """Run one unit; returns (values, meta) or ('error', kind, message)."""
    try:
        r = load_mesh(task.r_path)
        if task.spec is None:
            values = true_error(r, load_mesh(task.gtrue_path)).values.astype(np.float32)
            meta = {"subject": task.subject, "method": task.method, "estimator": TRUE}
        else:
            g = load_mesh(task.g_path)
            g_lmks = load_landmarks(task.lmk_path)
            r_lmks = LandmarkSet.from_mesh(r, task.lm_idx, task.lm_ids)
            res = run_estimator(task.spec, r, g, r_lmks, g_lmks, task.subject, task.method)
            values = res.values
            meta = {"subject": task.subject, "method": task.method, "estimator": task.estimator,
                    "duplicate_rate": res.duplicate_rate, "timings_ms": res.timings, "stages": res.stages}
        write_record(task.base, task.key, values, meta)
        return values, meta
    except FacebenchError as exc:
        numeric = isinstance(exc, NumericalError) or (
            isinstance(exc, StageError) and isinstance(exc.cause, NumericalError))
        return ("error", "numerical" if numeric else "data", str(exc))


def _init_worker(plugins):
    for name, fn in plugins.items():
        try:
            get_warp_plugin(name)
        except ConfigError:
            register_warp_plugin(name, fn)


def _plan(cfg: ExperimentConfig, data_dir, result: ExperimentResult, use_cache: bool):
    root = dataset_root(data_dir, cfg)
    cache_dir = cfg.resolved_cache_dir()
    hasher = _Hasher()
    todo, cached = [], {}
    for method in cfg.methods:
        topo, crop, name = cfg.method_parts(method)
        mms = load_mms_info(cfg.mms_path(method))
        lm = {"ids": [int(i) for i in mms["landmark_ids"]], "idx": [int(i) for i in mms["landmark_indices"]]}
        if cfg.mask == "full" and "full" not in mms["masks"]:
            result.masks[method] = None
        elif cfg.mask in mms["masks"]:
            result.masks[method] = np.asarray(mms["masks"][cfg.mask], dtype=np.int64)
        else:
            raise ConfigError(f"mask {cfg.mask!r} not defined in mms_info for {topo}/{crop}")
        rdir = root / "Rmeshes" / topo / crop / name
        tdir = root / "Gtrue" / topo / crop
        for subject in result.subjects:
            r_path = rdir / f"{subject}.txt"
            g_path = root / "Gmeshes" / f"{subject}.txt"
            lmk_path = root / "Gmeshes" / f"{subject}.lmks"
            if not r_path.exists():
                result.gaps.append((method, "*", subject, f"missing {r_path}"))
                continue
            if tdir.is_dir():
                t_path = tdir / f"{subject}.txt"
                if t_path.exists():
                    key = _key({"v": CACHE_VERSION, "kind": "true", "r": hasher(r_path), "g": hasher(t_path)})
                    todo.append(Task(method, TRUE, subject, key,
                                     _record_base(cache_dir, method, "true", subject), r_path, gtrue_path=t_path))
                else:
                    result.gaps.append((method, TRUE, subject, f"missing {t_path}"))
            if not lmk_path.exists():
                result.gaps.append((method, "*", subject, f"missing {lmk_path}"))
                continue
            inputs = {"r": hasher(r_path), "g": hasher(g_path), "lmks": hasher(lmk_path), "lm": lm}
            for spec in cfg.estimators:
                key = _key({"v": CACHE_VERSION, "kind": "estimate", "spec": spec.canonical(), "inputs": inputs})
                todo.append(Task(method, spec.name, subject, key,
                                 _record_base(cache_dir, method, spec.digest()[:16], subject),
                                 r_path, g_path, lmk_path, spec=spec,
                                 lm_ids=tuple(lm["ids"]), lm_idx=tuple(lm["idx"])))
    pending = []
    for task in todo:
        rec = read_record(task.base, task.key) if use_cache else None
        if rec is None:
            pending.append(task)
        else:
            cached[task] = rec
    return pending, cached


def _store(result: ExperimentResult, task: Task, rec: Record):
    if task.estimator == TRUE:
        result.truth[(task.method, task.subject)] = rec
    else:
        result.records[(task.method, task.estimator, task.subject)] = rec


def _masked_mean(values: np.ndarray, mask) -> float:
    v = values.astype(np.float64)
    return float(v.mean() if mask is None else v[mask].mean())


def aggregate(result: ExperimentResult) -> None:
    """Per-subject masked means, then per-method means, then metrics. Deterministic order."""
    cfg = result.config
    result.true_means, result.est_means, result.subject_means, result.metrics = {}, {}, {}, {}
    truth_subjects = {}
    for method in cfg.methods:
        mask = result.masks.get(method)
        ts = {s: _masked_mean(result.truth[(method, s)].values, mask)
              for s in result.subjects if (method, s) in result.truth}
        truth_subjects[method] = ts
        if ts:
            result.true_means[method] = float(np.mean([ts[s] for s in sorted(ts)]))
    use_truth = result.has_truth
    for spec in cfg.estimators:
        result.est_means[spec.name] = {}
        for method in cfg.methods:
            mask = result.masks.get(method)
            ss = {s: _masked_mean(result.records[(method, spec.name, s)].values, mask)
                  for s in result.subjects if (method, spec.name, s) in result.records}
            result.subject_means[(method, spec.name)] = ss
            subjects = sorted(set(ss) & set(truth_subjects[method])) if use_truth else sorted(ss)
            if subjects:
                result.est_means[spec.name][method] = float(np.mean([ss[s] for s in subjects]))
        have = [m for m in cfg.methods if m in result.est_means[spec.name]]
        if len(have) != len(cfg.methods):
            result.metrics[spec.name] = BenchmarkMetrics(spec.name, have,
                                                         [result.est_means[spec.name][m] for m in have])
            continue
        est = [result.est_means[spec.name][m] for m in cfg.methods]
        true = [result.true_means[m] for m in cfg.methods] if use_truth else None
        result.metrics[spec.name] = benchmark_metrics(spec.name, cfg.methods, est, true, cfg.top_k)


def run_experiment(cfg: ExperimentConfig, data_dir, num_processes: int = 1,
                   use_cache: bool = True, compute: bool = True) -> ExperimentResult:
    """Execute (or, with ``compute=False``, only collect from cache) every work unit."""
    root = dataset_root(data_dir, cfg)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    result = ExperimentResult(cfg, Path(data_dir), list_subjects(root))
    if not result.subjects:
        raise DataError(f"no subjects under {root / 'Gmeshes'}")
    pending, cached = _plan(cfg, data_dir, result, use_cache)
    for task, rec in cached.items():
        _store(result, task, rec)
    result.n_cached = len(cached)
    if not compute:
        for t in pending:
            result.gaps.append((t.method, t.estimator, t.subject, "not in cache"))
        pending = []
    log.info("%d units cached, %d to compute", len(cached), len(pending))
    if pending:
        if num_processes > 1 and len(pending) > 1:
            workers = min(num_processes, len(pending))
            chunk = max(1, len(pending) // (workers * 8))
            with ProcessPoolExecutor(workers, initializer=_init_worker,
                                     initargs=(registered_plugins(),)) as pool:
                outputs = list(pool.map(_execute, pending, chunksize=chunk))
        else:
            outputs = [_execute(t) for t in pending]
        for task, out in zip(pending, outputs):
            if isinstance(out, tuple) and len(out) == 3 and isinstance(out[0], str) and out[0] == "error":
                result.gaps.append((task.method, task.estimator, task.subject, out[2]))
                if out[1] == "numerical":
                    result.failures.append((task.method, task.estimator, task.subject, out[2]))
                continue
            values, meta = out
            _store(result, task, Record(np.asarray(values, dtype=np.float32), meta.get("duplicate_rate")))
            result.n_computed += 1
    result.gaps.sort()
    aggregate(result)
    return result


def cpu_count() -> int:
    return os.cpu_count() or 1
