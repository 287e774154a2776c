"""Report emission. Everything written here is a pure function of cached per-vertex values,
so a warm-cache rerun (or ``facebench report``) reproduces the files byte for byte."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..mesh import Mesh, _atomic_write, load_mesh, save_error_mesh
from .config import load_mms_info
from .runner import ExperimentResult
from .scores import ranks

MARKS = {1: "[1]", 2: "[2]", 3: "[3]"}


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _write_text(path: Path, text: str) -> None:
    _atomic_write(path, lambda fh: fh.write(text))


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _columns(result: ExperimentResult):
    cols = [(s.name, result.est_means.get(s.name, {})) for s in result.config.estimators]
    if result.true_means:
        cols.append(("true", result.true_means))
    return cols


def table(result: ExperimentResult, out_dir) -> list[Path]:
    """table.csv (plain means) and table.txt (aligned, with [1]/[2]/[3] per column)."""
    out = Path(out_dir)
    methods = list(result.config.methods)
    cols = _columns(result)
    rows = [["method"] + [name for name, _ in cols]]
    for m in methods:
        rows.append([m] + [_fmt(vals.get(m)) for _, vals in cols])
    marks = {}
    for name, vals in cols:
        have = [m for m in methods if m in vals]
        for m, rk in zip(have, ranks([vals[m] for m in have])):
            marks[(m, name)] = MARKS.get(rk, "")
    cells = [rows[0]] + [[m] + [f"{_fmt(vals.get(m)) or '-'} {marks.get((m, name), '')}".rstrip()
                               for name, vals in cols] for m in methods]
    widths = [max(len(r[c]) for r in cells) for c in range(len(cells[0]))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
             for r in cells]
    lines.insert(1, "-" * len(lines[0]))
    footer = []
    for s in result.config.estimators:
        mt = result.metrics.get(s.name)
        if mt is None or mt.rate_of_inconsistency is None:
            continue
        footer.append(f"{s.name}: pearson_r={_fmt(mt.pearson_r)} "
                      f"pearson_r_top{mt.top_k}={_fmt(mt.pearson_r_topk)} "
                      f"rate_of_inconsistency={_fmt(mt.rate_of_inconsistency)}")
    text = "\n".join(lines) + "\n"
    if footer:
        text += "\n" + "\n".join(footer) + "\n"
    _write_text(out / "table.csv", _csv(rows))
    _write_text(out / "table.txt", text)
    return [out / "table.csv", out / "table.txt"]


def scatter(result: ExperimentResult, out_dir) -> list[Path]:
    """One row per (method, estimator): the true and estimated method means."""
    rows = [["method", "estimator", "true", "estimated"]]
    for m in result.config.methods:
        for s in result.config.estimators:
            rows.append([m, s.name, _fmt(result.true_means.get(m)), _fmt(result.est_means[s.name].get(m))])
    path = Path(out_dir) / "scatter.csv"
    _write_text(path, _csv(rows))
    return [path]


def heatmap(result: ExperimentResult, out_dir) -> list[Path]:
    """Per-subject error PLY on the reconstruction, faces taken from mms_info when present."""
    cfg = result.config
    paths = []
    for m in cfg.methods:
        topo, crop, name = cfg.method_parts(m)
        faces = load_mms_info(cfg.mms_path(m)).get("faces")
        faces = None if faces is None else np.asarray(faces, dtype=np.int64)
        rdir = result.data_dir / cfg.dataset / "Rmeshes" / topo / crop / name
        for s in cfg.estimators:
            for subject in result.subjects:
                rec = result.records.get((m, s.name, subject))
                if rec is None:
                    continue
                r = load_mesh(rdir / f"{subject}.txt")
                mesh = Mesh(r.vertices, faces if faces is not None else r.faces, label=subject)
                path = Path(out_dir) / "heatmap" / m.replace("/", "__") / s.name / f"{subject}.ply"
                save_error_mesh(mesh, rec.values, path)
                paths.append(path)
    return paths


def summary(result: ExperimentResult) -> dict:
    cfg = result.config
    est = {}
    for s in cfg.estimators:
        mt = result.metrics.get(s.name)
        est[s.name] = {
            "spec": s.canonical(),
            "stages": s.stages(),
            "method_means": result.est_means.get(s.name, {}),
            "ranks": dict(zip(mt.methods, mt.est_ranks)) if mt else {},
            "pearson_r": mt.pearson_r if mt else None,
            "pearson_r_topk": mt.pearson_r_topk if mt else None,
            "top_k": mt.top_k if mt else None,
            "rate_of_inconsistency": mt.rate_of_inconsistency if mt else None,
            "rank_disagreement": (dict(zip(mt.methods, mt.rank_disagreement))
                                  if mt and mt.rank_disagreement is not None else None),
        }
    return {
        "dataset": cfg.dataset,
        "methods": list(cfg.methods),
        "mask": cfg.mask,
        "subjects": len(result.subjects),
        "true_means": result.true_means or None,
        "estimators": est,
        "gaps": [list(g) for g in result.gaps],
    }


REPORTERS = {"table": table, "scatter": scatter, "heatmap": heatmap}


def report(result: ExperimentResult, reporter_type: str | None = None, out_dir=None) -> list[Path]:
    """Write the selected reporter's files plus summary.json into ``out_dir``."""
    kind = reporter_type or result.config.reporter_type
    if kind not in REPORTERS:
        raise ConfigError(f"unknown reporter_type {kind!r}; expected one of {sorted(REPORTERS)}")
    out = Path(out_dir) if out_dir is not None else result.config.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    paths = REPORTERS[kind](result, out)
    path = out / "summary.json"
    _write_text(path, json.dumps(summary(result), indent=2, sort_keys=True) + "\n")
    return paths + [path]
