import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from facebench import synth
from facebench.bench.config import load_experiment
from facebench.bench.report import report
from facebench.bench.runner import read_record, run_experiment
from facebench.cli import main
from facebench.mesh import load_error_mesh

ESTIMATORS = [
    {"name": "RLR", "rigid": "RLR"},
    {"name": "RLR+ELR+ETC", "rigid": "RLR", "warp": "ELR", "correction": "ETC"},
    {"name": "ICP", "rigid": "ICP", "options": {"icp": {"max_iterations": 5, "subsample": 200}}},
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    t = synth.generate_template(24)
    info = synth.write_corpus(root, "ds", t, synth.SynthParams(n_subjects=3), {"m1": 0.5, "m2": 2.0})
    return root, info


def _experiment(corpus, tmp_path, estimators=ESTIMATORS, **kw):
    root, info = corpus
    d = {"dataset": "ds", "methods": info["methods"], "estimators": estimators, "reporter_type": "table",
         "mms_info": info["mms_info"], "out_dir": str(tmp_path / "out")}
    d.update(kw)
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(d))
    return p


def _files(d):
    d = Path(d)
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and "cache" not in p.parts}


def test_cold_warm_and_determinism(corpus, tmp_path):
    root, _ = corpus
    cfg = load_experiment(_experiment(corpus, tmp_path))
    cold = run_experiment(cfg, root, 1)
    n_units = 2 * 3 * (len(ESTIMATORS) + 1)
    assert cold.n_computed == n_units and cold.n_cached == 0 and not cold.gaps
    report(cold)
    first = _files(cfg.resolved_out_dir())
    warm = run_experiment(cfg, root, 1)
    assert warm.n_computed == 0 and warm.n_cached == n_units
    report(warm)
    assert _files(cfg.resolved_out_dir()) == first
    # per-subject values identical to a fresh computation
    for k, rec in cold.records.items():
        np.testing.assert_array_equal(rec.values, warm.records[k].values)


def test_parallel_matches_serial(corpus, tmp_path):
    root, _ = corpus
    a = load_experiment(_experiment(corpus, tmp_path / "a"))
    b = load_experiment(_experiment(corpus, tmp_path / "b"))
    report(run_experiment(a, root, 1))
    report(run_experiment(b, root, 3))
    assert _files(a.resolved_out_dir()) == _files(b.resolved_out_dir())
    ha, hb = report(run_experiment(a, root, 1), "heatmap"), report(run_experiment(b, root, 3), "heatmap")
    assert [p.read_bytes() for p in ha] == [p.read_bytes() for p in hb]


def test_cache_granularity_and_corruption(corpus, tmp_path):
    root, _ = corpus
    cfg = load_experiment(_experiment(corpus, tmp_path))
    run_experiment(cfg, root, 1)
    cache = cfg.resolved_cache_dir()
    victims = sorted(cache.rglob("*.f32"))
    victims[0].unlink()
    assert run_experiment(cfg, root, 1).n_computed == 1
    victims[1].write_bytes(victims[1].read_bytes()[:-4] + b"\x00\x00\x80\x7f")
    assert run_experiment(cfg, root, 1).n_computed == 1
    victims[2].with_suffix(".json").write_text("{not json")
    assert run_experiment(cfg, root, 1).n_computed == 1


def test_spec_edit_invalidates_only_that_estimator(corpus, tmp_path):
    root, _ = corpus
    run_experiment(load_experiment(_experiment(corpus, tmp_path)), root, 1)
    edited = [dict(ESTIMATORS[0], options={"with_scale": False})] + ESTIMATORS[1:]
    res = run_experiment(load_experiment(_experiment(corpus, tmp_path, edited)), root, 1)
    assert res.n_computed == 2 * 3
    renamed = [dict(ESTIMATORS[0], name="renamed")] + ESTIMATORS[1:]
    # the name is not part of the key; the original records are still there
    res = run_experiment(load_experiment(_experiment(corpus, tmp_path, renamed)), root, 1)
    assert res.n_computed == 0


def test_cache_record_format(corpus, tmp_path):
    root, _ = corpus
    cfg = load_experiment(_experiment(corpus, tmp_path))
    res = run_experiment(cfg, root, 1)
    f32 = sorted(cfg.resolved_cache_dir().rglob("*.f32"))[0]
    meta = json.loads(f32.with_suffix(".json").read_text())
    vals = np.frombuffer(f32.read_bytes(), dtype="<f4")
    assert len(vals) == meta["n"]
    assert read_record(f32.with_suffix(""), meta["key"]) is not None
    assert read_record(f32.with_suffix(""), "0" * 64) is None
    rec = res.records[("SYNTH/p" + str(len(vals)) + "/m1", "RLR", "id0001")]
    assert rec.values.dtype == np.float32


def test_missing_subject_file_is_a_gap(corpus, tmp_path):
    root, info = corpus
    local = tmp_path / "data"
    shutil.copytree(root / "ds", local / "ds")
    mms = {k: str(local / "ds" / Path(v).name) for k, v in info["mms_info"].items()}
    method = info["methods"][0]
    topo, crop, name = method.split("/")
    (local / "ds" / "Rmeshes" / topo / crop / name / "id0002.txt").unlink()
    cfg = load_experiment(_experiment((local, info), tmp_path, mms_info=mms))
    res = run_experiment(cfg, local, 1)
    assert [g[:3] for g in res.gaps] == [(method, "*", "id0002")]
    assert len(res.subject_means[(method, "RLR")]) == 2
    assert all(v is not None for v in res.metrics["RLR"].est_means)


def test_masked_means(corpus, tmp_path):
    root, _ = corpus
    full = run_experiment(load_experiment(_experiment(corpus, tmp_path / "f")), root, 1)
    inner = run_experiment(load_experiment(_experiment(corpus, tmp_path / "i", mask="inner")), root, 1)
    m = full.config.methods[0]
    assert full.est_means["RLR"][m] != inner.est_means["RLR"][m]
    rec = full.records[(m, "RLR", "id0001")]
    assert full.subject_means[(m, "RLR")]["id0001"] == pytest.approx(rec.values.astype(np.float64).mean())


def test_reporters(corpus, tmp_path):
    root, info = corpus
    two = ESTIMATORS[:2]
    cfg = load_experiment(_experiment(corpus, tmp_path, two))
    res = run_experiment(cfg, root, 1)
    out = tmp_path / "out"
    report(res, "table", out)
    rows = (out / "table.csv").read_text().splitlines()
    assert rows[0] == "method,RLR,RLR+ELR+ETC,true"
    assert len(rows) == 3
    txt = (out / "table.txt").read_text()
    assert "[1]" in txt and "[2]" in txt and "rate_of_inconsistency" in txt
    report(res, "scatter", out)
    srows = (out / "scatter.csv").read_text().splitlines()
    assert len(srows) == 1 + 2 * 2
    paths = report(res, "heatmap", out)
    plys = [p for p in paths if p.suffix == ".ply"]
    assert len(plys) == 2 * 2 * 3
    mesh, err = load_error_mesh(plys[0])
    assert mesh.faces is not None and len(err) == mesh.n_vertices
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["estimators"]) == {"RLR", "RLR+ELR+ETC"}
    assert summary["estimators"]["RLR+ELR+ETC"]["stages"] == ["RLR", "ELR", "Chamfer", "P2P", "ETC"]


def test_cli_run_report_and_exit_codes(corpus, tmp_path, capsys):
    root, _ = corpus
    exp = _experiment(corpus, tmp_path, ESTIMATORS[:1])
    assert main(["run", str(exp), str(root), "--num-processes", "2"]) == 0
    before = _files(tmp_path / "out")
    assert main(["report", str(exp), str(root)]) == 0
    assert _files(tmp_path / "out") == before
    assert "0 unit(s)" in capsys.readouterr().out

    bad = tmp_path / "bad.json"
    bad.write_text('{"dataset": "ds", "methods": [], "estimators": []}')
    assert main(["run", str(bad), str(root)]) == 2
    assert main(["run", str(exp), str(tmp_path / "nowhere")]) == 3
    nicp = _experiment(corpus, tmp_path, [{"name": "n", "rigid": "RLR", "warp": "NICP"}])
    assert main(["run", str(nicp), str(root)]) == 2
    boom = _experiment(corpus, tmp_path, [{"name": "b", "rigid": "RLR", "warp": "Explode"}])
    assert main(["run", str(boom), str(root), "--plugin", "plugin_numerical_failure"]) == 4
    assert main(["run", str(exp), str(root), "--plugin", "no.such.module"]) == 2


def test_cli_synth(tmp_path):
    assert main(["synth", str(tmp_path), "--dataset", "tiny", "--subjects", "2", "--amplitudes", "0.5,1",
                 "--resolution", "16", "--estimators", "E9,E12"]) == 0
    exp = tmp_path / "tiny-experiment.json"
    cfg = load_experiment(exp)
    assert [s.name for s in cfg.estimators] == ["E9", "E12"]
    assert main(["run", str(exp), str(tmp_path)]) == 0
    assert (tmp_path / "results-tiny" / "table.csv").exists()
    assert main(["synth", str(tmp_path), "--dropout", "1.5"]) == 2
