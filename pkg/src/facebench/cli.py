"""Command line entry point.

    facebench run EXPERIMENT.json DATA_DIR --num-processes K
    facebench report EXPERIMENT.json DATA_DIR [--reporter table|scatter|heatmap]
    facebench synth DATA_DIR --dataset NAME --subjects 100 --amplitudes 0.5,1,2,3,4

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import importlib
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, FacebenchError, NumericalError, StageError
from .synth import SynthParams

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_ESTIMATORS = ("E1", "E10", "E11", "E12")

log = logging.getLogger("facebench")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_DATA


def _load_plugins(modules):
    for name in modules or ():
        try:
            importlib.import_module(name)
        except ImportError as exc:
            raise ConfigError(f"cannot import plugin module {name!r}: {exc}") from None


def _print_result(result, paths):
    for s in result.config.estimators:
        mt = result.metrics.get(s.name)
        line = f"{s.name:>8s}  " + "  ".join(f"{m.split('/')[-1]}={v:.4f}"
                                               for m, v in result.est_means.get(s.name, {}).items())
        if mt is not None and mt.rate_of_inconsistency is not None:
            line += f"  | r={mt.pearson_r:.3f} RoI={mt.rate_of_inconsistency:.3f}"
        print(line)
    print(f"computed {result.n_computed} unit(s), {result.n_cached} from cache, {len(result.gaps)} gap(s)")
    for g in result.gaps[:20]:
        print("  gap:", " | ".join(map(str, g)))
    for p in paths:
        print("wrote", p)


def cmd_run(args, compute=True) -> int:
    from .bench.config import load_experiment
    from .bench.report import report
    from .bench.runner import run_experiment

    _load_plugins(args.plugin)
    cfg = load_experiment(args.experiment)
    if args.out_dir:
        cfg = dataclasses.replace(cfg, out_dir=args.out_dir)
    if args.num_processes < 1:
        raise ConfigError("--num-processes must be >= 1")
    result = run_experiment(cfg, args.data_dir, getattr(args, "num_processes", 1),
                            use_cache=not getattr(args, "no_cache", False), compute=compute)
    paths = report(result, args.reporter, cfg.resolved_out_dir())
    _print_result(result, paths)
    return EXIT_NUMERICAL if result.failures else EXIT_OK


def cmd_synth(args) -> int:
    from .synth import generate_template, template_with_vertex_count, write_corpus

    try:
        amps = [float(a) for a in args.amplitudes.split(",")]
        params = SynthParams(seed=args.seed, n_subjects=args.subjects, noise_sigma=args.noise,
                             dropout_rate=args.dropout, landmark_sigma=args.landmark_noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    template = template_with_vertex_count(args.vertices) if args.vertices else generate_template(args.resolution)
    methods = {f"m{k + 1}": a for k, a in enumerate(amps)}
    info = write_corpus(args.data_dir, args.dataset, template, params, methods)
    exp = {
        "dataset": args.dataset,
        "methods": info["methods"],
        "estimators": list(args.estimators.split(",")),
        "reporter_type": "table",
        "mms_info": info["mms_info"],
        "mask": "full",
        "out_dir": str(Path(args.data_dir).resolve() / f"results-{args.dataset}"),
    }
    exp_path = Path(args.data_dir) / f"{args.dataset}-experiment.json"
    exp_path.write_text(json.dumps(exp, indent=2) + "\n")
    print(f"wrote {params.n_subjects} subjects x {len(methods)} methods "
          f"(N={template.mesh.n_vertices}) to {Path(args.data_dir) / args.dataset}")
    print("experiment file:", exp_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="facebench", description="Face reconstruction error-estimation benchmark")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("experiment", help="experiment JSON file")
        p.add_argument("data_dir", help="benchmark data directory")
        p.add_argument("--reporter", choices=("table", "scatter", "heatmap"), default=None,
                       help="override the experiment's reporter_type")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--plugin", action="append", metavar="MODULE",
                       help="import MODULE first so it can register warp plugins (repeatable)")

    run = sub.add_parser("run", help="run (or resume) an experiment and write reports")
    common(run)
    run.add_argument("--num-processes", type=int, default=1)
    run.add_argument("--no-cache", action="store_true", help="ignore cached results (they are still rewritten)")

    rep = sub.add_parser("report", help="re-render reports from the cache without computing")
    common(rep)

    syn = sub.add_parser("synth", help="generate a synthetic corpus with known true error")
    syn.add_argument("data_dir")
    syn.add_argument("--dataset", default="synth")
    syn.add_argument("--subjects", type=int, default=100)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--amplitudes", default="0.5,1.0,1.5,2.0,3.0",
                     help="comma-separated deformation amplitude (mm) per simulated method")
    syn.add_argument("--noise", type=float, default=SynthParams.noise_sigma)
    syn.add_argument("--dropout", type=float, default=SynthParams.dropout_rate)
    syn.add_argument("--landmark-noise", type=float, default=0.0)
    syn.add_argument("--resolution", type=int, default=60, help="template vertices per row")
    syn.add_argument("--vertices", type=int, default=None, help="exact template vertex count (overrides resolution)")
    syn.add_argument("--estimators", default=",".join(DEFAULT_ESTIMATORS),
                     help="estimators written into the generated experiment file")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "report":
            args.num_processes = 1
            return cmd_run(args, compute=False)
        return cmd_run(args)
    except FacebenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
