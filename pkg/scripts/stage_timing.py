"""Per-stage wall time of the pipeline on one synthetic mesh pair (default N = 23470)."""
import argparse

from facebench.experiments import timing_experiment

ORDER = ("RLR", "ICP-with-RLR-init", "ELR", "Chamfer", "P2P", "ETC")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--vertices", type=int, default=23470)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    t = timing_experiment(args.vertices, args.repeats)
    print(f"N = {t['n_vertices']}, best of {args.repeats}")
    for k in ORDER:
        print(f"{k:>18s}  {t[k] * 1e3:10.2f} ms")


if __name__ == "__main__":
    main()
