"""How often Chamfer matching assigns one scan point to several reconstruction vertices."""
import argparse

import numpy as np

from facebench.experiments import duplicate_experiment
from facebench.synth import SynthParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--subjects", type=int, default=10)
    ap.add_argument("--noise", type=float, default=SynthParams.noise_sigma)
    ap.add_argument("--dropout", type=float, default=SynthParams.dropout_rate)
    args = ap.parse_args()

    params = SynthParams(n_subjects=args.subjects, noise_sigma=args.noise, dropout_rate=args.dropout)
    rows = duplicate_experiment(args.subjects, params=params)
    for r in rows:
        print(f"id{r.subject:04d}  N={r.n}  distinct={r.distinct}  duplicates={r.count}  rate={r.rate:.4f}")
    print(f"mean rate {np.mean([r.rate for r in rows]):.4f}")


if __name__ == "__main__":
    main()
