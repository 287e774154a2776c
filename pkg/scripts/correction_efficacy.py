"""Rate of inconsistency and correlation of RLR+ELR with and without ETC over several corpus seeds."""
import argparse

from facebench.experiments import DEFAULT_AMPLITUDES, correction_efficacy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="0,1,2,3")
    ap.add_argument("--subjects", type=int, default=20)
    ap.add_argument("--amplitudes", default=",".join(map(str, DEFAULT_AMPLITUDES)))
    ap.add_argument("--num-processes", type=int, default=1)
    args = ap.parse_args()

    rows = correction_efficacy([int(s) for s in args.seeds.split(",")], args.subjects,
                               [float(a) for a in args.amplitudes.split(",")],
                               num_processes=args.num_processes)
    print("seed  RoI(plain)  RoI(ETC)  r(plain)  r(ETC)  holds")
    for r in rows:
        print(f"{r.seed:4d}  {r.roi_plain:10.3f}  {r.roi_etc:8.3f}  {r.r_plain:8.4f}  {r.r_etc:6.4f}  {r.holds}")
    print(f"holds on {sum(r.holds for r in rows)}/{len(rows)} seeds")


if __name__ == "__main__":
    main()
