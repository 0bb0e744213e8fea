"""Recall of sort-and-chunk LSH against exact cosine kNN, swept over rounds and bucket sizes.

    python scripts/lsh_recall_sweep.py --bucket-sizes 64,256,1024 --seeds 3
"""

import argparse
import json

from hvfvc.experiments import lsh_recall_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", default="1,2,4,8")
    ap.add_argument("--bucket-sizes", default="64")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--json", help="write the full table here")
    args = ap.parse_args()

    rounds = tuple(int(r) for r in args.rounds.split(","))
    table = {}
    print("bucket  " + "  ".join(f"r={r:<5d}" for r in rounds) + "  monotone")
    for b in (int(x) for x in args.bucket_sizes.split(",")):
        sweep = lsh_recall_sweep(rounds=rounds, seeds=range(args.seeds), bucket_size=b, n=args.n, dim=args.dim,
                                 k=args.k)
        table[b] = sweep
        print(f"{b:<6d}  " + "  ".join(f"{sweep['mean_recall'][r]:.4f} " for r in rounds) + f"  {sweep['monotone']}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(table, f, indent=2)


if __name__ == "__main__":
    main()
