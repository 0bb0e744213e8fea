"""Collect per-checkpoint eval CSVs into one RD table and report BD-rate between two labels.

Each input is ``label=path.csv`` as written by ``hvfvc eval --csv``; the
aggregate row of each file becomes one RD point for its label.

    python scripts/rd_table.py cfr=r/cfr_l1.csv cfr=r/cfr_l2.csv base=r/b_l1.csv base=r/b_l2.csv \
        --anchor base --test cfr --metric psnr --out rd.csv
"""

import argparse
import csv
from collections import defaultdict

from hvfvc.cli import read_metrics_csv
from hvfvc.metrics import RDCurve, bd_rate_detail


def aggregate_point(path, metric):
    rows = read_metrics_csv(path)
    agg = [r for r in rows if r["frame"] == "aggregate"]
    if not agg:
        raise SystemExit(f"{path}: no aggregate row")
    row = agg[0]
    if row.get("bpp") is None:
        raise SystemExit(f"{path}: no bpp column; run eval with --bitstream")
    return float(row["bpp"]), float(row[metric])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", help="label=path.csv")
    ap.add_argument("--metric", default="psnr", choices=("psnr", "msssim", "checkerboard_score"))
    ap.add_argument("--anchor")
    ap.add_argument("--test")
    ap.add_argument("--out", help="write label,bpp,metric rows here")
    args = ap.parse_args()

    points = defaultdict(list)
    for item in args.inputs:
        label, _, path = item.partition("=")
        if not path:
            raise SystemExit(f"expected label=path, got {item!r}")
        points[label].append(aggregate_point(path, args.metric))
    for label, pts in sorted(points.items()):
        print(label)
        for bpp, value in sorted(pts):
            print(f"  {bpp:.4f} bpp  {args.metric} {value:.4f}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["label", "bpp", args.metric])
            for label, pts in sorted(points.items()):
                w.writerows([label, b, v] for b, v in sorted(pts))
    if args.anchor and args.test:
        res = bd_rate_detail(RDCurve(points[args.anchor], args.metric, args.anchor),
                             RDCurve(points[args.test], args.metric, args.test))
        flag = " (low confidence: fewer than 4 points)" if res.low_confidence else ""
        print(f"BD-rate {args.test} vs {args.anchor}: {res.percent:+.2f}%{flag}")


if __name__ == "__main__":
    main()
