"""Overfit the transposed-conv autoencoder with and without the PC loss.

    python scripts/run_pc_ablation.py --steps 2000 --out results/pc
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from hvfvc.data_media import read_png, write_png
from hvfvc.experiments import PCAblationConfig, default_test_image, overfit_autoencoder, pc_loss_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--image", help="PNG to overfit; default is a 128x128 natural-image crop")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save-recons", action="store_true", help="also write the two reconstructions")
    ap.add_argument("--out", default="results/pc")
    args = ap.parse_args()

    image = read_png(args.image) if args.image else default_test_image()
    cfg = replace(PCAblationConfig(), steps=args.steps, lr=args.lr, seed=args.seed)
    report = pc_loss_ablation(image, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    if args.save_recons:
        for phi in cfg.phis:
            write_png(out / f"recon_phi{phi}.png", overfit_autoencoder(image, phi, cfg).clip(0, 1))
    for run in report["runs"].values():
        print(f"phi {run['phi']}: checkerboard score {run['checkerboard_score']:.5f}  psnr {run['psnr']:.2f} dB  "
              f"({run['seconds']:.0f} s)")
    print(f"score ratio {report['score_ratio']:.3f}, psnr gap {report['psnr_gap']:.2f} dB, passed {report['passed']}")


if __name__ == "__main__":
    main()
