"""Command-line interface: ``hvfvc <subcommand> ...``.

Exit status is 0 on success, 2 on a usage error and 1 on a runtime failure.
A ``--config`` file of ``key = value`` lines supplies defaults that explicit
flags override; ``HVFVC_SEED`` overrides a seed given in the config file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

log = logging.getLogger("hvfvc")


class UsageError(Exception):
    """Bad arguments detected after parsing; maps to exit status 2."""


# ------------------------------------------------------------- output


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_metrics_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            d = r.as_dict()
            w.writerow({c: "" if d[c] is None else d[c] for c in columns})


def read_metrics_csv(path) -> list[dict]:
    """Inverse of ``write_metrics_csv``: empty cells become ``None``."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            parsed = {}
            for k, v in row.items():
                if v == "":
                    parsed[k] = None
                elif k in ("sequence",):
                    parsed[k] = v
                elif k == "frame":
                    parsed[k] = v if v == "aggregate" else int(v)
                else:
                    parsed[k] = float(v)
            out.append(parsed)
    return out


def read_rd_csv(path, metric: str, label: str = ""):
    """RD points from a CSV with a ``bpp`` column and a ``metric`` column.

    Metrics CSVs written by ``eval`` contribute only their aggregate rows.
    """
    from .metrics import RDCurve

    points = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "bpp" not in reader.fieldnames or metric not in reader.fieldnames:
            raise UsageError(f"{path}: needs 'bpp' and {metric!r} columns")
        rows = list(reader)
    if any(r.get("frame") == "aggregate" for r in rows):
        rows = [r for r in rows if r.get("frame") == "aggregate"]
    for r in rows:
        if r["bpp"] and r[metric]:
            points.append((float(r["bpp"]), float(r[metric])))
    return RDCurve(points, metric=metric, label=label or Path(path).stem)


# ----------------------------------------------------------- commands


def cmd_train(args) -> int:
    from .training import load_config, run_stage

    overrides = {
        "stage": args.stage, "epochs": args.epochs, "steps_per_epoch": args.steps_per_epoch,
        "batch_size": args.batch_size, "crop_size": args.crop_size, "lr": args.lr, "lam": args.lam,
        "target_bpp": args.target_bpp, "seed": args.seed, "data": args.data or None,
        "validation": args.validation, "init_checkpoint": args.init_checkpoint,
        "out_dir": args.out_dir, "resume": args.resume or None,
    }
    cfg = load_config(args.config, overrides)
    if not cfg.data:
        raise UsageError("train needs --data (or 'data' in the config file)")
    if cfg.out_dir is None:
        raise UsageError("train needs --out-dir")
    _, rows = run_stage(cfg, progress=_progress_logger(100))
    last = rows[-1] if rows else {}
    _emit({"stage": cfg.stage, "steps": len(rows), "final": last, "out_dir": cfg.out_dir}, args.out)
    return 0


def _progress_logger(every):
    def progress(step, report):
        if step % every == 0:
            log.info("step %d  total %.5f  bpp %.4f", step, report.total, report.rate_bits_per_pixel)
    return progress


def cmd_encode(args) -> int:
    from .codec_io import encode_sequence
    from .data_media import load_sequence
    from .model import load_checkpoint

    model, _, _ = load_checkpoint(args.model)
    seq = load_sequence(args.input)
    result = encode_sequence(seq, model, args.gop)
    data = result.container.serialize()
    Path(args.out).write_bytes(data)
    h, w = seq.original_size
    pixels = len(seq) * h * w
    _emit({
        "frames": len(seq), "width": w, "height": h, "gop": args.gop,
        "bytes": len(data), "payload_bytes": result.container.payload_bytes(),
        "bpp": 8 * len(data) / pixels, "estimated_bpp": result.estimated_bits / pixels,
        "frame_types": result.container.frame_types, "frame_bits": result.frame_bits,
    })
    return 0


def cmd_decode(args) -> int:
    from .bitstream import BitstreamContainer
    from .codec_io import decode_sequence
    from .data_media import save_sequence
    from .model import load_checkpoint

    model, _, _ = load_checkpoint(args.model)
    container = BitstreamContainer.parse(Path(args.input).read_bytes())
    seq = decode_sequence(container, model)
    save_sequence(seq, args.out)
    _emit({"frames": len(seq), "width": container.width, "height": container.height, "out": args.out})
    return 0


METRIC_COLUMNS = {"psnr": "psnr", "msssim": "msssim", "checker": "checkerboard_score"}


def cmd_eval(args) -> int:
    from .bitstream import BitstreamContainer
    from .data_media import load_masks, load_sequence
    from .metrics import MSSSIM_WEIGHTS, compute_metrics, msssim_levels

    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in names if m not in METRIC_COLUMNS]
    if unknown:
        raise UsageError(f"unknown metrics {unknown}; choose from {sorted(METRIC_COLUMNS)}")
    ref, rec = load_sequence(args.ref), load_sequence(args.rec)
    if ref.original_size != rec.original_size or len(ref) != len(rec):
        raise ValueError(f"reference {len(ref)}x{ref.original_size} and reconstruction "
                         f"{len(rec)}x{rec.original_size} differ")
    masks = load_masks(args.masks or args.ref)
    if masks is not None and any(m.shape != ref.original_size for m in masks):
        raise ValueError(f"masks do not match the {ref.original_size} frame size")
    ref_c = replace(ref, frames=ref.cropped())
    rec_c = replace(rec, frames=rec.cropped())
    bpp = None
    if args.bitstream:
        data = Path(args.bitstream).read_bytes()
        container = BitstreamContainer.parse(data)
        h, w = ref.original_size
        total = 8 * len(data)
        bpp = [8 * sum(len(p) for p in frame) / (h * w) for frame in container.payloads]
        overhead = (total - 8 * container.payload_bytes()) / (len(bpp) * h * w)
        bpp = [b + overhead for b in bpp]
    rows = compute_metrics(ref_c, rec_c, masks, sequence_id=Path(args.ref).name, bpp=bpp, period=args.period)
    columns = ["sequence", "frame", "bpp"] + [METRIC_COLUMNS[m] for m in names] + ["masked_l1"]
    if args.csv:
        write_metrics_csv(args.csv, rows, columns)
    agg = {c: rows[-1].as_dict()[c] for c in columns}
    levels = msssim_levels(*ref.original_size)
    _emit({"aggregate": agg, "frames": len(ref),
           "msssim": {"weights": list(MSSSIM_WEIGHTS[:levels]), "levels": levels}}, args.out)
    return 0


def cmd_synth(args) -> int:
    from .data_media import SynthSpec, save_synth, synth_occlusion_sequence

    spec = SynthSpec(size=args.size, num_frames=args.frames, occluder_velocity=args.velocity,
                     texture_seed=_seed(args.seed))
    seq, masks = synth_occlusion_sequence(spec)
    save_synth(seq, masks, args.out)
    _emit({"out": args.out, "frames": len(seq), "mask_pixels": [int(m.sum()) for m in masks]})
    return 0


def cmd_inject_checker(args) -> int:
    from .data_media import checkerboard_score, inject_checkerboard, read_png, write_png

    frame = read_png(args.input)
    out = inject_checkerboard(frame, args.period, args.amplitude)
    write_png(args.out, out)
    _emit({"out": args.out, "score_before": checkerboard_score(frame, args.period),
           "score_after": checkerboard_score(out, args.period)})
    return 0


def cmd_spectrum(args) -> int:
    from .data_media import checkerboard_score, read_png, spectrum_map, write_png

    frame = read_png(args.input)
    report = {"input": args.input, "period": args.period, "checkerboard_score": checkerboard_score(frame, args.period)}
    if args.map:
        spec = np.log1p(spectrum_map(frame).mean(axis=-1))
        spec = spec / max(spec.max(), 1e-12)
        write_png(args.map, np.repeat(spec[..., None], 3, axis=-1))
        report["map"] = args.map
    _emit(report, args.out)
    return 0


def cmd_bdrate(args) -> int:
    from .metrics import bd_rate_detail

    anchor = read_rd_csv(args.anchor, args.metric)
    test = read_rd_csv(args.test, args.metric)
    res = bd_rate_detail(anchor, test)
    _emit({"metric": args.metric, "bd_rate_percent": res.percent, "low_confidence": res.low_confidence,
           "metric_interval": list(res.interval), "anchor": anchor.label, "test": test.label}, args.out)
    return 0


def cmd_ablate(args) -> int:
    from . import experiments as ex

    seed = _seed(args.seed)
    if args.experiment == "pc-loss":
        from .data_media import read_png

        image = read_png(args.image) if args.image else None
        cfg = replace(ex.PCAblationConfig(), steps=args.steps or 2000, seed=seed)
        report = ex.pc_loss_ablation(image, cfg)
    elif args.experiment == "cfr":
        cfg = replace(ex.CFRAblationConfig(), steps=args.steps or 5000, seed=seed, lam=args.lam)
        report = ex.cfr_ablation(cfg, progress=_progress_logger(500))
        models = report.pop("models")
        if args.save_models:
            from .model import save_checkpoint

            Path(args.save_models).mkdir(parents=True, exist_ok=True)
            for name, model in models.items():
                save_checkpoint(Path(args.save_models) / f"{name}.npz", model)
    else:
        rounds = tuple(int(r) for r in args.rounds.split(","))
        report = ex.lsh_recall_sweep(rounds=rounds, seeds=range(seed, seed + args.seeds),
                                     bucket_size=args.bucket_size)
    _emit(report, args.out)
    return 0


def _seed(cli_value):
    if cli_value is not None:
        return cli_value
    if "HVFVC_SEED" in os.environ:
        return int(os.environ["HVFVC_SEED"])
    return 0


# ------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hvfvc", description="Learned video codec with confidence-based feature reconstruction")
    p.add_argument("--config", help="key = value defaults file; explicit flags win")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("--data", action="append", help="PNG directory or .y4m; repeatable")
    t.add_argument("--validation")
    t.add_argument("--stage", type=int, choices=(1, 2))
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps-per-epoch", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--crop-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lam", type=float)
    t.add_argument("--target-bpp", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--init-checkpoint")
    t.add_argument("--out-dir")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--out", help="write the JSON summary here instead of stdout")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="encode a sequence to .hvb")
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--gop", type=int, default=50)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="decode .hvb to a PNG directory")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval", help="per-frame metrics")
    v.add_argument("--ref", required=True)
    v.add_argument("--rec", required=True)
    v.add_argument("--metrics", default="psnr,msssim,checker")
    v.add_argument("--masks", help="directory with mask_*.png (default: --ref)")
    v.add_argument("--bitstream", help=".hvb file to derive per-frame bpp")
    v.add_argument("--period", type=int, default=4)
    v.add_argument("--csv")
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic occlusion sequence with masks")
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--velocity", type=int, default=8)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("inject-checker", help="add a periodic checkerboard to a PNG")
    c.add_argument("--input", required=True)
    c.add_argument("--period", type=int, default=4)
    c.add_argument("--amplitude", type=float, default=0.05)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_inject_checker)

    sp = sub.add_parser("spectrum", help="checkerboard score and DCT spectrum map")
    sp.add_argument("--input", required=True)
    sp.add_argument("--period", type=int, default=4)
    sp.add_argument("--map", help="write a log-magnitude spectrum PNG")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_spectrum)

    b = sub.add_parser("bdrate", help="Bjontegaard delta rate between two RD CSVs")
    b.add_argument("--anchor", required=True)
    b.add_argument("--test", required=True)
    b.add_argument("--metric", default="psnr")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bdrate)

    a = sub.add_parser("ablate", help="scaled-down ablation experiments")
    a.add_argument("experiment", choices=("pc-loss", "cfr", "lsh-recall"))
    a.add_argument("--image", help="pc-loss: PNG to overfit (default: built-in crop)")
    a.add_argument("--steps", type=int)
    a.add_argument("--lam", type=float, default=0.01)
    a.add_argument("--save-models", help="cfr: directory for the two trained checkpoints")
    a.add_argument("--rounds", default="1,2,4,8")
    a.add_argument("--seeds", type=int, default=10)
    a.add_argument("--bucket-size", type=int, default=64)
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return p


def _apply_config_defaults(parser: argparse.ArgumentParser, argv) -> None:
    """Use config-file values as defaults for the chosen subcommand (train reads the file itself)."""
    from .training import parse_config_text

    known, _ = parser.parse_known_args(argv)
    if not known.config or known.command == "train":
        return
    values = parse_config_text(Path(known.config).read_text())
    if "seed" in values and "HVFVC_SEED" in os.environ:
        values.pop("seed")
    sub = parser._subparsers._group_actions[0].choices[known.command]
    dests = {a.dest for a in sub._actions}
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in values.items() if k.replace("-", "_") in dests})


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"hvfvc: config error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hvfvc {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, exit 1
        log.debug("failure", exc_info=True)
        print(f"hvfvc {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
