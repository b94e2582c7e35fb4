"""Command-line entry point: ``segcrit {segment,synth,experiment,oracle}``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable input, invalid
values, failed experiment cell, unwritable output).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import CriterionKind, SegmentationError, format_label_text, parse_label_text
from .harness import CellError, load_config, run_experiment
from .imgio import PgmError, PgmImage, read_pgm, read_pgm_raw, write_outputs, write_pgm
from .merge import MergeConfig, segment
from .oracle import OracleTooLarge, brute_force_segment
from .synth import TEMPLATES, NoiseSpec, TestImageSpec, add_noise, generate, signal_variance

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _criterion(text: str) -> CriterionKind:
    try:
        return CriterionKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="segcrit", description="Piecewise-constant image segmentation by AIC, BIC or MDL.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("segment", help="segment a PGM image")
    s.add_argument("input", help="P2 or P5 PGM file")
    s.add_argument("--criterion", type=_criterion, required=True, help="aic, bic or mdl")
    s.add_argument("--log", action="store_true", help="segment ln(1 + y) instead of y")
    s.add_argument("--init", default="auto", help="per-pixel, block:K or auto (default)")
    s.add_argument("--max-regions", type=_positive_int, default=None, help="upper bound M on the region count")
    s.add_argument("--order", default="default",
                   help="merge ordering: default (AIC by itself, BIC and MDL along the MDL path), self, aic, bic or mdl")
    s.add_argument("--refine", action="store_true", help="refine region boundaries pixel by pixel")
    s.add_argument("--out", required=True, help="output directory")

    y = sub.add_parser("synth", help="write a synthetic test image")
    y.add_argument("--template", required=True, help=f"{', '.join(TEMPLATES[:-1])} or custom:PATH")
    y.add_argument("--side", type=_positive_int, required=True)
    y.add_argument("--snr", type=_positive_float, required=True)
    y.add_argument("--seed", type=int, required=True)
    y.add_argument("--means", default=None, help="comma-separated region gray values")
    y.add_argument("--out", required=True)

    e = sub.add_parser("experiment", help="run a Monte Carlo sweep")
    e.add_argument("--config", required=True, help="JSON or key=value config file")
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=_positive_int, default=None)

    o = sub.add_parser("oracle", help="exact minimiser on a tiny image (at most 12 pixels)")
    o.add_argument("input")
    o.add_argument("--criterion", type=_criterion, required=True)
    o.add_argument("--log", action="store_true")
    return p


def _cmd_segment(args) -> int:
    try:
        cfg = MergeConfig(args.criterion, args.max_regions, args.init, args.order, args.refine)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    raw = read_pgm_raw(args.input)
    img = read_pgm(args.input, log=args.log)
    seg, trace = segment(img, cfg)
    report = write_outputs(seg, img, args.out, trace, maxval=raw.maxval, log=args.log,
                           extra={"input": str(args.input), "log_transform": bool(args.log)})
    print(f"{trace.kind}: m_hat={report['m_hat']} score={report['score']:.6g} rss={report['rss']:.6g} -> {args.out}")
    return EXIT_OK


def _synth_spec(args) -> TestImageSpec:
    means = None
    if args.means:
        try:
            means = [float(v) for v in args.means.split(",")]
        except ValueError:
            raise UsageError(f"bad --means {args.means!r}") from None
    if args.template.startswith("custom:"):
        path = Path(args.template[7:])
        if path.suffix.lower() == ".pgm":
            labels = read_pgm_raw(path).samples.astype(np.int64)
        else:
            labels = parse_label_text(path.read_text())
        if means is None:
            means = [float(v) for v in range(int(np.unique(labels).size))]
        return TestImageSpec("custom", args.side, args.side, means, labels)
    if args.template not in TEMPLATES or args.template == "custom":
        raise UsageError(f"unknown template {args.template!r}; choose {', '.join(TEMPLATES[:-1])} or custom:PATH")
    return TestImageSpec(args.template, args.side, args.side, means)


def _cmd_synth(args) -> int:
    spec = _synth_spec(args)
    gt = generate(spec)
    img = add_noise(gt, NoiseSpec(args.snr, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    y = img.values
    lo, hi = float(y.min()), float(y.max())
    scale = 65535.0 / (hi - lo) if hi > lo else 1.0
    q = np.clip(np.rint((y - lo) * scale), 0, 65535).astype(np.int64)
    write_pgm(out / "image.pgm", PgmImage(gt.width, gt.height, 65535, q))
    write_pgm(out / "truth_labels.pgm", PgmImage(gt.width, gt.height, 65535, gt.labels))
    (out / "truth_labels.txt").write_text(format_label_text(gt.labels))
    meta = {
        "template": spec.template,
        "width": gt.width,
        "height": gt.height,
        "snr": args.snr,
        "seed": args.seed,
        "sigma": img.noise_sigma,
        "var_f": signal_variance(gt),
        "m_true": gt.m,
        "means": [float(v) for v in gt.means],
        "image_offset": lo,
        "image_scale": scale,
        "note": "image.pgm sample = round((y - image_offset) * image_scale)",
    }
    (out / "truth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"{spec.template} {gt.width}x{gt.height} m={gt.m} sigma={img.noise_sigma:.6g} -> {out}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        from dataclasses import replace

        cfg = replace(cfg, parallelism=args.workers)
    records = run_experiment(cfg, args.out)
    print(f"{len(records)} records -> {args.out}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    img = read_pgm(args.input, log=args.log)
    res = brute_force_segment(img, args.criterion)
    print(json.dumps({
        "criterion": args.criterion.value,
        "m_hat": res.best.m,
        "score": res.best_score,
        "partitions_evaluated": res.partitions_evaluated,
        "labels": res.best.labels.tolist(),
    }))
    return EXIT_OK


_COMMANDS = {"segment": _cmd_segment, "synth": _cmd_synth, "experiment": _cmd_experiment, "oracle": _cmd_oracle}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"segcrit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PgmError, SegmentationError, OracleTooLarge, CellError, ValueError, OSError) as exc:
        print(f"segcrit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
