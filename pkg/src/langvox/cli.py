"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical abort.
Logging verbosity comes from ``T4P_LOG`` (error, info or debug).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import gradsuites
from .dataset import (
    DatasetFormatError,
    IngestError,
    ScanSequence,
    SyntheticSceneSpec,
    generate_synthetic_scene,
    ingest_scan,
    load_dataset,
    save_dataset,
    scene_samples,
)
from .geometry import GeometryError
from .numerics.checkpoint import FormatError
from .textside import LabelError, TextFormatError
from .trainer import (
    ConfigError,
    MetricsSink,
    TrainingAborted,
    evaluate,
    finetune,
    load_config,
    load_for_eval,
    pretrain,
    read_metrics,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("langvox")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable; wins over the file")
    p.add_argument("--seed", type=int, default=None, help="single source of randomness")
    p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="langvox", description="Language-guided 3D pre-training at desk scale.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("gen-data", help="render synthetic scenes into a dataset container")
    _common(p, config=False)
    p.add_argument("--classes", default="floor,wall,chair,table", help="comma-separated class names")
    p.add_argument("--frames", type=int, default=8, help="frames per scene")
    p.add_argument("--scenes", type=int, default=1, help="number of scenes")
    p.add_argument("--objects-per-class", type=int, default=2)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--noise", type=float, default=0.0, help="depth noise sigma in metres")
    p.add_argument("--voxel-size", type=float, default=0.05)
    p.add_argument("--min-pairs", type=int, default=32)

    p = sub.add_parser("ingest", help="turn a scan directory into a dataset container")
    _common(p, config=False)
    p.add_argument("scan", help="directory with color/ depth/ pose/ [label/] and intrinsics.txt")
    p.add_argument("--classes", required=True, help="comma-separated class names for the manifest")
    p.add_argument("--stride", type=int, default=25)
    p.add_argument("--voxel-size", type=float, default=0.05)
    p.add_argument("--min-pairs", type=int, default=32)

    for name, text in (("pretrain", "align the 3D branch to the frozen 2D features"),
                       ("finetune", "train the segmentation head with language guidance")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--data", required=True, help="dataset container")
        p.add_argument("--metrics", help="append JSON-lines metrics here (default: stdout)")
        p.add_argument("--resume", help="checkpoint of an interrupted run of the same stage")
        if name == "finetune":
            p.add_argument("--pretrained", help="pre-training checkpoint")

    p = sub.add_parser("eval", help="per-class IoU, mIoU and mAcc of a fine-tuned checkpoint")
    _common(p, config=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gradcheck", help="run the finite-difference suites")
    _common(p, config=False)
    p.add_argument("--scope", default="all", help=f"all or one of: {', '.join(gradsuites.SUITES)}")

    p = sub.add_parser("export-metrics", help="select metrics fields as CSV")
    _common(p, config=False)
    p.add_argument("metrics", help="JSON-lines metrics file")
    p.add_argument("--fields", required=True, help="comma-separated field names")
    return parser


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _train_config(args, stage: str):
    # fine-tuning defaults to learnable prompts; pre-training always uses handcrafted ones
    defaults = {"stage": stage, "prompt_mode": "learnable" if stage == "finetune" else "handcrafted"}
    cfg = load_config(args.config, args.override, **defaults)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    seed = 0 if args.seed is None else args.seed
    samples = []
    for k in range(args.scenes):
        spec = SyntheticSceneSpec(classes=tuple(classes), seed=seed * 1000 + k, frames=args.frames,
                                  objects_per_class=args.objects_per_class, width=args.width, height=args.height,
                                  depth_noise=args.noise)
        for s in scene_samples(generate_synthetic_scene(spec), voxel_size=args.voxel_size, min_pairs=args.min_pairs):
            s.frame_id = k * args.frames + s.frame_id
            samples.append(s)
    out = args.out or "dataset.t4ps"
    crc = save_dataset(out, samples, classes, args.voxel_size)
    print(json.dumps({"path": out, "classes": classes, "samples": len(samples), "voxel_size": args.voxel_size,
                      "checksum": f"{crc:08x}"}))
    return EXIT_OK


def cmd_ingest(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    samples = ingest_scan(ScanSequence.open(args.scan), args.stride, args.voxel_size, args.min_pairs)
    out = args.out or "dataset.t4ps"
    crc = save_dataset(out, samples, classes, args.voxel_size)
    print(json.dumps({"path": out, "classes": classes, "samples": len(samples), "frames": [s.frame_id for s in samples],
                      "checksum": f"{crc:08x}"}))
    return EXIT_OK


def _sink(args) -> MetricsSink:
    return MetricsSink(args.metrics) if args.metrics else MetricsSink(stream=sys.stdout)


def cmd_pretrain(args) -> int:
    cfg = _train_config(args, "pretrain")
    manifest, samples = load_dataset(args.data)
    with _sink(args) as sink:
        pretrain(cfg, samples, manifest.classes, sink=sink, checkpoint_path=args.out or "pretrain.ckpt",
                 resume_from=args.resume)
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _train_config(args, "finetune")
    manifest, samples = load_dataset(args.data)
    with _sink(args) as sink:
        finetune(cfg, samples, manifest.classes, pretrained=args.pretrained, sink=sink,
                 checkpoint_path=args.out or "finetune.ckpt", resume_from=args.resume)
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest, samples = load_dataset(args.data)
    model, bank, meta = load_for_eval(args.checkpoint)
    if list(meta["classes"]) != list(manifest.classes):
        raise LabelError(f"checkpoint classes {meta['classes']} differ from dataset classes {list(manifest.classes)}")
    scores = evaluate(model, bank, samples, manifest.classes)
    record = {"stage": "eval", "step": meta["step"], **scores.as_record()}
    _emit(json.dumps(record) + "\n", args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        reports = gradsuites.run_suites(args.scope, 0 if args.seed is None else args.seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    lines = [f"{name:12s} max_rel_err={r.max_error:.3e} {'PASS' if r.passed else 'FAIL'}" for name, r in reports.items()]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_NUMERIC


def cmd_export_metrics(args) -> int:
    records = read_metrics(args.metrics)
    fields = [f.strip() for f in args.fields.split(",") if f.strip()]
    available = sorted({k for r in records for k in r})
    unknown = [f for f in fields if f not in available]
    if unknown and records:
        raise UsageError(f"unknown field(s) {', '.join(unknown)}; available: {', '.join(available)}")
    target = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(fields)
        for r in records:
            if any(f in r for f in fields):
                writer.writerow(["" if r.get(f) is None else repr(r[f]) if isinstance(r[f], float) else r[f]
                                 for f in fields])
    finally:
        if args.out:
            target.close()
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "ingest": cmd_ingest,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-metrics": cmd_export_metrics,
}


def _configure_logging() -> None:
    level = os.environ.get("T4P_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"T4P_LOG must be one of {', '.join(levels)}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, DatasetFormatError, TextFormatError, GeometryError, IngestError, LabelError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
