"""Command-line interface.

Subcommands: train, infer, eval, synth-corpus, bench-scan.
Exit codes: 0 ok, 1 usage, 2 data contract violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from .config import RunConfig, apply_setting, desk_profile, load_config_file
from .errors import CheckpointFormatError, DataContractError, NumericalError

DATA_ROOT_ENV = "ANOMAMBA_DATA_ROOT"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_config(args) -> RunConfig:
    cfg = desk_profile(seed=0) if args.profile == "desk" else RunConfig()
    if args.config:
        cfg = load_config_file(args.config, base=cfg)
    for setting in args.set or []:
        if "=" not in setting:
            raise DataContractError(f"--set expects key=value, got {setting!r}")
        key, value = (s.strip() for s in setting.split("=", 1))
        cfg = apply_setting(cfg, key, value)
    if args.seed is not None:
        cfg = apply_setting(cfg, "seed", str(args.seed))
    if getattr(args, "strict_deterministic", False):
        cfg = apply_setting(cfg, "strict_deterministic", "true")
    return cfg


def _common_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--profile", choices=["paper", "desk"], default="desk",
                   help="base configuration preset (default: desk)")
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="run seed")


def _data_root(args) -> Path:
    root = args.data or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise DataContractError(
            f"no dataset root: pass --data or set {DATA_ROOT_ENV}"
        )
    return Path(root)


def cmd_train(args) -> int:
    from .data import ingest
    from .train import train_category

    cfg = _build_config(args)
    handle = ingest(_data_root(args), layout=args.layout, image_size=cfg.image_size)
    cats = args.category or handle.categories
    out_root = Path(args.out)
    for cat in cats:
        if cat not in handle.categories:
            raise DataContractError(f"category {cat!r} not in dataset {handle.categories}")
        t0 = time.time()
        last = {"msg": ""}

        def progress(category, epoch, step, report):
            if args.quiet:
                return
            msg = (
                f"[{category}] epoch {epoch + 1}/{cfg.epochs} step {step} "
                f"l_total={report.l_total:.4f} (rec {report.l_rec:.4f})"
            )
            if msg != last["msg"]:
                print(msg, flush=True)
                last["msg"] = msg

        result = train_category(cfg, handle, cat, out_root / cat, progress=progress)
        print(
            f"[{cat}] done: {result.steps} steps in {time.time() - t0:.1f}s -> "
            f"{result.checkpoint_path}"
        )
    return EXIT_OK


def cmd_infer(args) -> int:
    from .infer import collect_images, infer_paths
    from .model import Pipeline

    pipe = Pipeline.load(args.checkpoint)
    paths = collect_images(args.images)
    csv_path = infer_paths(pipe, paths, args.out, overlay=args.overlay)
    print(f"wrote {len(paths)} heatmap(s) and {csv_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import ingest
    from .infer import evaluate_handle
    from .metrics import report_csv, report_table
    from .model import Pipeline

    run_dir = Path(args.run)

    def pipe_for(cat: str) -> Pipeline:
        ckpt = run_dir / cat / "checkpoint.bin"
        if not ckpt.exists():
            raise DataContractError(f"no checkpoint for category {cat!r} at {ckpt}")
        return Pipeline.load(ckpt)

    probe = next(iter(sorted(run_dir.glob("*/checkpoint.bin"))), None)
    if probe is None:
        raise DataContractError(f"no trained categories found under {run_dir}")
    first = Pipeline.load(probe)  # image size comes from the checkpoint config
    handle = ingest(_data_root(args), layout=args.layout, image_size=first.cfg.image_size)
    cats = args.category or [c for c in handle.categories if (run_dir / c / "checkpoint.bin").exists()]
    if not cats:
        raise DataContractError(f"no trained categories found under {run_dir}")
    reports = evaluate_handle(pipe_for, handle, cats)
    print(report_table(reports))
    if args.out:
        Path(args.out).write_text(report_csv(reports))
        print(f"report written to {args.out}")
    if handle.missing_masks:
        print(f"warning: {len(handle.missing_masks)} anomalous test image(s) lacked masks; skipped")
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    from .data import make_synth_corpus

    out = make_synth_corpus(args.out, seed=args.seed, image_size=args.image_size)
    print(f"synthetic corpus written to {out}")
    return EXIT_OK


def cmd_bench_scan(args) -> int:
    from .bench import bench_recon, bench_scan_kernels, format_bench

    cfg = _build_config(args)
    recon_results = bench_recon(cfg, repeats=args.repeats)
    kernel_results = bench_scan_kernels(cfg, repeats=max(args.repeats, 5))
    print(format_bench(recon_results, kernel_results, cfg))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="anomamba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train per-category models")
    _common_config_flags(p)
    p.add_argument("--data", type=Path, help=f"dataset root (or ${DATA_ROOT_ENV})")
    p.add_argument("--layout", choices=["mvtec", "flat"], default="mvtec")
    p.add_argument("--category", action="append", help="train only this category (repeatable)")
    p.add_argument("--out", type=Path, required=True, help="output run directory")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--strict-deterministic", action="store_true",
                   help="pin numeric libraries to one thread for bit-exact reruns")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="emit heatmaps + scores for images")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True, help="image file or directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overlay", action="store_true", help="also write color overlays")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate trained models on a dataset's test split")
    p.add_argument("--run", type=Path, required=True, help="train output directory")
    p.add_argument("--data", type=Path, help=f"dataset root (or ${DATA_ROOT_ENV})")
    p.add_argument("--layout", choices=["mvtec", "flat"], default="mvtec")
    p.add_argument("--category", action="append")
    p.add_argument("--out", type=Path, help="write the CSV report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-corpus", help="generate the built-in procedural corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=128)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("bench-scan", help="benchmark the reconstruction module per scan backend")
    _common_config_flags(p)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench_scan)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (DataContractError,) as exc:
        print(f"data contract violation: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
