"""Command-line entry point: gen-data | train | eval | gradcheck | heatmap."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
GRAD_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="config file (section.key = value lines)")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--epochs", type=int, help="overrides run.epochs")
    common.add_argument("--out", type=Path, help="output directory (overrides run.out)")

    parser = _Parser(prog="disent-reid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset to <out>/data")
    sub.add_parser("train", parents=[common], help="two-stage training with per-epoch checkpoints")
    ev = sub.add_parser("eval", parents=[common], help="Top-1/mAP report for a checkpoint")
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--protocol", choices=("sc", "cc", "both"), default="both")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")
    hm = sub.add_parser("heatmap", parents=[common], help="stage-4 activation heatmaps as PGM")
    hm.add_argument("--checkpoint", type=Path)
    hm.add_argument("--images", type=Path, nargs="+", required=True)
    return parser


def _config(args, fallback: Path | None = None):
    """Config file (or ``fallback`` when no --config is given, else defaults) plus flag overrides."""
    from .config import RunConfig, load_config

    source = args.config or (fallback if fallback is not None and fallback.exists() else None)
    cfg = load_config(source) if source else RunConfig()
    if args.seed is not None:
        cfg["run.seed"] = args.seed
    if args.epochs is not None:
        if args.epochs < 0:
            raise ValueError("--epochs must be >= 0")
        cfg["run.epochs"] = args.epochs
    if args.out is not None:
        cfg["run.out"] = str(args.out)
    return cfg


def _limit_threads():
    n = int(os.environ.get("DISENT_REID_THREADS", "0") or 0)
    if n > 0:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    return None


def _load_model(cfg, checkpoint: Path):
    from .backbone import load_checkpoint

    params = load_checkpoint(checkpoint)
    return params, cfg.backbone(num_classes=params["fc.b"].shape[0])


def _default_checkpoint(cfg, given):
    ckpt = given or Path(cfg["run.out"]) / "final.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    return ckpt


def cmd_gen_data(cfg, args, out):
    from .data import export_dataset, generate_synthetic

    root = export_dataset(generate_synthetic(cfg.synth()), out / "data")
    print(f"wrote synthetic dataset to {root}")


def cmd_train(cfg, args, out):
    from .evaluation import evaluate, format_report, write_report
    from .train import load_data, train

    dataset = load_data(cfg)
    result = train(cfg, dataset, out, echo=print)
    results = evaluate(dataset, result.params, result.backbone)
    write_report(results, out)
    sys.stdout.write(format_report(results))


def _with_sidecar(cfg, args, ckpt: Path):
    """Without --config, model and data settings come from the checkpoint's sidecar snapshot."""
    if args.config:
        return cfg
    return _config(args, fallback=ckpt.with_suffix(".cfg"))


def cmd_eval(cfg, args, out):
    from .evaluation import (
        PROTOCOLS,
        SHORT_NAMES,
        evaluate,
        format_report,
        write_report,
    )
    from .train import load_data

    ckpt = _default_checkpoint(cfg, args.checkpoint)
    cfg = _with_sidecar(cfg, args, ckpt)
    params, bcfg = _load_model(cfg, ckpt)
    protocols = PROTOCOLS if args.protocol == "both" else (SHORT_NAMES[args.protocol],)
    results = evaluate(load_data(cfg), params, bcfg, protocols)
    write_report(results, out)
    sys.stdout.write(format_report(results))


def cmd_gradcheck(cfg, args, out):
    from .gradcheck import run_suite

    worst = run_suite()
    ok = True
    for name, err in worst.items():
        flag = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        ok &= err <= GRAD_TOLERANCE
        print(f"{name:24s} {err:.3e} {flag}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_heatmap(cfg, args, out):
    from . import cdm
    from .backbone import forward
    from .evaluation import heatmap_export
    from .images import read_rgb

    ckpt = _default_checkpoint(cfg, args.checkpoint)
    params, bcfg = _load_model(_with_sidecar(cfg, args, ckpt), ckpt)
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    for path in args.images:
        image = read_rgb(path, (bcfg.height, bcfg.width))[None]
        masks = None
        if bcfg.use_cdm:
            parse_path = _parsing_for(path)
            labels = cdm.load_parsing_map(parse_path)
            masks = cdm.resize_mask(cdm.build_grayscale(labels, bcfg.keep_table), bcfg.height, bcfg.width)[None]
        _, _, feats = forward(image, masks, params, bcfg)
        target = out / "heatmaps" / f"{path.stem}.pgm"
        heatmap_export(feats, target, bcfg.height, bcfg.width)
        print(f"{path} -> {target}")


def _parsing_for(path: Path) -> Path:
    """Parsing map beside an image: swap an ``images`` path component for ``parsing``."""
    parts = list(path.parts)
    if "images" in parts:
        i = len(parts) - 1 - parts[::-1].index("images")
        parts[i] = "parsing"
        cand = Path(*parts).with_suffix(".png")
        if cand.exists():
            return cand
    for cand in (path.with_name(path.stem + "_parsing.png"), path.parent / "parsing" / (path.stem + ".png")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no parsing map found for {path}")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "heatmap": cmd_heatmap}


def run(argv=None) -> int:
    from .config import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    limiter = _limit_threads()
    try:
        cfg = _config(args)
        out = Path(cfg["run.out"])
        if args.command != "gradcheck":
            out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, args, out)
        return EXIT_OK if code is None else code
    except (ConfigError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
