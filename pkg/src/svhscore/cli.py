"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad arguments, config, CSV,
image or checkpoint), 2 runtime failure (e.g. no limb found).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

from . import __version__

log = logging.getLogger("svhscore")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


def read_config(path: str | None) -> dict[str, str]:
    """Line-oriented ``key = value`` text; ``#`` starts a comment."""
    if path is None:
        return {}
    out: dict[str, str] = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def _coerce(value: str, current):
    if value.lower() == "none":
        return None
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(current, int) or current is None and value.isdigit():
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        parts = [p.strip() for p in value.split(",")]
        return tuple(type(c)(p) for c, p in zip(current, parts))
    return value


def apply_config(obj, cfg: dict[str, str], prefix: str = ""):
    """Return a copy of dataclass ``obj`` with matching ``prefix + field`` keys applied."""
    changes = {}
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        if key in cfg:
            try:
                changes[f.name] = _coerce(cfg[key], getattr(obj, f.name))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
    return dataclasses.replace(obj, **changes) if changes else obj


def _check_keys(cfg: dict[str, str], known: set[str]) -> None:
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def _fields(obj, prefix: str = "") -> set[str]:
    return {prefix + f.name for f in dataclasses.fields(obj)}


# --------------------------------------------------------------------- commands

def cmd_synth(args, cfg) -> int:
    from .synth import SynthConfig, generate_synthetic, write_dataset
    _check_keys(cfg, _fields(SynthConfig()))
    sc = apply_config(SynthConfig(seed=args.seed), cfg)
    if "seed" not in cfg:
        sc = dataclasses.replace(sc, seed=args.seed)
    write_dataset(generate_synthetic(sc), args.out, sc)
    print(f"wrote {sc.n_hands + sc.n_feet} synthetic limbs to {args.out}")
    return EXIT_OK


def _limb(args):
    from .imaging import LimbKind
    if args.limb is None:
        raise ConfigError("--limb is required (LH, RH, LF or RF)")
    return LimbKind.parse(args.limb)


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def cmd_preprocess(args, cfg) -> int:
    from .imaging import load_gray, save_gray
    from .pipeline import preprocess
    _check_keys(cfg, set())
    limb = _limb(args)
    os.makedirs(args.out, exist_ok=True)
    for path in args.images:
        prep = preprocess(load_gray(path), limb)
        out = os.path.join(args.out, _stem(path) + "_pre.png")
        save_gray(out, prep.gray)
        print(out)
    return EXIT_OK


def cmd_mask(args, cfg) -> int:
    from .imaging import load_gray, save_mask
    from .masking import extract_mask
    from .pipeline import choose_mask, load_model, preprocess, unet_tag
    _check_keys(cfg, set())
    limb = _limb(args)
    unet = None
    if args.models and not args.classic:
        unet, _ = load_model(os.path.join(args.models, unet_tag(limb.limb_type) + ".ckpt"))
    os.makedirs(args.out, exist_ok=True)
    for path in args.images:
        prep = preprocess(load_gray(path), limb)
        if unet is None:
            mask, source = extract_mask(prep.gray), "classic"
        else:
            mask, source = choose_mask(prep, unet)
        out = os.path.join(args.out, _stem(path) + "_mask.png")
        save_mask(out, mask)
        print(f"{out} ({source})")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    from .train import TrainPlan, load_examples, train_detectors, train_scorers, train_unets
    plan = TrainPlan().seeded(args.seed)
    known = {"unet_size", "mask_min_iou", "unet_negatives", "detector_shift"}
    for name in ("unet", "detector", "pretext", "scorer"):
        known |= _fields(getattr(plan, name), name + ".")
    _check_keys(cfg, known)
    if "unet_size" in cfg:
        plan = dataclasses.replace(plan, unet_size=int(cfg["unet_size"]))
    if "mask_min_iou" in cfg:
        plan = dataclasses.replace(plan, mask_min_iou=float(cfg["mask_min_iou"]))
    if "unet_negatives" in cfg:
        plan = dataclasses.replace(plan, unet_negatives=int(cfg["unet_negatives"]))
    if "detector_shift" in cfg:
        plan = dataclasses.replace(plan, detector_shift=int(cfg["detector_shift"]))
    for name in ("unet", "detector", "pretext", "scorer"):
        plan = dataclasses.replace(plan, **{name: apply_config(getattr(plan, name), cfg, name + ".")})

    examples, warnings = load_examples(args.data)
    if args.limb:
        lt = _limb(args).limb_type
        examples = [e for e in examples if e.limb.limb_type == lt]
    if not examples:
        raise ConfigError(f"no usable training examples under {args.data}")
    trainer = {"unet": train_unets, "detector": train_detectors, "scorer": train_scorers}[args.model]
    t = time.perf_counter()
    results = trainer(examples, args.out, plan)
    manifest = {"version": __version__, "model": args.model, "seed": args.seed,
                "examples": len(examples), "seconds": round(time.perf_counter() - t, 3),
                "checkpoints": {tag: r[2] for tag, r in sorted(results.items())},
                "best_epochs": {tag: r[1].best_epoch for tag, r in sorted(results.items())},
                "warnings": warnings}
    with open(os.path.join(args.out, f"train-{args.model}.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for tag, r in sorted(results.items()):
        print(f"{tag}: {os.path.join(args.out, tag + '.ckpt')} sha256={r[2][:12]}")
    return EXIT_OK


def cmd_score(args, cfg) -> int:
    from .pipeline import ModelBundle, run_pipeline, write_report
    _check_keys(cfg, set())
    limb = _limb(args)
    models = ModelBundle.load(args.models, [limb.limb_type])
    for path in args.images:
        report = run_pipeline(path, limb, models, seed=args.seed)
        paths = write_report(report, args.out)
        s = report.sheet
        print(f"{report.image_id}: narrowing={s.total_narrowing} erosion={s.total_erosion} "
              f"total={s.overall_total} ({len(report.joints)} joints, "
              f"{report.identification}, mask={report.mask_source}) -> {paths['scores']}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .metrics import evaluate_csvs, write_eval
    _check_keys(cfg, set())
    reports = evaluate_csvs(args.pred, args.truth)
    write_eval(reports, args.out)
    for r in reports:
        print(f"{r['model']}: n={r['n']} balanced={r['balanced_accuracy']:.4f} "
              f"pm1={r['pm1_balanced_accuracy']:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--limb", choices=["LH", "RH", "LF", "RF"])
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--deterministic", action="store_true",
                        help="single thread, deterministic kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="svhscore", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")

    sp = sub.add_parser("preprocess", parents=[common], help="resize, pad, crop and enhance")
    sp.add_argument("images", nargs="+")

    sp = sub.add_parser("mask", parents=[common], help="limb mask (U-Net or classic)")
    sp.add_argument("images", nargs="+")
    sp.add_argument("--models", help="checkpoint directory; omit for the classic masker")
    sp.add_argument("--classic", action="store_true")

    sp = sub.add_parser("train", parents=[common], help="train a model family")
    sp.add_argument("model", choices=["unet", "detector", "scorer"])
    sp.add_argument("--data", required=True, help="dataset directory (images/, scores.csv, ...)")

    sp = sub.add_parser("score", parents=[common], help="run the full pipeline")
    sp.add_argument("images", nargs="+")
    sp.add_argument("--models", required=True, help="checkpoint directory")

    sp = sub.add_parser("eval", parents=[common], help="metrics of predicted vs truth score CSVs")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    return p


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "mask": cmd_mask,
            "train": cmd_train, "score": cmd_score, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .dataset import DatasetError
    from .imaging import ImageError
    from .masking import NoLimbFound
    from .nn import CheckpointError, set_deterministic

    if args.deterministic:
        set_deterministic(args.seed)
    try:
        cfg = read_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except NoLimbFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, DatasetError, ImageError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
