"""Command-line entry point: ``plaqueseg <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` and repeated ``--set key=value``
overrides. Failures print one JSON line ``{"error": ..., "message": ...}``
on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_FAIL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plaqueseg", description="Carotid plaque segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a seeded phantom dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, help="number of phantoms (default: config 'phantoms')")

    p = sub.add_parser("augment", help="write the six-transform augmented copy of a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on a dataset (or fresh phantoms) and save a checkpoint")
    _common(p)
    p.add_argument("--data", help="dataset root; defaults to seeded phantoms")
    p.add_argument("--out", required=True)
    p.add_argument("--no-augment", action="store_true", help="train on the originals only")

    p = sub.add_parser("predict", help="segment one image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--postprocess", action="store_true", help="refine the mask before writing")

    p = sub.add_parser("postprocess", help="refine a binary mask")
    _common(p)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True, help="output file, or directory for <stem>_post.pgm")

    p = sub.add_parser("evaluate", help="print one CSV row: dice,iou,acc,mhd,flags")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--header", action="store_true")

    p = sub.add_parser("cv", help="k-fold cross-validation with before/after post-processing")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="module and loss ablation grids")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    _common(p)
    p.add_argument("--out")
    return parser


def _logger(args):
    if args.quiet:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def _cfg(args):
    from .config import load_config

    cfg = load_config(args.config, args.overrides)
    data = getattr(args, "data", None)
    if data:
        from dataclasses import replace

        cfg = replace(cfg, data_root=str(data))
    return cfg


def cmd_synth(args):
    from .data import PhantomConfig, synth_dataset, write_dataset

    cfg = _cfg(args)
    n = cfg.phantoms if args.count is None else args.count
    samples = synth_dataset(n, PhantomConfig(size=tuple(cfg.model.input_size), seed=cfg.seed))
    write_dataset(args.out, samples, "original")
    print(json.dumps({"written": len(samples), "root": str(args.out)}))


def cmd_augment(args):
    from .data import augment_all, load_dataset, write_dataset

    cfg = _cfg(args)
    out = augment_all(load_dataset(args.data), cfg.seed, cfg.include_original)
    write_dataset(args.out, out, "augmented")
    print(json.dumps({"written": len(out), "root": str(args.out)}))


def cmd_train(args):
    from .data import augment_all
    from .train import original_samples, train

    cfg = _cfg(args)
    samples = original_samples(cfg)
    if not args.no_augment:
        samples = augment_all(samples, cfg.seed, cfg.include_original)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(cfg, samples, checkpoint=out / "model.ckpt", log=_logger(args))
    history = {"epoch_losses": res.epoch_losses, "steps": res.steps, "config": cfg.to_text()}
    (out / "history.json").write_text(json.dumps(history, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"checkpoint": str(out / "model.ckpt"), "steps": res.steps,
                      "final_loss": res.epoch_losses[-1]}))


def cmd_predict(args):
    from .data import load_image, save_mask
    from .data.io import save_image
    from .metrics import binarize
    from .model import load_checkpoint, predict_proba
    from .postprocess import postprocess

    cfg = _cfg(args)
    model = load_checkpoint(args.checkpoint).eval()
    image = load_image(args.image)
    prob = predict_proba(model, image)
    mask = binarize(prob)
    if args.postprocess:
        mask = postprocess(mask, cfg.postprocess).mask
    stem = Path(args.image).stem
    out = Path(args.out)
    save_mask(out / f"{stem}_mask.pgm", mask)
    save_image(out / f"{stem}_prob.pgm", prob)
    print(json.dumps({"mask": str(out / f"{stem}_mask.pgm"), "prob": str(out / f"{stem}_prob.pgm")}))


def cmd_postprocess(args):
    from .data import load_mask, save_mask
    from .postprocess import postprocess

    cfg = _cfg(args)
    res = postprocess(load_mask(args.mask), cfg.postprocess)
    out = Path(args.out)
    if out.suffix.lower() not in (".pgm", ".png"):
        out = out / f"{Path(args.mask).stem}_post.pgm"
    save_mask(out, res.mask)
    print(json.dumps({"mask": str(out), "flags": list(res.flags)}))


def cmd_evaluate(args):
    from .data import load_mask
    from .metrics import METRIC_NAMES, evaluate_masks, format_float

    _cfg(args)
    rep = evaluate_masks(load_mask(args.label), load_mask(args.pred), Path(args.pred).stem)
    if args.header:
        print(",".join(METRIC_NAMES) + ",flags")
    print(",".join(format_float(getattr(rep, k)) for k in METRIC_NAMES) + "," + "|".join(rep.flags))


def cmd_cv(args):
    from .train import cross_validate

    cfg = _cfg(args)
    rep = cross_validate(cfg, log=_logger(args))
    rep.write(args.out)
    s = rep.summary()
    print(json.dumps({stage: {m: s[stage][m]["mean"] for m in ("dice", "iou", "acc", "mhd")}
                      for stage in ("before", "after")}, sort_keys=True))


def cmd_ablate(args):
    from .train import ablate

    cfg = _cfg(args)
    res = ablate(cfg, log=_logger(args))
    res.write(args.out)
    print(json.dumps({"modules": len(res.module_rows), "losses": len(res.loss_rows), "out": str(args.out)}))


def cmd_gradcheck(args):
    from .gradsuite import THRESHOLD, run_suite

    cfg = _cfg(args)
    results = run_suite(cfg.seed)
    for r in results:
        print(f"{r.name:24s} {r.error:.3e} {'ok' if r.ok else 'FAIL'}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps({r.name: r.error for r in results}, indent=2) + "\n")
    bad = [r.name for r in results if not r.ok]
    if bad:
        raise GradientCheckFailed(f"{len(bad)} case(s) above {THRESHOLD}: {', '.join(bad)}")


class GradientCheckFailed(Exception):
    pass


COMMANDS = {
    "synth": cmd_synth,
    "augment": cmd_augment,
    "train": cmd_train,
    "predict": cmd_predict,
    "postprocess": cmd_postprocess,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _fail("usage", str(exc))
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except KeyboardInterrupt:
        _fail("interrupted", "interrupted")
        return EXIT_FAIL
    except Exception as exc:  # every failure becomes one structured line
        _fail(type(exc).__name__, str(exc))
        return EXIT_FAIL
    return 0


if __name__ == "__main__":
    sys.exit(main())
