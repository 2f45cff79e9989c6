"""Command-line entry point: ``generate``, ``train``, ``eval``, ``gradcheck``.

Exit codes: 0 success, 1 operational error, 2 gradient check failed.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import synthgen
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DatasetError, load_dataset_dir, stratified_split
from .model import ConfigError, ModelConfig, build_model, model_backward
from .plotting import write_curves
from .runconfig import RunConfigError, load_run_config
from .tensor import ShapeError
from .training import GradCheckError, TrainingError, evaluate_dataset, run_gradcheck, train_model

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


class CliError(Exception):
    pass


# -- generate -------------------------------------------------------------------

def _alterations(rc):
    return {
        "obliteration": synthgen.obliteration(radius=rc.obliteration_radius or None),
        "zcut": synthgen.zcut(width=rc.zcut_width),
        "central_rotation": synthgen.central_rotation(radius=rc.rotation_radius or None,
                                                      angle=rc.rotation_angle),
    }


def cmd_generate(args):
    rc = load_run_config(args.config).with_overrides({
        "subjects": args.subjects, "impressions": args.impressions, "seed": args.seed,
        "image_size": args.image_size, "freq_min": args.freq_min, "freq_max": args.freq_max,
        "noise": args.noise, "obliteration_radius": args.obliteration_radius,
        "zcut_width": args.zcut_width, "rotation_radius": args.rotation_radius,
        "rotation_angle": args.rotation_angle,
    })
    cfg = synthgen.GenConfig(rc.subjects, rc.impressions, rc.image_size, rc.freq_min,
                             rc.freq_max, rc.noise, rc.seed)
    count = synthgen.write_dataset(cfg, args.out, _alterations(rc), layout=args.layout)
    print(f"wrote {count} images and manifest.csv to {args.out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def _model_config(rc, num_classes):
    if rc.image_size % rc.timesteps:
        raise CliError(f"{rc.timesteps} timesteps do not divide image size {rc.image_size}")
    return ModelConfig(num_classes=num_classes, variant=rc.variant, timesteps=rc.timesteps,
                       frame_height=rc.image_size // rc.timesteps, frame_width=rc.image_size,
                       hidden_channels=rc.hidden_channels, kernel=rc.kernel_size,
                       dropout_rate=rc.dropout_rate, dense_units=rc.dense_units, seed=rc.seed)


def cmd_train(args):
    rc = load_run_config(args.config).with_overrides({
        "epochs": args.epochs, "variant": args.variant, "seed": args.seed,
        "batch_size": args.batch_size, "lr": args.lr, "hidden_channels": args.hidden_channels,
        "timesteps": args.timesteps, "image_size": args.image_size,
        "dropout_rate": args.dropout, "dense_units": args.dense_units,
        "val_fraction": args.val_fraction, "kernel": args.kernel,
    })
    dataset = load_dataset_dir(args.data, rc.timesteps, rc.image_size)
    train_set, val_set = stratified_split(dataset, rc.val_fraction, rc.seed)
    config = _model_config(rc, dataset.num_classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(rc.to_text())
    model = build_model(config, dtype=np.float32)
    print(f"training {config.variant} on {len(train_set)} samples "
          f"({len(val_set)} validation, {dataset.num_classes} classes) for {rc.epochs} epochs")
    result = train_model(model, train_set, val_set, rc.epochs, rc.batch_size, rc.seed, rc.lr)
    result.log.write_csv(out / "metrics.csv")
    save_checkpoint(result.model, out / "final.ckpt")
    save_checkpoint(result.best_model, out / "best.ckpt")
    write_curves(result.log, out / "curves.svg")
    if result.best_epoch is None:
        print("no epochs run")
        return EXIT_OK
    best = {r.split: r for r in result.log.records if r.epoch == result.best_epoch}["val"]
    final = result.log.rows("val")[-1]
    print(f"best epoch {result.best_epoch}: val accuracy {100 * best.accuracy:.2f}  "
          f"precision {100 * best.precision:.2f}  recall {100 * best.recall:.2f}  "
          f"auc {100 * best.auc:.2f}  loss {best.loss:.4f}")
    print(f"final epoch {final.epoch}: val accuracy {100 * final.accuracy:.2f}  "
          f"precision {100 * final.precision:.2f}  recall {100 * final.recall:.2f}  "
          f"auc {100 * final.auc:.2f}  loss {final.loss:.4f}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

EVAL_HEADER = ("split", "samples", "loss", "accuracy", "precision", "recall", "auc",
               "confusion_accuracy")


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    image_size = cfg.frame_width
    if cfg.image_height != image_size:
        raise CliError(f"checkpoint frames {cfg.frame_height}x{cfg.frame_width} with "
                       f"{cfg.timesteps} steps do not form a square image")
    dataset = load_dataset_dir(args.data, cfg.timesteps, image_size)
    if dataset.num_classes != cfg.num_classes:
        raise CliError(f"dataset has {dataset.num_classes} classes, checkpoint expects "
                       f"{cfg.num_classes}")
    if args.split != "all":
        seed = cfg.seed if args.seed is None else args.seed
        train_set, val_set = stratified_split(dataset, args.val_fraction, seed)
        dataset = train_set if args.split == "train" else val_set
    report = evaluate_dataset(model, dataset)
    print(f"{'model':<10} {'Accuracy(%)':>12} {'Precision(%)':>13} {'Recall(%)':>10} "
          f"{'AUC(%)':>8}")
    print(f"{cfg.variant:<10} {100 * report.categorical_accuracy:12.2f} "
          f"{100 * report.precision:13.2f} {100 * report.recall:10.2f} {100 * report.auc:8.2f}")
    print(f"confusion-matrix accuracy (micro, threshold 0.5): {100 * report.accuracy:.2f}%")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        w.writerow([args.split, len(dataset)] + [f"{v:.6f}" for v in (
            report.loss, report.categorical_accuracy, report.precision, report.recall,
            report.auc, report.accuracy)])
    return EXIT_OK


# -- gradcheck ------------------------------------------------------------------

def _corrupted_backward(model, cache, grad):
    grads = model_backward(model, cache, grad)
    grads["dense1.W"] = grads["dense1.W"] * 1.01
    return grads


def cmd_gradcheck(args):
    rc = load_run_config(args.config)
    variants = ("convlstm", "lstm_only") if args.variant == "both" else (args.variant,)
    seed = rc.seed if args.seed is None else args.seed
    backward = _corrupted_backward if args.corrupt_backward else model_backward
    worst = 0.0
    for variant in variants:
        report = run_gradcheck(variant, seed, backward=backward)
        print(f"[{variant}] seed {seed}: max relative error per parameter block")
        for name, err in report.items():
            flag = "" if err <= GRADCHECK_TOLERANCE else "  FAIL"
            print(f"  {name:<16} {err:.3e}{flag}")
        worst = max(worst, max(report.values()))
    status = "PASS" if worst <= GRADCHECK_TOLERANCE else "FAIL"
    print(f"{status}: worst relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if worst <= GRADCHECK_TOLERANCE else EXIT_VERIFY


# -- parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fpconvlstm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic damaged-fingerprint dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--subjects", type=int)
    g.add_argument("--impressions", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--image-size", type=int)
    g.add_argument("--freq-min", type=float)
    g.add_argument("--freq-max", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--obliteration-radius", type=float, help="pixels (default: side / 5)")
    g.add_argument("--zcut-width", type=float)
    g.add_argument("--rotation-radius", type=float, help="pixels (default: side / 4)")
    g.add_argument("--rotation-angle", type=float, help="degrees")
    g.add_argument("--layout", choices=synthgen.LAYOUTS, default="all",
                   help="all: pristine + 3 alterations per impression; "
                        "mixed: one image per impression, kinds cycled")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a PGM directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--variant", choices=("convlstm", "lstm_only"))
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--hidden-channels", type=int)
    t.add_argument("--timesteps", type=int)
    t.add_argument("--image-size", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--dense-units", type=int)
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--kernel", help="e.g. 3x3")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report accuracy/precision/recall/AUC for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=".")
    e.add_argument("--split", choices=("all", "train", "val"), default="all")
    e.add_argument("--val-fraction", type=float, default=1 / 3)
    e.add_argument("--seed", type=int, help="split seed (default: the checkpoint's seed)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--variant", choices=("convlstm", "lstm_only", "both"), default="both")
    c.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


OPERATIONAL_ERRORS = (OSError, CliError, CheckpointError, ConfigError, DatasetError,
                      GradCheckError, RunConfigError, ShapeError, TrainingError, ValueError)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except OPERATIONAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
