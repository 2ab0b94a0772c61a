"""Command-line entry point (``confmia``)."""

import argparse
import logging
import os
import sys

import numpy as np

from . import dataset as dset
from .attack import AttackVariant, load_result, run_attack, save_result
from .errors import ConfmiaError, ValidationError
from .evaluation import emit_report, metrics
from .model import Architecture, TrainConfig, save_model
from .pipeline import PipelineConfig, StageError, parse_config_file, run_pipeline
from .rng import STREAM_MASK, derive_seed
from .scoring import ScoreVariant, load_scores, save_scores, score_matrix
from .shadows import (EnsembleConfig, build_mask, load_mask, load_predictions,
                      predict_matrix, save_mask, save_predictions, train_ensemble)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("confmia")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _hidden(text):
    try:
        return tuple(int(h) for h in text.split(",") if h.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("hidden widths are comma-separated integers")


def _common(p):
    # SUPPRESS so a value given before the subcommand is not overwritten
    p.add_argument("--seed", type=_u64, default=argparse.SUPPRESS)
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out-dir", default=argparse.SUPPRESS)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="confmia", description="Confidence-based likelihood-ratio membership inference.")
    _common(parser)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic Gaussian-mixture dataset")
    _common(p)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--center-scale", type=float, default=3.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("shadows", help="train the shadow ensemble and predict")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--models", type=int, default=16)
    p.add_argument("--epochs", type=int, default=21)
    p.add_argument("--hidden", type=_hidden, default=(64,))
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--init-scale", type=float, default=0.1)

    p = sub.add_parser("score", help="turn predictions into confidence scores")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--variant", required=True,
                   choices=[v.cli_name for v in ScoreVariant])
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("attack", help="run one attack variant over a score matrix")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--variant", required=True,
                   choices=[v.cli_name for v in AttackVariant])
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="ROC/AUC report over attack results")
    _common(p)
    p.add_argument("--result", nargs="+", required=True)
    p.add_argument("--fpr", type=float, action="append")
    p.add_argument("--csv")
    p.add_argument("--svg")

    p = sub.add_parser("pipeline", help="run the full attack x score grid")
    _common(p)
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    for flag in ("dataset", "models", "epochs", "hidden", "lr", "batch", "scores",
                 "attacks", "fpr", "classes", "dim", "per-class", "spread",
                 "center-scale", "activation", "init-scale"):
        p.add_argument(f"--{flag}", default=None)
    return parser


def _opt(args, name, default):
    return getattr(args, name, default)


def cmd_synth(args):
    spec = dset.SynthSpec(args.classes, args.dim, args.per_class, args.spread,
                          args.center_scale, _opt(args, "seed", 0))
    ds = dset.generate_synthetic(spec)
    dset.save_dataset(ds, args.out)
    log.info("wrote %d examples to %s", ds.num_examples, args.out)


def cmd_shadows(args):
    ds = dset.load_dataset(args.dataset)
    seed = _opt(args, "seed", 0)
    out_dir = _opt(args, "out_dir", ".")
    jobs = _opt(args, "jobs", 1)
    arch = Architecture(ds.dim, ds.num_classes, args.hidden, args.activation)
    ens = EnsembleConfig(arch, TrainConfig(args.epochs, args.batch, args.lr, 0, args.init_scale),
                         args.models, seed)
    ens.validate()
    mask = build_mask(args.models, ds.num_examples, derive_seed(seed, STREAM_MASK))
    models = train_ensemble(ds, mask, ens, jobs)
    os.makedirs(os.path.join(out_dir, "models"), exist_ok=True)
    save_mask(mask, os.path.join(out_dir, "mask.mmsk"))
    for i, m in enumerate(models):
        save_model(m, os.path.join(out_dir, "models", f"model_{i:03d}.cmlp"))
    save_predictions(predict_matrix(models, ds, jobs), os.path.join(out_dir, "predictions.pmat"))


def cmd_score(args):
    pm = load_predictions(args.predictions)
    variant = ScoreVariant.parse(args.variant)
    labels = dset.load_dataset(args.dataset).labels if args.dataset else None
    save_scores(score_matrix(pm, labels, variant), args.out)


def cmd_attack(args):
    res = run_attack(load_scores(args.scores), load_mask(args.mask),
                     AttackVariant.parse(args.variant))
    save_result(res, args.out)


def cmd_eval(args):
    fprs = tuple(args.fpr) if args.fpr else (0.01, 0.001)
    results = [load_result(p) for p in args.result]
    for r in results:
        mr = metrics(r, fprs)
        tprs = " ".join(f"tpr@{f!r}={mr.tpr_at_fpr[f]:.4f}" for f in fprs)
        print(f"{r.variant.long_name:24s} {r.score_variant.long_name:20s} "
              f"auc={mr.auc:.4f} {tprs} bal_acc={mr.balanced_accuracy:.4f}")
    if args.csv or args.svg:
        emit_report(results, args.csv, args.svg, fprs)


def cmd_pipeline(args):
    values = parse_config_file(args.config) if args.config else {}
    for flag in ("dataset", "models", "epochs", "hidden", "lr", "batch", "scores",
                 "attacks", "fpr", "classes", "dim", "per_class", "spread",
                 "center_scale", "activation", "init_scale", "seed", "jobs", "out_dir"):
        v = getattr(args, flag, None)
        if v is not None:
            values[flag] = v
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    cfg = PipelineConfig.from_mapping(values)
    outcome = run_pipeline(cfg)
    log.info("built %d artifacts, reused %d", len(outcome.built), len(outcome.reused))
    print(outcome.csv_path)
    print(outcome.svg_path)


COMMANDS = {"synth": cmd_synth, "shadows": cmd_shadows, "score": cmd_score,
            "attack": cmd_attack, "eval": cmd_eval, "pipeline": cmd_pipeline}


def exit_code_for(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfmiaError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ArithmeticError, FloatingPointError)):
        return EXIT_RUNTIME
    if isinstance(exc, ValueError):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(all="ignore"):
            COMMANDS[args.command](args)
    except Exception as exc:  # mapped to documented exit codes
        stage = exc.stage if isinstance(exc, StageError) else args.command
        cause = exc.cause if isinstance(exc, StageError) else exc
        print(f"confmia: error [{stage}]: {cause}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
