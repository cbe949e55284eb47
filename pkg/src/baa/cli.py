"""Command-line front end: ``baa <command> [flags]``.

Commands write CSV (and run-directory) artifacts that are byte-identical for
a fixed seed.  Exit codes: 0 success, 2 I/O or parse failure, 3 dimension
mismatch, 4 missing prediction, 5 training divergence, 6 output locked.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .adjuster import BaaParams, baa_weight, masked_distance
from .calibration import (BAA_FIXED, BAA_SA, BASELINE, MODES, CalibrationError, MetricConfig,
                          ProtocolConfig, SplitError, run_protocol, split_dataset, write_run_dir)
from .data_io import (ManifestError, PgmError, ShapeConfig, gen_synthetic, load_dataset, load_manifest,
                      load_pgm, write_dataset)
from .dwf import KINDS, DomainError
from .loss import BCE, THROUGH_WEIGHT, WBCE, WEIGHT_AS_CONSTANT, LossConfig, ShapeError
from .metrics import CHEBYSHEV, METRICS, evaluate
from .toytrain import TrainConfig, TrainingError, gradient_mass, load_checkpoint, loss_and_grads

log = logging.getLogger("baa")

EXIT_IO = 2
EXIT_DIMS = 3
EXIT_MISSING_PRED = 4
EXIT_DIVERGED = 5
EXIT_LOCKED = 6
OUTPUT_ROOT_ENV = "BAA_OUTPUT_ROOT"
LOCK_NAME = ".baa.lock"


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@contextlib.contextmanager
def output_lock(directory: Path):
    """Exclusive lock on an output directory for the duration of a command."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CommandError(f"{directory} is in use (remove {lock} if no run is active)", EXIT_LOCKED) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _write_text(path, text: str):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(args):
    lo, hi, step = args.grid_lo, args.grid_hi, args.grid_step
    if not (0 < step and 0 <= lo <= hi <= 1):
        raise ValueError("threshold grid needs 0 <= lo <= hi <= 1 and step > 0")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(np.round(lo + step * np.arange(n), 10))


def _metric_config(args) -> MetricConfig:
    if args.radius < 0:
        raise ValueError("radius must be >= 0")
    return MetricConfig(grid=_grid(args), radius=args.radius, metric=args.metric)


def _baa_params(args) -> BaaParams:
    return BaaParams.make(thr=args.thr, thr_dev=args.thr_dev, b=args.decay_b, kind=args.kind)


def _load_samples(manifest_path):
    try:
        return load_dataset(load_manifest(manifest_path))
    except (OSError, ManifestError, PgmError) as err:
        raise CommandError(str(err), EXIT_IO) from None


# ------------------------------------------------------------------ commands

def cmd_generate(args):
    cfg = ShapeConfig(noise_sigma=args.noise_sigma, polarity=args.polarity,
                      min_shapes=args.min_shapes, max_shapes=args.max_shapes)
    samples = gen_synthetic(args.seed, args.count, args.size, cfg)
    out = Path(args.out)
    with output_lock(out):
        path = write_dataset(out, samples)
    print(f"wrote {len(samples)} samples to {path}")


def cmd_weights(args):
    params = _baa_params(args)
    try:
        pred = load_pgm(args.pred)
        gt = load_pgm(args.gt)
    except (OSError, PgmError) as err:
        raise CommandError(str(err), EXIT_IO) from None
    if pred.shape != gt.shape:
        raise CommandError(f"dimension mismatch: pred {pred.shape} vs gt {gt.shape}", EXIT_DIMS)
    if not args.fractional_gt:
        gt = (gt >= 0.5).astype(np.float64)
    md = masked_distance(pred, gt, params.thr)
    w = baa_weight(pred, gt, params)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(("pred", "gt", "md", "weight"))
    for row in zip(pred.ravel(), gt.ravel(), np.ravel(md), np.ravel(w)):
        out.writerow([repr(float(v)) for v in row])
    _write_text(args.out, buf.getvalue())


def cmd_eval(args):
    mcfg = _metric_config(args)
    try:
        manifest = load_manifest(args.manifest)
    except (OSError, ManifestError) as err:
        raise CommandError(str(err), EXIT_IO) from None
    pred_dir = Path(args.pred_dir)
    pairs = []
    for e in manifest.entries:
        p = pred_dir / f"{e.id}.pgm"
        if not p.is_file():
            raise CommandError(f"no prediction for id {e.id!r} (expected {p})", EXIT_MISSING_PRED)
        try:
            pred = load_pgm(p)
            gt = load_pgm(e.gt) >= 0.5
        except (OSError, PgmError) as err:
            raise CommandError(str(err), EXIT_IO) from None
        if pred.shape != gt.shape:
            raise CommandError(f"dimension mismatch for {e.id!r}: {pred.shape} vs {gt.shape}", EXIT_DIMS)
        pairs.append((pred, gt))
    report = evaluate(pairs, np.asarray(mcfg.grid), mcfg.radius, mcfg.metric)
    _write_text(args.out, report.to_csv())
    if args.per_image:
        _write_text(args.per_image, report.per_image_csv(manifest.ids))
    print(f"ODS={report.ods_f1:.4f} (thr={report.ods_threshold:.2f}) OIS={report.ois_f1:.4f}",
          file=sys.stderr if args.out in (None, "-") else sys.stdout)


def _protocol_config(args, mode=None, **over) -> ProtocolConfig:
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                       weight_decay=args.weight_decay, crop_size=args.crop_size, seed=args.seed)
    cfg = ProtocolConfig(
        mode=mode or args.mode, base=args.base, thr=args.thr, thr_dev=args.thr_dev, b=args.decay_b,
        kind=args.kind, delta=args.delta, grad_mode=args.grad_mode,
        skip_calibration=getattr(args, "skip_calibration", False), warm_start=getattr(args, "warm_start", False),
        patch_size=args.patch_size, hidden=args.hidden, tile=args.tile, stride=args.stride,
        train=tcfg, metrics=_metric_config(args),
    )
    cfg = replace(cfg, **over)
    cfg.baa_loss(cfg.thr)  # validates the adjuster parameters up front
    if not 0 < cfg.stride <= cfg.tile:
        raise ValueError("stride must lie in [1, tile]")
    return cfg


def _split(args, samples):
    try:
        return split_dataset([s.id for s in samples], args.val_fraction, args.test_fraction, args.seed)
    except SplitError as err:
        raise CommandError(str(err), EXIT_IO) from None


def cmd_train(args):
    cfg = _protocol_config(args)
    samples = _load_samples(args.manifest)
    split = _split(args, samples)
    out = Path(args.out) if args.out else output_root() / f"{cfg.mode}-seed{args.seed}"
    with output_lock(out):
        try:
            result = run_protocol(samples, split, cfg, seed=args.seed)
        except (CalibrationError, TrainingError) as err:
            raise CommandError(str(err), EXIT_DIVERGED) from None
        write_run_dir(out, result)
    thr = "-" if result.thr is None else f"{result.thr:.2f}"
    print(f"{cfg.mode}: thr={thr} ODS={result.report.ods_f1:.4f} OIS={result.report.ois_f1:.4f} -> {out}")


SWEEP_COLUMNS = ("thr", "thr_dev", "delta", "b", "ods", "ois")


def cmd_sweep(args):
    base = _protocol_config(args, mode=BAA_FIXED)
    for td in args.thr_dev_list:
        for b in args.b_list:
            replace(base, thr_dev=td, b=b).baa_loss(base.thr)
    samples = _load_samples(args.manifest)
    split = _split(args, samples)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    failed = 0
    for b in args.b_list:
        for td in args.thr_dev_list:
            cfg = replace(base, thr_dev=td, b=b)
            try:
                res = run_protocol(samples, split, cfg, seed=args.seed)
                ods, ois = f"{res.report.ods_f1:.6f}", f"{res.report.ois_f1:.6f}"
            except (CalibrationError, TrainingError) as err:
                log.error("cell thr_dev=%s b=%s failed: %s", td, b, err)
                ods = ois = "failed"
                failed += 1
            w.writerow([f"{cfg.thr:g}", f"{td:g}", f"{cfg.delta:g}", f"{b:g}", ods, ois])
            log.info("thr_dev=%g b=%g ods=%s ois=%s", td, b, ods, ois)
    _write_text(args.out, buf.getvalue())
    if failed:
        print(f"{failed} sweep cell(s) failed", file=sys.stderr)


def cmd_gradmass(args):
    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as err:
        raise CommandError(str(err), EXIT_IO) from None
    samples = _load_samples(args.manifest)
    cfg = LossConfig(base=args.base, baa=None if args.no_baa else _baa_params(args),
                     delta=args.delta, grad_mode=args.grad_mode)
    edges = np.linspace(0.0, 1.0, args.bins + 1)
    correct = np.zeros(args.bins)
    wrong = np.zeros(args.bins)
    for s in samples:
        res = loss_and_grads(model, s.image, s.gt, cfg)
        gm = gradient_mass(res.pred, s.gt[None], res.dpred, args.thr, edges)
        correct += gm.correct
        wrong += gm.wrong
    _write_text(args.out, type(gm)(edges, correct, wrong).to_csv())


# -------------------------------------------------------------------- parser

def _add_baa_flags(p, with_thr=True):
    g = p.add_argument_group("adjuster")
    if with_thr:
        g.add_argument("--thr", type=float, default=0.7, help="binarization threshold")
    g.add_argument("--thr-dev", type=float, default=0.2, help="threshold window")
    g.add_argument("--decay-b", type=float, default=16.0, help="DWF decay rate b")
    g.add_argument("--kind", choices=KINDS, default="exp", help="DWF family")


def _add_loss_flags(p):
    g = p.add_argument_group("loss")
    g.add_argument("--base", choices=(BCE, WBCE), default=WBCE, help="baseline pixel loss")
    g.add_argument("--delta", type=float, default=1.0, help="additive weight floor delta")
    g.add_argument("--grad-mode", choices=(WEIGHT_AS_CONSTANT, THROUGH_WEIGHT), default=WEIGHT_AS_CONSTANT,
                   help="differentiate through the adjuster weight or hold it fixed")


def _add_metric_flags(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--radius", type=float, default=1, help="match tolerance in pixels")
    g.add_argument("--metric", choices=METRICS, default=CHEBYSHEV, help="tolerance distance")
    g.add_argument("--grid-lo", type=float, default=0.01, help="lowest threshold in the grid")
    g.add_argument("--grid-hi", type=float, default=0.99, help="highest threshold in the grid")
    g.add_argument("--grid-step", type=float, default=0.01, help="threshold grid spacing")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--manifest", required=True, help="dataset manifest CSV (id,image,gt)")
    g.add_argument("--seed", type=int, default=0, help="split, init and crop seed")
    g.add_argument("--val-fraction", type=float, default=0.25, help="validation share of the training part")
    g.add_argument("--test-fraction", type=float, default=0.25, help="test share of the whole set")
    g.add_argument("--epochs", type=int, default=50, help="passes over the training part")
    g.add_argument("--batch-size", type=int, default=8, help="crops per optimizer step")
    g.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    g.add_argument("--weight-decay", type=float, default=1e-8, help="L2 penalty")
    g.add_argument("--crop-size", type=int, default=32, help="training crop side")
    g.add_argument("--patch-size", type=int, default=5, help="model receptive field k (odd)")
    g.add_argument("--hidden", type=int, default=16, help="hidden units")
    g.add_argument("--tile", type=int, default=32, help="inference tile size")
    g.add_argument("--stride", type=int, default=28, help="inference tile stride")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="baa", description="Binarization-aware loss adjustment toolkit.",
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic edge dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--count", type=int, default=60, help="number of samples")
    p.add_argument("--size", type=int, default=32, help="image side in pixels")
    p.add_argument("--noise-sigma", type=float, default=0.05, help="Gaussian noise level")
    p.add_argument("--polarity", choices=("brighter", "any"), default="brighter",
                   help="shape contrast against what lies beneath")
    p.add_argument("--min-shapes", type=int, default=1, help="fewest shapes per image")
    p.add_argument("--max-shapes", type=int, default=4, help="most shapes per image")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("weights", help="per-pixel masked distance and adjuster weight", formatter_class=fmt)
    p.add_argument("--pred", required=True, help="prediction PGM")
    p.add_argument("--gt", required=True, help="ground-truth PGM")
    p.add_argument("--fractional-gt", action="store_true", help="do not binarize gt at 0.5")
    p.add_argument("--out", default="-", help="output CSV ('-' for stdout)")
    _add_baa_flags(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("eval", help="ODS/OIS of a prediction directory", formatter_class=fmt)
    p.add_argument("--pred-dir", required=True, help="directory of <id>.pgm predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="-", help="report CSV ('-' for stdout)")
    p.add_argument("--per-image", default=None, help="optional per-image CSV")
    _add_metric_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train one configuration and evaluate on the test split",
                       formatter_class=fmt)
    p.add_argument("--mode", choices=MODES, default=BAA_SA, help="training configuration")
    p.add_argument("--out", default=None, help=f"run directory (default ${OUTPUT_ROOT_ENV}/<mode>-seed<seed>)")
    p.add_argument("--skip-calibration", action="store_true", help="baa-sa: use --thr instead of calibrating")
    p.add_argument("--warm-start", action="store_true", help="baa-sa: retrain from the pre-trained weights")
    _add_train_flags(p)
    _add_loss_flags(p)
    _add_baa_flags(p)
    _add_metric_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="ablation grid over thr_dev and b", formatter_class=fmt)
    p.add_argument("--thr-dev-list", type=_floats, default=_floats("0.1,0.2,0.3,0.4,0.5,0.6,0.7"),
                   help="comma-separated threshold windows")
    p.add_argument("--b-list", type=_floats, default=_floats("8,16,32"), help="comma-separated decay rates")
    p.add_argument("--out", default="-", help="output CSV ('-' for stdout)")
    _add_train_flags(p)
    _add_loss_flags(p)
    g = p.add_argument_group("adjuster")
    g.add_argument("--thr", type=float, default=0.7, help="binarization threshold")
    g.add_argument("--kind", choices=KINDS, default="exp", help="DWF family")
    p.set_defaults(func=cmd_sweep, thr_dev=0.2, decay_b=16.0)
    _add_metric_flags(p)

    p = sub.add_parser("gradmass", help="loss-gradient mass per threshold-distance bin", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bins", type=int, default=10, help="threshold-distance bins")
    p.add_argument("--no-baa", action="store_true", help="baseline loss only")
    p.add_argument("--out", default="-", help="output CSV ('-' for stdout)")
    _add_loss_flags(p)
    _add_baa_flags(p)
    p.set_defaults(func=cmd_gradmass)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "command", None) == "sweep" and (not args.thr_dev_list or not args.b_list):
        parser.error("sweep lists must be non-empty")
    if getattr(args, "bins", 1) < 1:
        parser.error("--bins must be >= 1")
    try:
        args.func(args)
    except CommandError as err:
        print(f"baa {args.command}: {err}", file=sys.stderr)
        return err.code
    except (ValueError, DomainError, ShapeError) as err:
        # configuration errors surface before any work begins
        if isinstance(err, (ManifestError, PgmError)):
            print(f"baa {args.command}: {err}", file=sys.stderr)
            return EXIT_IO
        parser.error(str(err))
    except OSError as err:
        print(f"baa {args.command}: {err}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
