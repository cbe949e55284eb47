"""Self-adaptive threshold protocol.

1. split the data into pre-train, validation and test parts;
2. train with the baseline loss on pre-train and take the validation ODS
   threshold;
3. retrain with the adjusted loss at that threshold on pre-train plus
   validation, then evaluate on test.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .adjuster import BaaParams
from .dwf import EXP
from .loss import LossConfig, WBCE, WEIGHT_AS_CONSTANT
from .metrics import CHEBYSHEV, EvalReport, default_grid, evaluate
from .toytrain import TinyModel, TrainConfig, TrainLog, checkpoint_json, init_model, predict_tiled, train

BASELINE = "baseline"
BAA_FIXED = "baa-fixed"
BAA_SA = "baa-sa"
MODES = (BASELINE, BAA_FIXED, BAA_SA)


class CalibrationError(RuntimeError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    pretrain: List[str]
    validation: List[str]
    test: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.pretrain or not self.validation:
            raise SplitError("pre-train and validation parts must be non-empty")
        parts = (set(self.pretrain), set(self.validation), set(self.test))
        if sum(map(len, parts)) != len(self.pretrain) + len(self.validation) + len(self.test):
            raise SplitError("duplicate ids within a split part")
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise SplitError("split parts overlap")

    @property
    def train(self) -> List[str]:
        return self.pretrain + self.validation

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("id", "part"))
        for part in ("pretrain", "validation", "test"):
            for i in getattr(self, part):
                w.writerow((i, part))
        return buf.getvalue()


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(ids: Sequence[str], validation_fraction: float = 0.25, test_fraction: float = 0.0,
                  seed: int = 0) -> SplitSpec:
    """Seeded shuffle, then carve off test, then validation from what remains.

    ``test_fraction`` is taken from the whole set and ``validation_fraction``
    from the training remainder, so 400 training ids at 0.25 give 300/100.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise SplitError("duplicate sample ids")
    if not 0 < validation_fraction < 1:
        raise SplitError(f"validation_fraction must lie in (0, 1), got {validation_fraction}")
    if not 0 <= test_fraction < 1:
        raise SplitError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    n_test = _round_half_up(len(ids) * test_fraction)
    rest = order[n_test:]
    n_val = _round_half_up(len(rest) * validation_fraction)
    if n_val < 1 or n_val >= len(rest):
        raise SplitError(f"{len(ids)} samples are too few for the requested fractions")
    return SplitSpec(pretrain=rest[n_val:], validation=rest[:n_val], test=order[:n_test])


@dataclass(frozen=True)
class MetricConfig:
    grid: tuple = tuple(default_grid())
    radius: float = 1
    metric: str = CHEBYSHEV
    beta: float = 1.0


@dataclass(frozen=True)
class ProtocolConfig:
    mode: str = BAA_SA
    base: str = WBCE
    thr: float = 0.7  # used by baa-fixed, and by baa-sa when calibration is skipped
    thr_dev: float = 0.2
    b: float = 16.0
    kind: str = EXP
    delta: float = 1.0
    grad_mode: str = WEIGHT_AS_CONSTANT
    skip_calibration: bool = False
    warm_start: bool = False
    patch_size: int = 5
    hidden: int = 16
    tile: int = 32
    stride: int = 28
    train: TrainConfig = TrainConfig()
    metrics: MetricConfig = MetricConfig()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def base_loss(self) -> LossConfig:
        return LossConfig(base=self.base, baa=None, delta=self.delta, grad_mode=self.grad_mode)

    def baa_loss(self, thr: float) -> LossConfig:
        baa = BaaParams.make(thr=thr, thr_dev=self.thr_dev, b=self.b, kind=self.kind)
        return replace(self.base_loss(), baa=baa)


def predict_all(model: TinyModel, samples, tile: int = 32, stride: int = 28):
    return [(predict_tiled(model, s.image, tile, stride), s.gt) for s in samples]


def evaluate_model(model: TinyModel, samples, cfg: ProtocolConfig) -> EvalReport:
    m = cfg.metrics
    return evaluate(predict_all(model, samples, cfg.tile, cfg.stride), np.asarray(m.grid), m.radius, m.metric, m.beta)


def _check_finite(log: TrainLog):
    if not all(np.isfinite(log.losses)):
        raise CalibrationError("training diverged (non-finite loss)")


def calibrate_threshold(pretrain, validation, cfg: ProtocolConfig, seed: int = 0, trace=None):
    """Train with the baseline loss on ``pretrain``; return the validation ODS threshold.

    Returns ``(thr, pretrained model, validation report, train log)``.
    """
    model = init_model(seed, cfg.patch_size, cfg.hidden)
    try:
        model, log = train(model, pretrain, cfg.base_loss(), replace(cfg.train, seed=seed), on_sample=trace)
    except RuntimeError as err:
        raise CalibrationError(f"pre-training failed: {err}") from err
    _check_finite(log)
    report = evaluate_model(model, validation, cfg)
    return report.ods_threshold, model, report, log


@dataclass
class ProtocolResult:
    split: SplitSpec
    thr: Optional[float]
    final_model: TinyModel
    log: TrainLog
    report: EvalReport
    pretrained_model: Optional[TinyModel] = None
    validation_report: Optional[EvalReport] = None
    trained_ids: List[str] = field(default_factory=list)
    config: Optional[ProtocolConfig] = None
    seed: int = 0

    def metadata(self) -> Dict:
        cfg = self.config
        return {
            "mode": cfg.mode,
            "seed": self.seed,
            "thr": self.thr,
            "calibrated": cfg.mode == BAA_SA and not cfg.skip_calibration,
            "thr_dev": cfg.thr_dev,
            "b": cfg.b,
            "delta": cfg.delta,
            "kind": cfg.kind,
            "base": cfg.base,
            "grad_mode": cfg.grad_mode,
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "lr": cfg.train.lr,
            "weight_decay": cfg.train.weight_decay,
            "ods_thr": self.report.ods_threshold,
            "ods_f1": self.report.ods_f1,
            "ois_f1": self.report.ois_f1,
        }


def run_protocol(samples, split: SplitSpec, cfg: ProtocolConfig, seed: int = 0) -> ProtocolResult:
    """Run one training configuration end to end and evaluate on the test part.

    ``baseline`` and ``baa-fixed`` train once on pre-train plus validation.
    ``baa-sa`` first calibrates the threshold (unless ``skip_calibration``,
    which falls back to ``cfg.thr``) and then retrains.
    """
    by_id = {s.id: s for s in samples}
    missing = [i for i in split.pretrain + split.validation + split.test if i not in by_id]
    if missing:
        raise SplitError(f"split references unknown ids: {missing[:5]}")
    if not split.test:
        raise SplitError("protocol needs a non-empty test part")
    pre = [by_id[i] for i in split.pretrain]
    val = [by_id[i] for i in split.validation]
    test = [by_id[i] for i in split.test]
    trained: List[str] = []

    pretrained = val_report = None
    thr: Optional[float] = None
    if cfg.mode == BASELINE:
        loss = cfg.base_loss()
    elif cfg.mode == BAA_FIXED or cfg.skip_calibration:
        thr = cfg.thr
        loss = cfg.baa_loss(thr)
    else:
        thr, pretrained, val_report, _ = calibrate_threshold(pre, val, cfg, seed, trace=trained.append)
        loss = cfg.baa_loss(thr)

    start = pretrained if (cfg.warm_start and pretrained is not None) else init_model(seed, cfg.patch_size, cfg.hidden)
    try:
        final, log = train(start, pre + val, loss, replace(cfg.train, seed=seed), on_sample=trained.append)
    except RuntimeError as err:
        raise CalibrationError(f"training failed: {err}") from err
    _check_finite(log)
    leaked = set(trained) & set(split.test)
    if leaked:
        raise CalibrationError(f"test ids used in training: {sorted(leaked)[:5]}")
    report = evaluate_model(final, test, cfg)
    return ProtocolResult(split, thr, final, log, report, pretrained, val_report, trained, cfg, seed)


def write_run_dir(out_dir, result: ProtocolResult) -> Path:
    """Split manifest, threshold record, checkpoints, train log and eval report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.csv").write_text(result.split.to_csv())
    (out / "run.json").write_text(json.dumps(result.metadata(), indent=1, sort_keys=True) + "\n")
    (out / "model.json").write_text(checkpoint_json(result.final_model))
    (out / "train_log.csv").write_text(result.log.to_csv())
    (out / "eval.csv").write_text(result.report.to_csv())
    (out / "eval_per_image.csv").write_text(result.report.per_image_csv(result.split.test))
    if result.pretrained_model is not None:
        (out / "pretrained_model.json").write_text(checkpoint_json(result.pretrained_model))
        (out / "validation_eval.csv").write_text(result.validation_report.to_csv())
    return out
