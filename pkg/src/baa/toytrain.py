"""Desk-scale edge detector: a per-pixel MLP over k x k patches, trained with Adam.

Forward and backward passes are written out by hand so gradients of the
adjusted loss can be checked exactly against finite differences.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .adjuster import hard_adjuster
from .loss import LossConfig, PixelBatch, ShapeError, adjusted_loss, binarize_gt

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "baa-tinymodel"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")
_P_MIN, _P_MAX = 1e-16, 1.0 - 1e-16


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite value."""


@dataclass
class TinyModel:
    W1: np.ndarray  # (hidden, k*k)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (hidden,)
    b2: np.ndarray  # shape (), kept as an array so Adam can update it in place

    @property
    def patch_size(self) -> int:
        return int(round(np.sqrt(self.W1.shape[1])))

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "TinyModel":
        return TinyModel(**{k: v.copy() for k, v in self.params().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params().values()])

    @classmethod
    def zeros(cls, patch_size: int = 5, hidden: int = 16) -> "TinyModel":
        return cls(np.zeros((hidden, patch_size ** 2)), np.zeros(hidden), np.zeros(hidden), np.zeros(()))


def init_model(seed_or_rng, patch_size: int = 5, hidden: int = 16) -> TinyModel:
    """Uniform init in +-1/sqrt(fan_in) per layer."""
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"patch_size must be odd and positive, got {patch_size}")
    rng = np.random.default_rng(seed_or_rng)
    fan1 = patch_size ** 2
    a1, a2 = 1.0 / np.sqrt(fan1), 1.0 / np.sqrt(hidden)
    return TinyModel(
        W1=rng.uniform(-a1, a1, (hidden, fan1)),
        b1=rng.uniform(-a1, a1, hidden),
        W2=rng.uniform(-a2, a2, hidden),
        b2=np.asarray(rng.uniform(-a2, a2)),
    )


# ------------------------------------------------------------------ forward

def extract_patches(images: np.ndarray, k: int) -> np.ndarray:
    """(B, H, W) -> (B*H*W, k*k) with reflect padding of k // 2."""
    images = np.asarray(images, dtype=np.float64)
    r = k // 2
    padded = np.pad(images, ((0, 0), (r, r), (r, r)), mode="reflect") if r else images
    win = sliding_window_view(padded, (k, k), axis=(1, 2))
    return win.reshape(-1, k * k)


class _Cache(NamedTuple):
    X: np.ndarray
    H: np.ndarray
    p: np.ndarray


def _forward(model: TinyModel, images: np.ndarray) -> _Cache:
    X = extract_patches(images, model.patch_size)
    H = np.tanh(X @ model.W1.T + model.b1)
    p = expit(H @ model.W2 + model.b2)
    return _Cache(X, H, p)


def forward(model: TinyModel, image) -> np.ndarray:
    """Per-pixel prediction for one image (H, W) or a stack (B, H, W)."""
    image = np.asarray(image, dtype=np.float64)
    stack = image if image.ndim == 3 else image[None]
    p = _forward(model, stack).p.reshape(stack.shape)
    p = np.clip(p, _P_MIN, _P_MAX)
    return p if image.ndim == 3 else p[0]


# ----------------------------------------------------------------- backward

class Gradients(NamedTuple):
    total: float
    grads: Dict[str, np.ndarray]
    pred: np.ndarray
    dpred: np.ndarray


def loss_and_grads(model: TinyModel, images, gts, cfg: LossConfig) -> Gradients:
    """Adjusted loss of a batch and its exact gradient for every parameter."""
    images = np.asarray(images, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if images.ndim == 2:
        images, gts = images[None], gts[None]
    if images.shape != gts.shape:
        raise ShapeError(f"images {images.shape} vs gts {gts.shape}")
    c = _forward(model, images)
    pred = np.clip(c.p, _P_MIN, _P_MAX).reshape(images.shape)
    res = adjusted_loss(PixelBatch(pred, gts), cfg)
    dpred = res.grad.ravel()
    dz = dpred * c.p * (1.0 - c.p)
    dH = np.outer(dz, model.W2) * (1.0 - c.H * c.H)
    grads = {
        "W1": dH.T @ c.X,
        "b1": dH.sum(axis=0),
        "W2": c.H.T @ dz,
        "b2": np.asarray(dz.sum()),
    }
    if not np.isfinite(res.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingError("non-finite loss or gradient")
    return Gradients(res.total, grads, pred, res.grad)


def backward(model: TinyModel, images, gts, cfg: LossConfig) -> Dict[str, np.ndarray]:
    return loss_and_grads(model, images, gts, cfg).grads


# --------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
    """One bias-corrected Adam update with L2 weight decay folded into the gradient.

    Returns ``(new_params, state)``; ``state`` is updated in place.
    """
    state.step += 1
    t = state.step
    out = {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name}")
        if state.weight_decay:
            g = g + state.weight_decay * theta
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        out[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, state


# -------------------------------------------------------------------- train

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-8
    crop_size: int = 32
    refresh_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.crop_size < 1 or self.refresh_every < 1:
            raise ValueError("batch_size, crop_size and refresh_every must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")


@dataclass
class TrainLog:
    losses: List[float] = field(default_factory=list)
    ods: List[Optional[float]] = field(default_factory=list)
    ois: List[Optional[float]] = field(default_factory=list)
    histograms: List[tuple] = field(default_factory=list)  # (epoch, GradientMass)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("epoch", "loss", "ods", "ois"))
        for e, (loss, o, i) in enumerate(zip(self.losses, self.ods, self.ois), start=1):
            w.writerow([e, repr(loss), "" if o is None else f"{o:.6f}", "" if i is None else f"{i:.6f}"])
        return buf.getvalue()


def _crop_offsets(rng, shape, crop):
    h, w = shape
    return int(rng.integers(0, h - crop + 1)), int(rng.integers(0, w - crop + 1))


def train(model: TinyModel, samples: Sequence, cfg: LossConfig, tcfg: TrainConfig = TrainConfig(),
          val: Optional[Sequence] = None, eval_every: int = 0, hist_every: int = 0,
          hist_bins: int = 10, on_sample=None):
    """Train ``model`` (a copy is returned) on samples with ``.image`` and ``.gt``.

    Random square crops are redrawn every ``refresh_every`` epochs.  With
    ``val`` and ``eval_every > 0`` the validation ODS/OIS is logged.
    ``on_sample(id)`` is called for every sample drawn into a batch.
    """
    from .metrics import evaluate  # local import keeps module import light

    if len(samples) == 0:
        raise ValueError("empty training set")
    model = model.copy()
    log_ = TrainLog()
    rng = np.random.default_rng(tcfg.seed)
    crop = min(tcfg.crop_size, *(min(s.image.shape) for s in samples))
    state = AdamState(lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    offsets = None
    for epoch in range(tcfg.epochs):
        if epoch % tcfg.refresh_every == 0:
            offsets = [_crop_offsets(rng, s.image.shape, crop) for s in samples]
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            imgs, gts = [], []
            for j in idx:
                s = samples[j]
                if on_sample is not None:
                    on_sample(s.id)
                y, x = offsets[j]
                imgs.append(s.image[y : y + crop, x : x + crop])
                gts.append(s.gt[y : y + crop, x : x + crop])
            try:
                res = loss_and_grads(model, np.stack(imgs), np.stack(gts), cfg)
            except TrainingError as err:
                raise TrainingError(f"epoch {epoch + 1}, batch at {start}: {err}") from None
            epoch_loss += res.total
            new, state = adam_step(state, model.params(), res.grads)
            model = TinyModel(**new)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"epoch {epoch + 1}: non-finite loss {epoch_loss}")
        log_.losses.append(epoch_loss)
        o = i = None
        if val is not None and eval_every and (epoch + 1) % eval_every == 0:
            rep = evaluate([(forward(model, s.image), s.gt) for s in val])
            o, i = rep.ods_f1, rep.ois_f1
        log_.ods.append(o)
        log_.ois.append(i)
        if hist_every and (epoch + 1) % hist_every == 0:
            first = samples[0]
            log_.histograms.append((epoch + 1, gradient_mass_histogram(model, first.image, first.gt, cfg, bins=hist_bins)))
        log.debug("epoch %d loss %.6g", epoch + 1, epoch_loss)
    return model, log_


# ---------------------------------------------------------------- inference

def _tile_starts(n: int, patch: int, stride: int) -> List[int]:
    if n <= patch:
        return [0]
    starts = list(range(0, n - patch, stride))
    starts.append(n - patch)
    return starts


def predict_tiled(model: TinyModel, image, patch: int = 32, stride: int = 28) -> np.ndarray:
    """Predict overlapping tiles independently and average where they overlap."""
    if stride <= 0 or stride > patch:
        raise ShapeError(f"stride must lie in [1, patch={patch}], got {stride}")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    acc = np.zeros((h, w))
    hits = np.zeros((h, w))
    ph, pw = min(patch, h), min(patch, w)
    for y in _tile_starts(h, patch, stride):
        for x in _tile_starts(w, patch, stride):
            acc[y : y + ph, x : x + pw] += forward(model, image[y : y + ph, x : x + pw])
            hits[y : y + ph, x : x + pw] += 1
    return acc / hits


# -------------------------------------------------------------- diagnostics

class GradientMass(NamedTuple):
    edges: np.ndarray
    correct: np.ndarray
    wrong: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("bin_lo", "bin_hi", "correct_mass", "wrong_mass"))
        for lo, hi, c, x in zip(self.edges[:-1], self.edges[1:], self.correct, self.wrong):
            w.writerow([f"{lo:.4f}", f"{hi:.4f}", repr(float(c)), repr(float(x))])
        return buf.getvalue()


def gradient_mass(pred, gt, dpred, thr: float, bins=10) -> GradientMass:
    """Sum of |d loss / d pred| per bin of |pred - thr|, split by decision correctness."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = binarize_gt(gt).ravel()
    mass = np.abs(np.asarray(dpred, dtype=np.float64).ravel())
    dist = np.abs(pred - thr)
    wrong = np.asarray(hard_adjuster(pred, gt, thr), dtype=bool)
    edges = np.linspace(0.0, 1.0, bins + 1) if np.ndim(bins) == 0 else np.asarray(bins, dtype=np.float64)
    c, _ = np.histogram(dist[~wrong], bins=edges, weights=mass[~wrong])
    x, _ = np.histogram(dist[wrong], bins=edges, weights=mass[wrong])
    return GradientMass(edges, c, x)


def gradient_mass_histogram(model: TinyModel, images, gts, cfg: LossConfig, bins=10,
                            thr: Optional[float] = None) -> GradientMass:
    """Where the loss gradient goes: mass per threshold-distance bin.

    ``thr`` defaults to the adjuster threshold, or 0.7 without one.
    """
    if thr is None:
        thr = cfg.baa.thr if cfg.baa is not None else 0.7
    res = loss_and_grads(model, images, gts, cfg)
    return gradient_mass(res.pred, np.asarray(gts).reshape(res.pred.shape), res.dpred, thr, bins)


# -------------------------------------------------------------- checkpoints

def checkpoint_json(model: TinyModel) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "patch_size": model.patch_size,
        "hidden": model.hidden,
        "W1": model.W1.tolist(),
        "b1": model.b1.tolist(),
        "W2": model.W2.tolist(),
        "b2": float(model.b2),
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(path, model: TinyModel) -> None:
    with open(path, "w") as fh:
        fh.write(checkpoint_json(model))


def load_checkpoint(path) -> TinyModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    k, h = doc["patch_size"], doc["hidden"]
    model = TinyModel(
        W1=np.asarray(doc["W1"], dtype=np.float64).reshape(h, k * k),
        b1=np.asarray(doc["b1"], dtype=np.float64).reshape(h),
        W2=np.asarray(doc["W2"], dtype=np.float64).reshape(h),
        b2=np.asarray(float(doc["b2"])),
    )
    if not np.all(np.isfinite(model.flat())):
        raise ValueError(f"{path}: non-finite parameters")
    return model
