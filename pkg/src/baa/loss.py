"""Pixel-wise baseline losses and the binarization-aware adjusted loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .adjuster import BaaParams, baa_weight, baa_weight_grad

BCE = "bce"
WBCE = "wbce"
THROUGH_WEIGHT = "through_weight"
WEIGHT_AS_CONSTANT = "weight_as_constant"


class ShapeError(ValueError):
    """Structural problem with an input (mismatched or empty grids)."""


@dataclass(frozen=True)
class PixelBatch:
    pred: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.pred, dtype=np.float64)
        gt = np.asarray(self.gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
        if pred.size == 0:
            raise ShapeError("empty batch")
        for name, a in (("pred", pred), ("gt", gt)):
            if np.any(a < 0) or np.any(a > 1) or np.any(np.isnan(a)):
                raise ValueError(f"{name} values must lie in [0, 1]")
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "gt", gt)


@dataclass(frozen=True)
class LossConfig:
    base: str = WBCE
    baa: Optional[BaaParams] = None
    delta: float = 1.0
    grad_mode: str = WEIGHT_AS_CONSTANT
    clamp_eps: float = 1e-7
    wbce_per_image: bool = False
    binarize_gt: bool = True

    def __post_init__(self):
        if self.base not in (BCE, WBCE):
            raise ValueError(f"unknown base loss {self.base!r}")
        if self.grad_mode not in (THROUGH_WEIGHT, WEIGHT_AS_CONSTANT):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if not 0 < self.clamp_eps <= 0.01:
            raise ValueError(f"clamp_eps must lie in (0, 0.01], got {self.clamp_eps}")


class LossResult(NamedTuple):
    total: float
    weights: np.ndarray  # adjuster weight per element (ones without BAA)
    grad: np.ndarray  # d(total)/d(pred) per element
    base: np.ndarray  # baseline loss per element


def binarize_gt(gt) -> np.ndarray:
    return (np.asarray(gt, dtype=np.float64) >= 0.5).astype(np.float64)


def bce_elem(pred, gt, eps: float = 1e-7):
    """Binary cross-entropy per element and its derivative in ``pred``.

    ``pred`` is clamped to ``[eps, 1 - eps]``; the derivative is zero where
    the clamp is active.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    p = np.clip(pred, eps, 1.0 - eps)
    loss = -(gt * np.log(p) + (1.0 - gt) * np.log1p(-p))
    grad = (p - gt) / (p * (1.0 - p))
    grad = np.where((pred < eps) | (pred > 1.0 - eps), 0.0, grad)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def wbce_weights(gt, per_image: bool = False) -> np.ndarray:
    """Class-balancing weights: positives get the negative fraction and vice versa.

    Falls back to uniform weights when a group has no positives or no
    negatives.  ``per_image`` balances each leading-axis slice separately.
    """
    g = binarize_gt(gt)
    if per_image and g.ndim >= 3:
        return np.stack([wbce_weights(gi) for gi in g])
    n = g.size
    n_pos = g.sum()
    if n_pos == 0 or n_pos == n:
        return np.ones_like(g)
    alpha = (n - n_pos) / n
    return np.where(g > 0, alpha, 1.0 - alpha)


def wbce_batch(batch: PixelBatch, eps: float = 1e-7, per_image: bool = False):
    w = wbce_weights(batch.gt, per_image)
    loss, grad = bce_elem(batch.pred, batch.gt, eps)
    return w * loss, w * grad


def base_loss(batch: PixelBatch, cfg: LossConfig):
    if cfg.base == WBCE:
        return wbce_batch(batch, cfg.clamp_eps, cfg.wbce_per_image)
    return bce_elem(batch.pred, batch.gt, cfg.clamp_eps)


def adjusted_loss(batch: PixelBatch, cfg: LossConfig) -> LossResult:
    """Sum over elements of ``(w_i + delta) * L_i`` with ``w_i`` the adjuster weight.

    Without ``cfg.baa`` the total is the plain sum of the baseline loss
    (``delta`` unused).  In ``weight_as_constant`` mode the weight is held
    fixed when differentiating; ``through_weight`` adds ``(dw/dpred) * L``.
    """
    if cfg.binarize_gt:
        batch = PixelBatch(batch.pred, binarize_gt(batch.gt))
    loss, dloss = base_loss(batch, cfg)
    loss = np.asarray(loss, dtype=np.float64)
    dloss = np.asarray(dloss, dtype=np.float64)
    if cfg.baa is None:
        return LossResult(float(np.sum(loss)), np.ones_like(loss), dloss, loss)

    w = np.asarray(baa_weight(batch.pred, batch.gt, cfg.baa), dtype=np.float64)
    scale = w + cfg.delta
    total = float(np.sum(scale * loss))
    grad = scale * dloss
    if cfg.grad_mode == THROUGH_WEIGHT:
        grad = grad + np.asarray(baa_weight_grad(batch.pred, batch.gt, cfg.baa)) * loss
    return LossResult(total, w, grad, loss)
