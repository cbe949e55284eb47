"""Masked distance and binarization-aware adjuster weights.

All functions broadcast over numpy arrays and return a Python float for
scalar input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dwf import EXP, DomainError, DwfParams, _check_kind, dwf_extended, dwf_extended_derivative


@dataclass(frozen=True)
class BaaParams:
    thr: float = 0.7
    dwf: DwfParams = field(default_factory=DwfParams)
    kind: str = EXP

    def __post_init__(self):
        if not 0.0 <= self.thr <= 1.0:
            raise DomainError(f"thr must lie in [0, 1], got {self.thr}")
        _check_kind(self.kind)

    @classmethod
    def make(cls, thr=0.7, thr_dev=0.2, b=16.0, kind=EXP) -> "BaaParams":
        return cls(thr=thr, dwf=DwfParams(b=b, thr_dev=thr_dev), kind=kind)


def _unit(name, a):
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0) or np.any(a > 1) or np.any(np.isnan(a)):
        raise DomainError(f"{name} values must lie in [0, 1]")
    return a


def _scalar_out(*args, out):
    return float(out) if all(np.ndim(a) == 0 for a in args) else out


def masked_distance(pred, gt, thr):
    """Signed distance of ``pred`` from ``thr``; negative when on the wrong side of ``gt``.

    For binary ``gt`` this is ``+|pred - thr|`` for a correct decision and
    ``-|pred - thr|`` for a wrong one.
    """
    p = _unit("pred", pred)
    g = _unit("gt", gt)
    _unit("thr", thr)
    md = (p - thr) * g + (thr - p) * (1.0 - g)
    return _scalar_out(pred, gt, out=md)


def baa_weight(pred, gt, params: BaaParams):
    md = masked_distance(pred, gt, params.thr)
    return dwf_extended(md, params.dwf, params.kind)


def baa_weight_grad(pred, gt, params: BaaParams):
    """d(weight)/d(pred), by the chain rule through the masked distance."""
    md = masked_distance(pred, gt, params.thr)
    dmd = 2.0 * np.asarray(gt, dtype=np.float64) - 1.0
    out = dwf_extended_derivative(md, params.dwf, params.kind) * dmd
    return _scalar_out(pred, gt, out=out)


def hard_adjuster(pred, gt, thr):
    """1 for a wrong binary decision, 0 when pred and gt share a side of thr (ties count as shared)."""
    p = _unit("pred", pred)
    g = _unit("gt", gt)
    out = ((p - thr) * (g - thr) < 0).astype(np.float64)
    return _scalar_out(pred, gt, out=out)


def limit_adjuster(pred, gt, thr, thr_dev):
    """The ``b -> inf`` limit of :func:`baa_weight`.

    0 only for a correct decision at least ``thr_dev`` away from ``thr``.
    """
    p = _unit("pred", pred)
    g = _unit("gt", gt)
    settled = ((p - thr) * (g - thr) >= 0) & (np.abs(p - thr) >= thr_dev)
    out = np.where(settled, 0.0, 1.0)
    return _scalar_out(pred, gt, out=out)
