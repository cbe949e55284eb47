"""Distance weight functions.

A distance weight function (DWF) maps the distance of a correct prediction
from the binarization threshold to a weight in [0, 1].  It equals 1 at
distance 0, reaches 0 at the window edge ``thr_dev`` and is continuous,
non-increasing and concave in between.

Two families are provided: the exponential profile controlled by a decay
rate ``b`` and the linear profile ``1 - x / thr_dev`` (its ``b -> 0`` limit
and a lower bound for every DWF).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXP = "exp"
LINEAR = "linear"
KINDS = (EXP, LINEAR)


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a weight function."""


@dataclass(frozen=True)
class DwfParams:
    b: float = 16.0
    thr_dev: float = 0.2

    def __post_init__(self):
        if not np.isfinite(self.thr_dev) or self.thr_dev <= 0:
            raise DomainError(f"thr_dev must be > 0, got {self.thr_dev}")
        if not self.b >= 0:
            raise DomainError(f"b must be >= 0, got {self.b}")


def _check_kind(kind):
    if kind not in KINDS:
        raise DomainError(f"unknown DWF kind {kind!r}, expected one of {KINDS}")


def _check_window(x, thr_dev):
    if np.any(x < 0) or np.any(x > thr_dev) or np.any(np.isnan(x)):
        raise DomainError(f"distance must lie in [0, {thr_dev}]")


def _as_output(x, out):
    return float(out) if np.ndim(x) == 0 else out


def dwf_exp(x, p: DwfParams):
    """Exponential DWF ``(e^{bx} - e^{bT}) / (1 - e^{bT})`` on ``[0, T]``.

    Evaluated as ``expm1(b(x - T)) / expm1(-bT)``, which is the same
    function with both exponents non-positive: no overflow for large ``b``
    and full precision for small ``b``.
    """
    if p.b <= 0:
        raise DomainError("exponential DWF needs b > 0; use the linear kind for b = 0")
    x = np.asarray(x, dtype=np.float64)
    _check_window(x, p.thr_dev)
    out = np.expm1(p.b * (x - p.thr_dev)) / np.expm1(-p.b * p.thr_dev)
    return _as_output(x, np.clip(out, 0.0, 1.0))


def dwf_linear(x, thr_dev: float):
    x = np.asarray(x, dtype=np.float64)
    _check_window(x, thr_dev)
    return _as_output(x, 1.0 - x / thr_dev)


def dwf_extended(x, p: DwfParams, kind: str = EXP):
    """DWF extended to the real line: 1 below 0, 0 beyond ``thr_dev``."""
    _check_kind(kind)
    x = np.asarray(x, dtype=np.float64)
    inner = np.clip(x, 0.0, p.thr_dev)
    if kind == EXP:
        out = dwf_exp(inner, p)
    else:
        out = dwf_linear(inner, p.thr_dev)
    # clipping already pins the flat branches to f(0) = 1 and f(T) = 0
    return _as_output(x, np.asarray(out, dtype=np.float64))


def dwf_hard(x, thr_dev: float):
    """Binary step: 1 for ``x < thr_dev``, else 0."""
    x = np.asarray(x, dtype=np.float64)
    return _as_output(x, (x < thr_dev).astype(np.float64))


def dwf_extended_derivative(x, p: DwfParams, kind: str = EXP):
    """Derivative of :func:`dwf_extended` with respect to ``x``.

    Zero on the flat branches.  At the kinks ``x = 0`` and ``x = thr_dev``
    the one-sided derivative from inside the window is returned.
    """
    _check_kind(kind)
    x = np.asarray(x, dtype=np.float64)
    inside = (x >= 0) & (x <= p.thr_dev)
    if kind == EXP:
        if p.b <= 0:
            raise DomainError("exponential DWF needs b > 0")
        xi = np.clip(x, 0.0, p.thr_dev)
        slope = p.b * np.exp(p.b * (xi - p.thr_dev)) / np.expm1(-p.b * p.thr_dev)
    else:
        slope = np.full_like(x, -1.0 / p.thr_dev)
    return _as_output(x, np.where(inside, slope, 0.0))
