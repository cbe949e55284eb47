"""Binarization, tolerance matching and ODS/OIS edge-map evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .loss import ShapeError

CHEBYSHEV = "chebyshev"
EUCLIDEAN = "euclidean"
METRICS = (CHEBYSHEV, EUCLIDEAN)

REPORT_COLUMNS = ("threshold", "tp_pred", "fp", "tp_gt", "fn", "precision", "recall", "f1")
SUMMARY_COLUMNS = ("ods_thr", "ods_f1", "ois_f1")


def default_grid() -> np.ndarray:
    """Thresholds 0.01, 0.02, ..., 0.99."""
    return np.arange(1, 100) / 100.0


@dataclass(frozen=True)
class BinaryMap:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or min(bits.shape) < 1:
            raise ShapeError(f"binary map must be a non-empty 2-D grid, got shape {bits.shape}")
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


class ConfusionCounts(NamedTuple):
    tp_pred: int
    fp: int
    tp_gt: int
    fn: int

    def __add__(self, other):
        return ConfusionCounts(*(a + b for a, b in zip(self, other)))


ZERO_COUNTS = ConfusionCounts(0, 0, 0, 0)


def binarize(pred, thr: float) -> BinaryMap:
    return BinaryMap(np.asarray(pred, dtype=np.float64) >= thr)


def neighborhood(radius: int, metric: str = CHEBYSHEV) -> np.ndarray:
    """Boolean structuring element of all offsets within ``radius``."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    if metric == CHEBYSHEV:
        return np.ones_like(dy, dtype=bool)
    return dy * dy + dx * dx <= radius * radius


def _dilate(bits: np.ndarray, struct: np.ndarray) -> np.ndarray:
    if struct.shape == (1, 1):
        return bits
    return ndimage.binary_dilation(bits, structure=struct)


def match_with_tolerance(pred: BinaryMap, gt: BinaryMap, radius: float = 1,
                         metric: str = CHEBYSHEV) -> ConfusionCounts:
    """Independent (not one-to-one) matching within ``radius``.

    A predicted positive is a hit when any gt positive lies within the
    radius, and symmetrically for gt positives.
    """
    p, g = _bits(pred), _bits(gt)
    if p.shape != g.shape:
        raise ShapeError(f"map shapes differ: {p.shape} vs {g.shape}")
    struct = neighborhood(radius, metric)
    return _count(p, g, _dilate(g, struct), struct)


def _bits(m) -> np.ndarray:
    return m.bits if isinstance(m, BinaryMap) else BinaryMap(m).bits


def _count(p, g, g_dilated, struct) -> ConfusionCounts:
    n_pred = int(p.sum())
    n_gt = int(g.sum())
    tp_pred = int(np.count_nonzero(p & g_dilated))
    tp_gt = int(np.count_nonzero(g & _dilate(p, struct))) if n_pred else 0
    return ConfusionCounts(tp_pred, n_pred - tp_pred, tp_gt, n_gt - tp_gt)


def precision_recall_f(c: ConfusionCounts, beta: float = 1.0) -> Tuple[float, float, float]:
    n_pred = c.tp_pred + c.fp
    n_gt = c.tp_gt + c.fn
    precision = c.tp_pred / n_pred if n_pred else 0.0
    recall = c.tp_gt / n_gt if n_gt else 0.0
    b2 = beta * beta
    denom = b2 * precision + recall
    f = (1 + b2) * precision * recall / denom if denom > 0 else 0.0
    return precision, recall, f


def count_curve(pred, gt, grid, radius=1, metric=CHEBYSHEV) -> List[ConfusionCounts]:
    """Confusion counts of one image at every threshold of ``grid``."""
    pred = np.asarray(pred, dtype=np.float64)
    g = _bits(gt)
    if pred.shape != g.shape:
        raise ShapeError(f"prediction shape {pred.shape} != gt shape {g.shape}")
    struct = neighborhood(radius, metric)
    g_dil = _dilate(g, struct)
    return [_count(pred >= t, g, g_dil, struct) for t in grid]


@dataclass
class EvalReport:
    thresholds: np.ndarray
    counts: List[ConfusionCounts]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    ods_threshold: float
    ods_f1: float
    ois_f1: float
    image_thresholds: List[float] = field(default_factory=list)
    image_f1: List[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for t, c, p, r, f in zip(self.thresholds, self.counts, self.precision, self.recall, self.f1):
            w.writerow([f"{t:.4f}", *c, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}"])
        w.writerow([])
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([f"{self.ods_threshold:.4f}", f"{self.ods_f1:.6f}", f"{self.ois_f1:.6f}"])
        return buf.getvalue()

    def per_image_csv(self, ids: Sequence[str]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("id", "best_thr", "best_f1"))
        for i, t, f in zip(ids, self.image_thresholds, self.image_f1):
            w.writerow([i, f"{t:.4f}", f"{f:.6f}"])
        return buf.getvalue()


def _argmax_first(values) -> int:
    # np.argmax returns the first maximum: ties go to the smaller threshold
    return int(np.argmax(np.asarray(values)))


def _curves(dataset, grid, radius, metric):
    if len(dataset) == 0:
        raise ShapeError("empty dataset")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ShapeError("empty threshold grid")
    return grid, [count_curve(pred, gt, grid, radius, metric) for pred, gt in dataset]


def _ods_from_curves(grid, curves, beta):
    totals = [sum((curve[k] for curve in curves), ZERO_COUNTS) for k in range(len(grid))]
    prf = np.array([precision_recall_f(c, beta) for c in totals])
    k = _argmax_first(prf[:, 2])
    return totals, prf, k


def _ois_from_curves(grid, curves, beta):
    best_t, best_f = [], []
    for curve in curves:
        f = [precision_recall_f(c, beta)[2] for c in curve]
        k = _argmax_first(f)
        best_t.append(float(grid[k]))
        best_f.append(float(f[k]))
    return float(np.mean(best_f)), best_t, best_f


def ods(dataset, grid=None, radius=1, metric=CHEBYSHEV, beta=1.0):
    """Best dataset F over one shared threshold.

    Counts are accumulated over all images before computing F.  Returns
    ``(best_thr, best_f, curve)`` where ``curve`` lists
    ``(threshold, counts, precision, recall, f)`` per threshold.
    """
    grid, curves = _curves(dataset, default_grid() if grid is None else grid, radius, metric)
    totals, prf, k = _ods_from_curves(grid, curves, beta)
    curve = [(float(t), c, *map(float, row)) for t, c, row in zip(grid, totals, prf)]
    return float(grid[k]), float(prf[k, 2]), curve


def ois(dataset, grid=None, radius=1, metric=CHEBYSHEV, beta=1.0):
    """Mean over images of each image's best F.  Returns ``(ois_f, best_thresholds, best_fs)``."""
    grid, curves = _curves(dataset, default_grid() if grid is None else grid, radius, metric)
    return _ois_from_curves(grid, curves, beta)


def evaluate(dataset, grid=None, radius=1, metric=CHEBYSHEV, beta=1.0) -> EvalReport:
    """ODS and OIS together, sharing one pass of per-image counting.

    ``dataset`` is a sequence of ``(prediction grid, gt map)`` pairs.
    """
    grid, curves = _curves(dataset, default_grid() if grid is None else grid, radius, metric)
    totals, prf, k = _ods_from_curves(grid, curves, beta)
    ois_f, best_t, best_f = _ois_from_curves(grid, curves, beta)
    return EvalReport(
        thresholds=grid,
        counts=totals,
        precision=prf[:, 0],
        recall=prf[:, 1],
        f1=prf[:, 2],
        ods_threshold=float(grid[k]),
        ods_f1=float(prf[k, 2]),
        ois_f1=ois_f,
        image_thresholds=best_t,
        image_f1=best_f,
    )
