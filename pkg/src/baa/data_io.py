"""Synthetic edge datasets, PGM images and CSV manifests."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple

import numpy as np

MANIFEST_HEADER = ["id", "image", "gt"]
MANIFEST_VERSION = 1
_VERSION_LINE = f"#baa-manifest-version={MANIFEST_VERSION}"


class PgmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    image: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        if self.image.shape != self.gt.shape:
            raise ValueError(f"sample {self.id}: image {self.image.shape} vs gt {self.gt.shape}")
        if not np.all((self.gt == 0) | (self.gt == 1)):
            raise ValueError(f"sample {self.id}: gt is not binary")


@dataclass(frozen=True)
class ShapeConfig:
    min_shapes: int = 1
    max_shapes: int = 4
    min_extent: int = 5
    max_extent: int = 14
    noise_sigma: float = 0.05
    min_contrast: float = 0.3
    kinds: tuple = ("rect", "circle")
    polarity: str = "brighter"

    def validate(self):
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")
        if not 2 <= self.min_extent <= self.max_extent:
            raise ValueError("need 2 <= min_extent <= max_extent")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.min_contrast <= 0.5:
            raise ValueError("min_contrast must lie in [0, 0.5]")
        if not self.kinds or set(self.kinds) - {"rect", "circle"}:
            raise ValueError("kinds must be a non-empty subset of {'rect', 'circle'}")
        if self.polarity not in ("brighter", "any"):
            raise ValueError("polarity must be 'brighter' or 'any'")


# ---------------------------------------------------------------- generator

def boundary_map(labels: np.ndarray) -> np.ndarray:
    """Pixels of a painted region that touch, in the 4-neighborhood, a region painted earlier.

    ``labels`` holds the paint order (0 = background); outside the image
    counts as background.  A single shape yields its inner 1-pixel perimeter.
    """
    padded = np.pad(labels, 1, constant_values=0)
    centre = padded[1:-1, 1:-1]
    edge = np.zeros(labels.shape, dtype=bool)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = padded[1 + dy : 1 + dy + labels.shape[0], 1 + dx : 1 + dx + labels.shape[1]]
        edge |= nb < centre
    return edge


def _shape_mask(rng, size, cfg: ShapeConfig, kind):
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "rect":
        h, w = rng.integers(cfg.min_extent, cfg.max_extent + 1, size=2)
        y0 = rng.integers(0, size - h + 1)
        x0 = rng.integers(0, size - w + 1)
        return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    r = rng.integers(cfg.min_extent, cfg.max_extent + 1) / 2.0
    cy, cx = rng.uniform(r, size - r, size=2)
    return (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r


def _contrasting(rng, under: float, cfg: ShapeConfig) -> float:
    if cfg.polarity == "brighter":
        # the labelled (inner) side of every edge is then the brighter side
        lo = min(under + cfg.min_contrast, 1.0)
        return float(rng.uniform(lo, 1.0))
    while True:
        v = float(rng.uniform(0.0, 1.0))
        if abs(v - under) >= cfg.min_contrast:
            return v


def render_sample(rng, size: int, cfg: ShapeConfig):
    """Draw shapes onto a flat background; returns (clean image, labels)."""
    top = 1.0 - 2 * cfg.min_contrast if cfg.polarity == "brighter" else 1.0
    image = np.full((size, size), float(rng.uniform(0.0, max(top, 0.0))))
    labels = np.zeros((size, size), dtype=np.int64)
    n = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    for k in range(1, n + 1):
        kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
        mask = _shape_mask(rng, size, cfg, kind)
        if not mask.any():
            continue
        under = float(np.median(image[mask]))
        image[mask] = _contrasting(rng, under, cfg)
        labels[mask] = k
    return image, labels


def gen_synthetic(seed: int, count: int, size: int = 32, cfg: ShapeConfig = ShapeConfig()) -> List[Sample]:
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    cfg.validate()
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        clean, labels = render_sample(rng, size, cfg)
        noisy = clean + rng.normal(0.0, cfg.noise_sigma, clean.shape) if cfg.noise_sigma > 0 else clean
        gt = boundary_map(labels).astype(np.float64)
        samples.append(Sample(f"s{i:04d}", np.clip(noisy, 0.0, 1.0), gt))
    return samples


# ---------------------------------------------------------------------- PGM

def _read_token(data: bytes, pos: int):
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PgmError("unexpected end of header", start)
    return data[start:pos], start, pos


def _read_int(data: bytes, pos: int, what: str):
    tok, start, pos = _read_token(data, pos)
    if not tok.isdigit():
        raise PgmError(f"bad {what} {tok!r}", start)
    return int(tok), start, pos


def parse_pgm(data: bytes):
    """Decode P2/P5 bytes; returns ``(grid in [0, 1], maxval)``."""
    if len(data) < 2:
        raise PgmError("file too short for magic number", 0)
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PgmError(f"unsupported magic {magic!r}", 0)
    pos = 2
    width, off, pos = _read_int(data, pos, "width")
    height, _, pos = _read_int(data, pos, "height")
    maxval, moff, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PgmError(f"bad dimensions {width}x{height}", off)
    if not 1 <= maxval <= 65535:
        raise PgmError(f"maxval {maxval} out of range", moff)
    n = width * height
    if magic == b"P5":
        if pos >= len(data) or not data[pos : pos + 1].isspace():
            raise PgmError("missing whitespace after maxval", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = n * dtype.itemsize
        if len(data) - pos < need:
            raise PgmError(f"truncated raster: need {need} bytes, have {len(data) - pos}", pos)
        values = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.float64)
    else:
        values = np.empty(n, dtype=np.float64)
        for i in range(n):
            try:
                v, start, pos = _read_int(data, pos, "pixel")
            except PgmError as err:
                raise PgmError(f"truncated raster at pixel {i} of {n}", err.offset) from None
            values[i] = v
    if values.max(initial=0) > maxval:
        raise PgmError("pixel value exceeds maxval", pos)
    return values.reshape(height, width) / maxval, maxval


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())[0]


def encode_pgm(grid, maxval: int = 255, ascii: bool = False) -> bytes:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("PGM grid must be 2-D")
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval {maxval} out of range")
    q = np.rint(np.clip(g, 0.0, 1.0) * maxval).astype(np.int64)
    h, w = g.shape
    if ascii:
        rows = "\n".join(" ".join(str(v) for v in row) for row in q)
        return f"P2\n{w} {h}\n{maxval}\n{rows}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.astype(dtype).tobytes()


def save_pgm(path, grid, maxval: int = 255, ascii: bool = False) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(grid, maxval, ascii))


# ----------------------------------------------------------------- manifests

class ManifestEntry(NamedTuple):
    id: str
    image: Path
    gt: Path


@dataclass
class Manifest:
    entries: List[ManifestEntry]
    version: int = MANIFEST_VERSION

    @property
    def ids(self) -> List[str]:
        return [e.id for e in self.entries]


def load_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    root = path.parent
    with open(path, newline="") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    version = MANIFEST_VERSION
    if lines and lines[0].startswith("#"):
        key, _, val = lines[0][1:].partition("=")
        if key.strip() == "baa-manifest-version":
            version = int(val)
        lines = lines[1:]
    if not lines or not lines[0].strip():
        raise ManifestError(f"{path}: missing header")
    rows = list(csv.reader(lines))
    if rows[0] != MANIFEST_HEADER:
        raise ManifestError(f"{path}: bad header {rows[0]!r}, expected {','.join(MANIFEST_HEADER)}")
    entries, seen = [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        sid, img, gt = row
        if sid in seen:
            raise ManifestError(f"{path}: duplicate id {sid!r}")
        seen.add(sid)
        entry = ManifestEntry(sid, root / img, root / gt)
        if check_files:
            for p in (entry.image, entry.gt):
                if not p.is_file():
                    raise ManifestError(f"{path}: missing file {p} for id {sid!r}")
        entries.append(entry)
    return Manifest(entries, version)


def save_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        fh.write(_VERSION_LINE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            w.writerow([e.id, _rel(e.image, root), _rel(e.gt, root)])


def _rel(p: Path, root: Path) -> str:
    return Path(os.path.relpath(Path(p).resolve(), root)).as_posix()


def load_dataset(manifest: Manifest) -> List[Sample]:
    """Load every sample; gt is binarized at 0.5."""
    out = []
    for e in manifest.entries:
        image = load_pgm(e.image)
        gt = (load_pgm(e.gt) >= 0.5).astype(np.float64)
        out.append(Sample(e.id, image, gt))
    return out


def write_dataset(out_dir, samples: List[Sample]) -> Path:
    """Write images, gt maps and ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        img = out_dir / "images" / f"{s.id}.pgm"
        gt = out_dir / "gt" / f"{s.id}.pgm"
        save_pgm(img, s.image)
        save_pgm(gt, s.gt)
        entries.append(ManifestEntry(s.id, img, gt))
    path = out_dir / "manifest.csv"
    save_manifest(path, Manifest(entries))
    return path
