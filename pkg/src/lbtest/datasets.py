"""Labeled input sets: IDX loading/writing, synthetic blobs and seeded splits."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, IdxFormatError, ShapeError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Rows of features in [0, 1] with optional labels and stable integer ids.

    Ids survive subsetting and splitting, so downstream code can check
    disjointness and report per-input results against the original rows.
    """

    xs: np.ndarray
    ys: np.ndarray | None = None
    num_classes: int | None = None
    ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        xs = np.array(self.xs, dtype=np.float64)
        if xs.ndim != 2:
            raise ShapeError(f"xs must be a matrix, got shape {xs.shape}")
        if not np.isfinite(xs).all():
            raise DomainError("features must be finite")
        np.clip(xs, 0.0, 1.0, out=xs)
        xs.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        n = xs.shape[0]
        if self.ys is not None:
            ys = np.array(self.ys, dtype=np.int64)
            if ys.shape != (n,):
                raise ShapeError(f"{n} rows but labels have shape {ys.shape}")
            C = self.num_classes if self.num_classes is not None else (int(ys.max()) + 1 if n else 0)
            if n and (ys.min() < 0 or ys.max() >= C):
                raise DomainError(f"labels must lie in [0, {C})")
            ys.setflags(write=False)
            object.__setattr__(self, "ys", ys)
            object.__setattr__(self, "num_classes", C)
        ids = np.arange(n, dtype=np.int64) if self.ids is None else np.array(self.ids, dtype=np.int64)
        if ids.shape != (n,):
            raise ShapeError("ids must have one entry per row")
        if len(np.unique(ids)) != n:
            raise DomainError("ids must be unique")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.xs.shape[0]

    @property
    def dim(self):
        return self.xs.shape[1]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSet(self.xs[idx], None if self.ys is None else self.ys[idx],
                          self.num_classes, self.ids[idx])

    def with_labels(self, ys, num_classes=None):
        return LabeledSet(self.xs, ys, num_classes or self.num_classes, self.ids)

    def with_xs(self, xs):
        return LabeledSet(xs, self.ys, self.num_classes, self.ids)

    def by_ids(self, ids):
        pos = {int(i): k for k, i in enumerate(self.ids)}
        return self.take([pos[int(i)] for i in ids])


def concat(parts):
    parts = list(parts)
    ys = None if any(p.ys is None for p in parts) else np.concatenate([p.ys for p in parts])
    C = max((p.num_classes or 0) for p in parts) or None
    return LabeledSet(np.vstack([p.xs for p in parts]), ys, C, np.concatenate([p.ids for p in parts]))


def to_bytes(xs):
    """Map [0, 1] features onto the 0..255 byte grid used by IDX files."""
    return np.rint(np.clip(xs, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(xs):
    return to_bytes(xs).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# IDX


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, what):
    if len(raw) < 4:
        raise IdxFormatError(f"{what}: file too short for a magic number", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{what}: truncated header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    available = len(raw) - header
    if available < size:
        raise IdxFormatError(f"{what}: header declares {size} payload bytes but only {available} present",
                             len(raw))
    if available > size:
        raise IdxFormatError(f"{what}: {available - size} trailing bytes after payload", header + size)
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)
    return dims, data


def load_idx_images(path):
    dims, data = _parse_idx(_read_bytes(path), IMAGES_MAGIC, "images")
    n = dims[0]
    return data.reshape(n, -1)


def load_idx(images_path, labels_path=None, num_classes=None):
    """Load an IDX image file (and optional label file) as a LabeledSet.

    Pixels are scaled by 1/255 and images flattened row-major. Gzipped files
    are accepted transparently.
    """
    images = load_idx_images(images_path)
    ys = None
    if labels_path is not None:
        dims, labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, "labels")
        if dims[0] != images.shape[0]:
            raise IdxFormatError(f"label count {dims[0]} does not match image count {images.shape[0]}", 4)
        ys = labels.astype(np.int64)
    return LabeledSet(images.astype(np.float64) / 255.0, ys, num_classes)


def _write(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def _image_shape(d):
    r = int(round(np.sqrt(d)))
    return (r, r) if r * r == d else (1, d)


def write_idx_images(xs, path, image_shape=None):
    xs = np.asarray(xs)
    rows, cols = image_shape or _image_shape(xs.shape[1])
    if rows * cols != xs.shape[1]:
        raise ShapeError(f"image shape {rows}x{cols} does not cover {xs.shape[1]} features")
    header = struct.pack(">IIII", IMAGES_MAGIC, xs.shape[0], rows, cols)
    _write(path, header + to_bytes(xs).tobytes())


def write_idx_labels(ys, path):
    ys = np.asarray(ys)
    if ys.size and (ys.min() < 0 or ys.max() > 255):
        raise DomainError("IDX labels must fit in one unsigned byte")
    _write(path, struct.pack(">II", LABELS_MAGIC, ys.shape[0]) + ys.astype(np.uint8).tobytes())


def write_idx(ds, images_path, labels_path=None, image_shape=None):
    write_idx_images(ds.xs, images_path, image_shape)
    if labels_path is not None:
        if ds.ys is None:
            raise DomainError("cannot write labels for an unlabeled set")
        write_idx_labels(ds.ys, labels_path)


# ---------------------------------------------------------------------------
# synthetic data and splits


def blob_centers(num_classes, dim):
    """Class k sits on hypercube corner ``k mod 2**dim``, pulled into [0.25, 0.75]^dim."""
    k = np.arange(num_classes)[:, None] % (2 ** min(dim, 62))
    bits = (k >> np.arange(dim)[None, :]) & 1
    return 0.25 + 0.5 * bits.astype(np.float64)


def synth_blobs(n_per_class, num_classes, dim, spread, seed):
    """Gaussian clusters around fixed corner centers, clipped to the unit box."""
    if num_classes < 2 or dim < 2:
        raise DomainError("need at least 2 classes and 2 dimensions")
    if spread <= 0 or n_per_class < 1:
        raise DomainError("spread and n_per_class must be positive")
    rng = np.random.default_rng(seed)
    centers = blob_centers(num_classes, dim)
    ys = np.repeat(np.arange(num_classes), n_per_class)
    xs = centers[ys] + spread * rng.standard_normal((ys.shape[0], dim))
    order = rng.permutation(ys.shape[0])
    return LabeledSet(xs[order], ys[order], num_classes)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr or any(f <= 0 for f in fr):
            raise DomainError("split fractions must be positive")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DomainError(f"split fractions sum to {sum(fr)}, expected 1")
        object.__setattr__(self, "fractions", fr)


def split(ds, spec):
    """Seeded shuffle, then contiguous parts of size round(f * n); the last part takes the rest."""
    n = len(ds)
    if n == 0:
        raise DomainError("cannot split an empty set")
    perm = np.random.default_rng(spec.seed).permutation(n)
    sizes = [int(round(f * n)) for f in spec.fractions[:-1]]
    if sum(sizes) > n:
        raise DomainError(f"fractions {spec.fractions} over-allocate {n} rows")
    sizes.append(n - sum(sizes))
    parts, start = [], 0
    for s in sizes:
        parts.append(ds.take(perm[start:start + s]))
        start += s
    return parts
