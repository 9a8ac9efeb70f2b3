"""Dataset ingestion and synthetic desk-scale datasets.

Supports the big-endian IDX image/label format, Gaussian class blobs for
fast CI, and a procedural 28x28 digits corpus (affine-jittered dot-matrix
glyphs) that stands in for handwritten digits when no IDX files are on
hand.  The procedural corpus is written and read through the same IDX
code path so the parser sees realistic traffic.
"""

import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """IDX payload is malformed."""


class WrongMagicError(IdxFormatError):
    """IDX magic number does not match the expected record type."""


class TruncatedIdxError(IdxFormatError):
    """IDX payload is shorter than its header promises."""


class LabelRangeError(IdxFormatError):
    """A label byte falls outside 0..9."""


@dataclass
class Dataset:
    images: np.ndarray     # (N, ...) floats in [0, 1]
    labels: np.ndarray     # (N,) ints

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise IdxFormatError(
                f"image/label count mismatch: {self.images.shape[0]} vs "
                f"{self.labels.shape[0]}")

    @property
    def flat(self):
        return self.images.reshape(self.images.shape[0], -1)

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx])


def _read_idx(path, expected_magic, n_dims):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedIdxError(f"{path}: header truncated")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise WrongMagicError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if len(raw) < 4 * (1 + n_dims):
        raise TruncatedIdxError(f"{path}: header truncated")
    dims = struct.unpack(f">{n_dims}I", raw[4:4 + 4 * n_dims])
    count = int(np.prod(dims))
    body = raw[4 + 4 * n_dims:]
    if len(body) < count:
        raise TruncatedIdxError(
            f"{path}: payload has {len(body)} bytes, header promises {count}")
    return np.frombuffer(body, dtype=np.uint8, count=count).reshape(dims)


def load_mnist(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label pair into floats in [0, 1] and 0-9 labels."""
    images = _read_idx(images_path, IMAGE_MAGIC, 3).astype(np.float64) / 255.0
    labels_u8 = _read_idx(labels_path, LABEL_MAGIC, 1)
    if (labels_u8 > 9).any():
        bad = int(labels_u8[labels_u8 > 9][0])
        raise LabelRangeError(f"{labels_path}: label {bad} outside 0..9")
    return Dataset(images, labels_u8.astype(np.int64))


def save_idx(images, labels, images_path, labels_path):
    """Write a dataset as an IDX image/label pair (inverse of load_mnist)."""
    imgs = np.asarray(images)
    u8 = np.clip(np.round(imgs * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *u8.shape))
        f.write(u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def synth_blobs(n_per_class, classes, dim, separation, seed) -> Dataset:
    """Unit-variance Gaussian blobs at separation * (class basis vectors).

    Coordinates are affinely rescaled to roughly fill [0, 1] and clipped.
    separation=0 collapses all classes onto one blob.
    """
    if n_per_class < 1 or classes < 1 or dim < 1:
        raise ValueError("parameters must be positive")
    if dim < classes:
        raise ValueError("dim must be >= classes for basis-vector centers")
    rng = np.random.default_rng(seed)
    X = np.empty((n_per_class * classes, dim))
    y = np.empty(n_per_class * classes, dtype=np.int64)
    for c in range(classes):
        center = np.zeros(dim)
        center[c] = separation
        sl = slice(c * n_per_class, (c + 1) * n_per_class)
        X[sl] = rng.normal(loc=center, scale=1.0, size=(n_per_class, dim))
        y[sl] = c
    X = np.clip((X + 3.0) / (separation + 6.0), 0.0, 1.0)
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order])


# 7x5 dot-matrix glyphs for 0..9
_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00010 00100 01000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_base(digit):
    rows = _GLYPHS[digit].split()
    bitmap = np.array([[int(ch) for ch in row] for row in rows], dtype=np.float64)
    big = np.kron(bitmap, np.ones((4, 4)))          # 28 x 20
    base = np.zeros((28, 28))
    base[:, 4:24] = big
    return base


def _warp(base, angle, scale, tx, ty):
    """Bilinear resample of `base` under rotation/scale/translation."""
    h, w = base.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    yc = rr - cy - ty
    xc = cc - cx - tx
    ca, sa = np.cos(-angle), np.sin(-angle)
    ys = (ca * yc - sa * xc) / scale + cy
    xs = (sa * yc + ca * xc) / scale + cx
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros_like(base)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            wgt = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            out[ok] += wgt[ok] * base[yy[ok], xx[ok]]
    return out


def synth_digits(n, seed, noise=0.08) -> Dataset:
    """Procedural 28x28 digit images with affine jitter and pixel noise."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    bases = [_glyph_base(d) for d in range(10)]
    images = np.empty((n, 28, 28))
    labels = rng.integers(0, 10, size=n)
    for i in range(n):
        angle = rng.uniform(-0.26, 0.26)           # about +/- 15 degrees
        scale = rng.uniform(0.8, 1.15)
        tx, ty = rng.uniform(-2.0, 2.0, size=2)
        img = _warp(bases[labels[i]], angle, scale, tx, ty)
        img += rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels.astype(np.int64))
