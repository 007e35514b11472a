"""MNIST ingestion, rotated-MNIST generation and the standard splits."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container, rng as rngmod

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
SIDE = 28
TRAIN_SIZE, VAL_SIZE, TEST_SIZE = 10000, 2000, 50000
BASE_TRAIN = TRAIN_SIZE + VAL_SIZE

MODES = ("rotated", "unrotated-train")


class DataError(ValueError):
    """Malformed or inconsistent dataset file."""


@dataclass
class Dataset:
    images: np.ndarray  # N x 28 x 28 x 1, float32 in [0, 1]
    labels: np.ndarray  # N, int64 in [0, 9]
    provenance: dict = field(default_factory=dict)
    angles: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[-1] != 1:
            raise DataError(f"images must be N x H x W x 1, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.angles is not None:
            self.angles = np.asarray(self.angles, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        ang = None if self.angles is None else self.angles[index]
        return Dataset(self.images[index], self.labels[index], dict(self.provenance), ang)


# -- raw formats ----------------------------------------------------------------

def _open(path):
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX image (rank 3) or label (rank 1) file, optionally gzipped."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic == IMAGE_MAGIC:
        if len(raw) < 16:
            raise DataError(f"{path}: truncated header")
        rows, cols = struct.unpack(">II", raw[8:16])
        need = count * rows * cols
        body = raw[16:]
        if len(body) != need:
            raise DataError(f"{path}: expected {need} pixel bytes, found {len(body)}")
        return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)
    if magic == LABEL_MAGIC:
        body = raw[8:]
        if len(body) != count:
            raise DataError(f"{path}: expected {count} labels, found {len(body)}")
        labels = np.frombuffer(body, dtype=np.uint8)
        if labels.size and labels.max() > 9:
            raise DataError(f"{path}: label outside [0, 9]")
        return labels
    raise DataError(f"{path}: bad IDX magic {magic:#010x}")


def encode_idx(arr: np.ndarray) -> bytes:
    """Serialize uint8 images (rank 3) or labels (rank 1) in IDX layout."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 3:
        head = struct.pack(">IIII", IMAGE_MAGIC, *arr.shape)
    elif arr.ndim == 1:
        head = struct.pack(">II", LABEL_MAGIC, arr.shape[0])
    else:
        raise DataError("IDX payload must be rank 1 or rank 3")
    return head + arr.tobytes()


def write_idx(path, arr: np.ndarray, compress: bool | None = None) -> None:
    payload = encode_idx(arr)
    if compress if compress is not None else str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    container.atomic_write_bytes(path, payload)


def read_idx_pair(images_path, labels_path, source: str = "mnist") -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise DataError("expected an image file and a label file")
    if len(images) != len(labels):
        raise DataError(f"count mismatch: {len(images)} images, {len(labels)} labels")
    return Dataset(images.astype(np.float32) / 255.0, labels, {"source": source})


def read_amat(path) -> Dataset:
    """Whitespace-separated text: 784 pixel values then the label on each line."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            tok = line.split()
            if not tok:
                continue
            try:
                vals = [float(t) for t in tok]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric token") from exc
            if len(vals) != SIDE * SIDE + 1:
                raise DataError(f"{path}:{lineno}: expected {SIDE * SIDE + 1} values, got {len(vals)}")
            rows.append(vals)
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, SIDE * SIDE + 1)
    labels = arr[:, -1]
    if np.any((labels < 0) | (labels > 9) | (labels != np.round(labels))):
        raise DataError(f"{path}: label outside [0, 9]")
    images = arr[:, :-1].reshape(-1, SIDE, SIDE).astype(np.float32)
    return Dataset(images, labels.astype(np.int64), {"source": str(path)})


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"{stem}[.gz] not found under {root}")


def load_mnist(root) -> tuple[Dataset, Dataset]:
    """Read the four standard MNIST IDX files from ``root``."""
    root = Path(root)
    parts = []
    for split_name, (img, lab) in _MNIST_FILES.items():
        parts.append(read_idx_pair(_find(root, img), _find(root, lab), f"mnist-{split_name}"))
    return parts[0], parts[1]


# -- rotation -------------------------------------------------------------------

def rotate(image: np.ndarray, theta: float) -> np.ndarray:
    """Rotate ``H x W [x C]`` counterclockwise (as displayed) by ``theta`` about the center.

    Bilinear; samples falling outside the support read as zero.  At multiples
    of 90 degrees on a square grid this equals ``np.rot90``.
    """
    img = np.asarray(image)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    H, W = img.shape[:2]
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    r, c = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    # output pixel (x, y) samples the input at R(-theta) (x, y), with y pointing up
    x, y = c - cx, cy - r
    ct, st = np.cos(theta), np.sin(theta)
    xs = ct * x + st * y
    ys = -st * x + ct * y
    sc = np.round(xs + cx, 12)
    sr = np.round(cy - ys, 12)
    out = _bilinear(img, sr, sc)
    out = out.astype(img.dtype, copy=False)
    return out[..., 0] if squeeze else out


def _bilinear(img: np.ndarray, sr: np.ndarray, sc: np.ndarray) -> np.ndarray:
    H, W = img.shape[:2]
    r0 = np.floor(sr).astype(np.int64)
    c0 = np.floor(sc).astype(np.int64)
    fr = (sr - r0)[..., None]
    fc = (sc - c0)[..., None]
    out = np.zeros(sr.shape + img.shape[2:], dtype=np.float64)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
            vals = np.zeros_like(out)
            vals[ok] = img[rr[ok], cc[ok]]
            out += wr * wc * vals
    return out


def rotation_angle(seed: int, index: int) -> float:
    """Angle in [-pi, pi) for image ``index``; a pure function of its arguments."""
    return float(rngmod.stream(seed, rngmod.ROTATION, index).uniform(-np.pi, np.pi))


def make_mnist_rot(base: Dataset, seed: int, offset: int = 0) -> Dataset:
    """Rotate every image of ``base`` by its own uniform angle keyed by (seed, offset + index)."""
    angles = np.array([rotation_angle(seed, offset + i) for i in range(len(base))])
    images = np.empty_like(base.images)
    for i, a in enumerate(angles):
        images[i] = rotate(base.images[i], a)
    np.clip(images, 0.0, 1.0, out=images)
    prov = dict(base.provenance, seed=int(seed), rotated=True)
    return Dataset(images, base.labels.copy(), prov, angles)


# -- assembling the benchmark ---------------------------------------------------

@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset

    def get(self, name: str) -> Dataset:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def base_pool(mnist_train: Dataset, mnist_test: Dataset, trainval_size: int = BASE_TRAIN,
              test_size: int = TEST_SIZE) -> tuple[Dataset, Dataset]:
    """The training base and a disjoint test base.

    The training base is the first ``trainval_size`` (12000) MNIST training
    images; the test base is drawn in order from the remaining training
    images followed by the MNIST test set.
    """
    if len(mnist_train) < trainval_size:
        raise DataError(f"need at least {trainval_size} training images, have {len(mnist_train)}")
    first = mnist_train.subset(np.arange(trainval_size))
    rest = mnist_train.subset(np.arange(trainval_size, len(mnist_train)))
    pool = Dataset(np.concatenate([rest.images, mnist_test.images]),
                   np.concatenate([rest.labels, mnist_test.labels]), {"source": "mnist"})
    if len(pool) < test_size:
        raise DataError(f"need {test_size} test images, have {len(pool)}")
    test = pool.subset(np.arange(test_size))
    first.provenance = {"source": f"mnist-train[:{trainval_size}]"}
    test.provenance = {"source": f"mnist-train[{trainval_size}:]+mnist-test"}
    return first, test


def generate(mnist_train: Dataset, mnist_test: Dataset, seed: int, mode: str = "rotated",
             sizes: tuple[int, int, int] = (TRAIN_SIZE, VAL_SIZE, TEST_SIZE)) -> Splits:
    """Build train/val/test.  ``unrotated-train`` leaves train and val upright."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    n_train, n_val, n_test = sizes
    train_base, test_base = base_pool(mnist_train, mnist_test, n_train + n_val, n_test)
    if mode == "rotated":
        trainval = make_mnist_rot(train_base, seed, 0)
    else:
        trainval = Dataset(train_base.images, train_base.labels,
                           dict(train_base.provenance, rotated=False), np.zeros(len(train_base)))
    test = make_mnist_rot(test_base, seed, n_train + n_val)
    return split(concat(trainval, test), sizes, mode=mode, seed=seed)


def concat(a: Dataset, b: Dataset) -> Dataset:
    ang = None
    if a.angles is not None and b.angles is not None:
        ang = np.concatenate([a.angles, b.angles])
    return Dataset(np.concatenate([a.images, b.images]), np.concatenate([a.labels, b.labels]),
                   dict(a.provenance), ang)


def split(dataset: Dataset, sizes: tuple[int, int, int] = (TRAIN_SIZE, VAL_SIZE, TEST_SIZE),
          **provenance) -> Splits:
    """Consecutive train / validation / test slices of the given sizes."""
    n_train, n_val, n_test = sizes
    if len(dataset) != n_train + n_val + n_test:
        raise DataError(f"dataset has {len(dataset)} images, splits need {n_train + n_val + n_test}")
    bounds = np.cumsum([0, n_train, n_val, n_test])
    parts = []
    for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        d = dataset.subset(np.arange(lo, hi))
        d.provenance = dict(dataset.provenance, split=name, **provenance)
        parts.append(d)
    return Splits(*parts)


def batches(dataset: Dataset, batch_size: int, shuffle_seed: int | None = None, epoch: int = 0):
    """Yield ``(images, labels)``; order is a pure function of (shuffle_seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    n = len(dataset)
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = rngmod.stream(shuffle_seed, rngmod.SHUFFLE, epoch).permutation(n)
    for lo in range(0, n, batch_size):
        idx = order[lo:lo + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


# -- cache ----------------------------------------------------------------------

def save_splits(path, splits: Splits, header: dict | None = None) -> None:
    tensors = []
    meta = {"splits": {}}
    for name in ("train", "val", "test"):
        d = splits.get(name)
        tensors += [(f"{name}.images", d.images), (f"{name}.labels", d.labels.astype(np.float32)),
                    (f"{name}.angles", (d.angles if d.angles is not None else np.zeros(len(d))).astype(np.float32))]
        meta["splits"][name] = {"count": len(d), "provenance": d.provenance}
    meta.update(header or {})
    container.save(path, meta, tensors)


def load_splits(path) -> Splits:
    header, tensors = container.load(path)
    t = dict(tensors)
    parts = []
    for name in ("train", "val", "test"):
        try:
            prov = header["splits"][name]["provenance"]
            parts.append(Dataset(t[f"{name}.images"], np.rint(t[f"{name}.labels"]).astype(np.int64),
                                 prov, t[f"{name}.angles"]))
        except KeyError as exc:
            raise DataError(f"{path}: missing {exc}") from exc
    for d in parts:
        if d.images.size and (d.images.min() < 0 or d.images.max() > 1):
            raise DataError(f"{path}: pixel values outside [0, 1]")
        if d.labels.size and (d.labels.min() < 0 or d.labels.max() > 9):
            raise DataError(f"{path}: label outside [0, 9]")
    return Splits(*parts)


def default_data_dir() -> Path | None:
    root = os.environ.get("SE2DIN_DATA_DIR")
    return Path(root) if root else None
