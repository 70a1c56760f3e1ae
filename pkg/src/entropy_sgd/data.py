"""Dataset ingestion: MNIST IDX files, CSV datasets and synthetic blobs."""
from __future__ import annotations

import csv
import gzip
import importlib.util
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError
from .objective import Dataset

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, nbytes, path):
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise OSError(f"{path}: truncated file (wanted {nbytes} bytes, got {len(buf)})")
    return buf


def _check_magic(fh, expected, what, path):
    (magic,) = struct.unpack(">I", _read_exact(fh, 4, path))
    if magic != expected:
        raise FormatError(f"{path}: {what} magic 0x{magic:08x}, expected 0x{expected:08x}")


def read_idx_images(path):
    with _open(path) as fh:
        _check_magic(fh, IMAGE_MAGIC, "image", path)
        count, rows, cols = struct.unpack(">III", _read_exact(fh, 12, path))
        raw = _read_exact(fh, count * rows * cols, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path):
    with _open(path) as fh:
        _check_magic(fh, LABEL_MAGIC, "label", path)
        (count,) = struct.unpack(">I", _read_exact(fh, 4, path))
        raw = _read_exact(fh, count, path)
    return np.frombuffer(raw, dtype=np.uint8).copy()


def load_mnist_idx(images_path, labels_path, num_classes=10):
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64), num_classes)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(N, rows, cols)`` and labels ``(N,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _find_idx(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        candidate = Path(directory) / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no IDX file {stem}[.gz] under {directory}")


def load_mnist_dir(directory, split="train"):
    images, labels = MNIST_FILES[split]
    return load_mnist_idx(_find_idx(directory, images), _find_idx(directory, labels))


def mnist5k_path():
    """Path of the 5000-sample MNIST CSV shipped with ``mlxtend`` (if installed)."""
    override = os.environ.get("ENTROPY_SGD_MNIST5K")
    if override:
        return Path(override)
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError("the bundled 5k MNIST sample needs the 'mlxtend' package (pip install mlxtend)")
    path = Path(list(spec.submodule_search_locations)[0]) / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    return path


def load_mnist5k(path=None):
    """Load the 5000-image MNIST sample (500 per digit) with pixels in [0, 1]."""
    raw = np.loadtxt(path or mnist5k_path(), delimiter=",", dtype=np.float64)
    return Dataset(raw[:, :-1] / 255.0, raw[:, -1].astype(np.int64), 10)


def pool_images(dataset, side=28, crop=20, factor=2):
    """Center-crop square images to ``crop`` pixels then average-pool by ``factor``.

    The default turns 28x28 MNIST digits into 10x10 inputs.
    """
    if dataset.input_dim != side * side:
        raise FormatError(f"expected {side}x{side} images, got input dim {dataset.input_dim}")
    if crop % factor:
        raise FormatError("crop size must be a multiple of the pooling factor")
    off = (side - crop) // 2
    imgs = dataset.inputs.reshape(-1, side, side)[:, off:off + crop, off:off + crop]
    out = crop // factor
    pooled = imgs.reshape(-1, out, factor, out, factor).mean(axis=(2, 4))
    return Dataset(pooled.reshape(dataset.n, -1), dataset.labels, dataset.num_classes)


def write_csv_dataset(dataset, path):
    """Header row, one sample per line, label in the last column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.input_dim)] + ["label"])
        for row, label in zip(dataset.inputs, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv_dataset(path, num_classes=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise FormatError(f"{path}: header must end with a 'label' column")
        rows = [r for r in reader if r]
    if not rows:
        raise FormatError(f"{path}: no samples")
    try:
        inputs = np.array([[float(v) for v in r[:-1]] for r in rows])
        labels = np.array([int(r[-1]) for r in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if inputs.shape[1] != len(header) - 1:
        raise FormatError(f"{path}: ragged rows")
    return Dataset(inputs, labels, num_classes or int(labels.max()) + 1)


def make_blobs(n, dim=8, num_classes=3, spread=1.0, seed=0):
    """Isotropic Gaussian clusters around random centers, classes balanced."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim)) * 2.0
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    inputs = centers[labels] + spread * rng.standard_normal((n, dim))
    return Dataset(inputs, labels, num_classes)
