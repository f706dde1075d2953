"""IDX container I/O, binarization, and a synthetic fallback dataset."""

from __future__ import annotations

import struct

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DEFAULT_THRESHOLD = 128


def pad_width(n: int) -> int:
    """Smallest 2**k - 1 that is >= n."""
    k = 1
    while 2**k - 1 < n:
        k += 1
    return 2**k - 1


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">iiii", fh.read(16))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError("bad IDX image magic 0x%08x" % magic)
        data = np.frombuffer(fh.read(n * rows * cols), dtype=np.uint8)
    return data.reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, n = struct.unpack(">ii", fh.read(8))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError("bad IDX label magic 0x%08x" % magic)
        data = np.frombuffer(fh.read(n), dtype=np.uint8)
    return data.astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def binarize(gray: np.ndarray, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    """Grayscale -> {0,1}: bit = 1 iff value >= threshold."""
    return (np.asarray(gray) >= threshold).astype(np.int8)


def load_dataset(images_path, labels_path, threshold: int = DEFAULT_THRESHOLD):
    """Read IDX files and return (spins, labels, geometry).

    Images are binarized, zero-padded to the nearest 2**k - 1 width, and
    mapped to {-1,+1} spins.  ``geometry`` is (rows, cols, pad_length).
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    n, rows, cols = images.shape
    bits = binarize(images.reshape(n, rows * cols), threshold)
    width = pad_width(rows * cols)
    padded = np.zeros((n, width), dtype=np.int8)
    padded[:, : rows * cols] = bits
    spins = (2 * padded - 1).astype(np.int8)
    return spins, labels, (rows, cols, width)


def dedup(spins: np.ndarray, labels: np.ndarray):
    """Drop inputs that appear with more than one label, and exact repeats."""
    label_sets: dict[bytes, set[int]] = {}
    for row, lab in zip(spins, labels):
        label_sets.setdefault(row.tobytes(), set()).add(int(lab))
    keep, seen = [], set()
    for i, row in enumerate(spins):
        key = row.tobytes()
        if len(label_sets[key]) > 1 or key in seen:
            continue
        seen.add(key)
        keep.append(i)
    return spins[keep], labels[keep]


def make_synthetic(rows: int, cols: int, classes: int, per_class: int,
                   noise: float = 0.08, seed: int = 0):
    """Deterministic stand-in for MNIST: noisy copies of class prototypes.

    Each class gets a random binary prototype image; samples flip every
    pixel independently with probability ``noise``.  Pixels are emitted
    as grayscale 0/255 so the standard threshold recovers the bits.
    Returns uint8 images of shape (classes * per_class, rows, cols) and
    int labels, shuffled.
    """
    rng = np.random.default_rng(seed)
    protos = rng.integers(0, 2, size=(classes, rows, cols), dtype=np.uint8)
    images = np.repeat(protos, per_class, axis=0)
    labels = np.repeat(np.arange(classes), per_class)
    flips = rng.random(images.shape) < noise
    images = images ^ flips.astype(np.uint8)
    order = rng.permutation(images.shape[0])
    return images[order] * 255, labels[order].astype(np.int64)
