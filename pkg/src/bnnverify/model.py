"""Binary neural networks with sign activations, plus dataset plumbing.

Weights, inputs and hidden activations live in the spin domain {-1,+1}.
Boolean {0,1} views are derived on demand via s = 2x - 1, so the spin
arrays are the single source of truth.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_THRESHOLD = 128


def bool_to_spin(bits: np.ndarray) -> np.ndarray:
    """Map {0,1} -> {-1,+1} via s = 2x - 1."""
    return (2 * np.asarray(bits, dtype=np.int8) - 1).astype(np.int8)


def spin_to_bool(spins: np.ndarray) -> np.ndarray:
    """Map {-1,+1} -> {0,1}, inverse of bool_to_spin."""
    return ((np.asarray(spins, dtype=np.int8) + 1) // 2).astype(np.int8)


def sgn_spin(x: int) -> int:
    """Sign of a nonzero integer.

    A zero argument means some fan-in is not of the form 2**n - 1 and is
    rejected rather than silently resolved.
    """
    if x == 0:
        raise ValueError("sign undefined at zero")
    return 1 if x > 0 else -1


def padded_length(n: int) -> int:
    """Smallest 2**k - 1 that is >= n (k >= 1)."""
    k = 1
    while 2**k - 1 < n:
        k += 1
    return 2**k - 1


def is_valid_fan_in(n: int) -> bool:
    return n >= 1 and (n + 1) & n == 0


@dataclass(frozen=True)
class InputGeometry:
    """Original image shape and the padded 1-D input length."""

    rows: int
    cols: int
    pad_length: int

    def __post_init__(self):
        if self.rows * self.cols > self.pad_length:
            raise ValueError("padded length smaller than image")

    @property
    def image_size(self) -> int:
        return self.rows * self.cols

    def padding_indices(self) -> np.ndarray:
        return np.arange(self.image_size, self.pad_length)


class BnnModel:
    """Feed-forward BNN: sign-activation hidden layers, argmax output.

    ``layers`` holds the weight matrices W^0..W^L, each of shape
    (fan_out, fan_in) with entries in {-1,+1}.  Every sign-neuron fan-in
    (including the input width) must equal 2**n - 1 so that spin sums are
    never zero.  Immutable after construction.
    """

    def __init__(self, layers, class_count=None, geometry: InputGeometry | None = None,
                 binarization_threshold: int = DEFAULT_THRESHOLD):
        mats = []
        for w in layers:
            w = np.asarray(w, dtype=np.int8)
            if w.ndim != 2:
                raise ValueError("weight matrices must be 2-D")
            if not np.all(np.abs(w) == 1):
                raise ValueError("weights must be -1 or +1")
            w = w.copy()
            w.flags.writeable = False
            mats.append(w)
        if len(mats) < 2:
            raise ValueError("need at least one hidden layer and an output layer")
        for a, b in zip(mats, mats[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError("layer width mismatch: %s feeds %s" % (a.shape, b.shape))
        # every matrix except the output row count feeds a sign neuron
        for w in mats:
            if not is_valid_fan_in(w.shape[1]):
                raise ValueError("fan-in %d is not of the form 2**n - 1" % w.shape[1])
        if mats[-1].shape[0] < 2:
            raise ValueError("output layer needs at least 2 classes")
        if class_count is not None and class_count != mats[-1].shape[0]:
            raise ValueError("class_count disagrees with output layer")
        self.layers = tuple(mats)
        self.binarization_threshold = int(binarization_threshold)
        if geometry is None:
            geometry = InputGeometry(1, mats[0].shape[1], mats[0].shape[1])
        if geometry.pad_length != mats[0].shape[1]:
            raise ValueError("geometry pad_length disagrees with input width")
        self.geometry = geometry

    @property
    def input_width(self) -> int:
        return self.layers[0].shape[1]

    @property
    def class_count(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def hidden_layers(self):
        return self.layers[:-1]

    @property
    def output_layer(self) -> np.ndarray:
        return self.layers[-1]

    @property
    def layer_widths(self):
        return [self.input_width] + [w.shape[0] for w in self.layers]

    def __eq__(self, other):
        return (isinstance(other, BnnModel)
                and len(self.layers) == len(other.layers)
                and all(np.array_equal(a, b) for a, b in zip(self.layers, other.layers)))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for w in self.layers:
            h.update(w.tobytes())
            h.update(struct.pack("<ii", *w.shape))
        return h.hexdigest()[:16]


def forward(model: BnnModel, x_spin: np.ndarray):
    """Evaluate the BNN on one spin input.

    Returns (label, activations, scores): the predicted class (argmax with
    lowest-index tie-break), the spin activation vector of every hidden
    layer, and the integer output scores.
    """
    x = np.asarray(x_spin, dtype=np.int64)
    if x.shape != (model.input_width,):
        raise ValueError("input width %s, expected %d" % (x.shape, model.input_width))
    activations = []
    y = x
    for w in model.hidden_layers:
        sums = w.astype(np.int64) @ y
        if np.any(sums == 0):
            raise ValueError("sign undefined at zero")
        y = np.sign(sums).astype(np.int64)
        activations.append(y.astype(np.int8))
    scores = model.output_layer.astype(np.int64) @ y
    label = int(np.argmax(scores))
    return label, activations, scores


def forward_batch(model: BnnModel, x_spin: np.ndarray) -> np.ndarray:
    """Predicted labels for a (batch, width) spin array."""
    y = np.asarray(x_spin, dtype=np.int64).T
    for w in model.hidden_layers:
        sums = w.astype(np.int64) @ y
        if np.any(sums == 0):
            raise ValueError("sign undefined at zero")
        y = np.sign(sums)
    scores = model.output_layer.astype(np.int64) @ y
    return np.argmax(scores, axis=0)


def apply_mask(x_spin: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Flip the sign of x at every position where the {0,1} mask is 1."""
    x = np.asarray(x_spin, dtype=np.int8)
    m = np.asarray(mask, dtype=np.int8)
    if x.shape != m.shape:
        raise ValueError("mask length mismatch")
    return (x * (1 - 2 * m)).astype(np.int8)


def binarize_image(gray, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    """Threshold grayscale values to {0,1}: bit = 1 iff value >= threshold."""
    g = np.asarray(gray)
    return (g >= threshold).astype(np.int8)


def pad_input(bits: np.ndarray) -> np.ndarray:
    """Zero-pad a {0,1} vector to the smallest length 2**n - 1.

    Padding bits are appended after the image prefix and are treated as
    non-perturbable downstream.  Idempotent on already-valid lengths.
    """
    b = np.asarray(bits, dtype=np.int8).ravel()
    out = np.zeros(padded_length(b.size), dtype=np.int8)
    out[: b.size] = b
    return out


@dataclass
class Dataset:
    """Binarized samples in spin form, all sharing one input width."""

    inputs: np.ndarray  # (n, width) int8 spins
    labels: np.ndarray  # (n,) int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.int8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs/labels shape mismatch")

    def __len__(self):
        return self.inputs.shape[0]

    def sample(self, i: int):
        return self.inputs[i], int(self.labels[i])


def dedup_dataset(ds: Dataset) -> Dataset:
    """Drop contradicting pairs entirely, collapse exact duplicates.

    An input seen with two distinct labels is removed in all its
    occurrences; repeated (input, label) pairs keep their first copy.
    Order is otherwise preserved.
    """
    label_sets: dict[bytes, set[int]] = {}
    for row, lab in zip(ds.inputs, ds.labels):
        label_sets.setdefault(row.tobytes(), set()).add(int(lab))
    keep_idx = []
    seen = set()
    for i, (row, lab) in enumerate(zip(ds.inputs, ds.labels)):
        key = row.tobytes()
        if len(label_sets[key]) > 1 or key in seen:
            continue
        seen.add(key)
        keep_idx.append(i)
    meta = dict(ds.metadata)
    meta["dedup"] = True
    return Dataset(ds.inputs[keep_idx], ds.labels[keep_idx], meta)


# ---------------------------------------------------------------------------
# weight file (JSON) round-trip

WEIGHT_SCHEMA_VERSION = 1


def model_to_dict(model: BnnModel) -> dict:
    return {
        "version": WEIGHT_SCHEMA_VERSION,
        "class_count": model.class_count,
        "layer_widths": model.layer_widths,
        "layers": [w.tolist() for w in model.layers],
        "binarization_threshold": model.binarization_threshold,
        "input_geometry": {
            "rows": model.geometry.rows,
            "cols": model.geometry.cols,
            "pad_length": model.geometry.pad_length,
        },
    }


def save_model(model: BnnModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True, indent=1)
        fh.write("\n")


def model_from_dict(doc: dict) -> BnnModel:
    if doc.get("version") != WEIGHT_SCHEMA_VERSION:
        raise ValueError("unsupported weight file version %r" % doc.get("version"))
    geo = doc["input_geometry"]
    model = BnnModel(
        doc["layers"],
        class_count=doc["class_count"],
        geometry=InputGeometry(geo["rows"], geo["cols"], geo["pad_length"]),
        binarization_threshold=doc.get("binarization_threshold", DEFAULT_THRESHOLD),
    )
    if model.layer_widths != list(doc["layer_widths"]):
        raise ValueError("layer_widths field disagrees with matrices")
    return model


def load_model(path) -> BnnModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# IDX (MNIST container) ingestion

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


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


def load_idx_dataset(images_path, labels_path,
                     threshold: int = DEFAULT_THRESHOLD) -> Dataset:
    """Read IDX files, binarize, zero-pad, and lift to the spin domain."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    n, rows, cols = images.shape
    bits = binarize_image(images.reshape(n, rows * cols), threshold)
    width = padded_length(rows * cols)
    padded = np.zeros((n, width), dtype=np.int8)
    padded[:, : rows * cols] = bits
    return Dataset(
        bool_to_spin(padded),
        labels,
        metadata={
            "source": str(images_path),
            "binarization_threshold": threshold,
            "rows": rows,
            "cols": cols,
            "pad_length": width,
        },
    )
