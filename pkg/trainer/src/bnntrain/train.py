"""Straight-through-estimator training for sign-activation BNNs.

Latent real-valued weights are kept in [-1, 1]; the forward pass uses
their signs, and gradients flow straight through the binarization.
Gradients through the sign activations are gated by a hard-tanh window
on the (fan-in normalized) pre-activation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import DEFAULT_THRESHOLD, dedup

WEIGHT_SCHEMA_VERSION = 1


def _is_fan_in(n: int) -> bool:
    return n >= 1 and (n & (n + 1)) == 0  # 2**k - 1


def _sign(a: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1, matching the inference convention."""
    return np.where(a >= 0, 1.0, -1.0)


@dataclass
class TrainConfig:
    input_width: int
    hidden_widths: tuple
    class_count: int
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    binarization_threshold: int = DEFAULT_THRESHOLD
    dedup: bool | None = None  # None: enabled when input_width <= 63

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        widths = (self.input_width,) + self.hidden_widths
        for w in widths:
            if not _is_fan_in(w):
                raise ValueError("width %d is not of the form 2**k - 1" % w)
        if self.class_count < 2:
            raise ValueError("need at least 2 classes")
        if not self.hidden_widths:
            raise ValueError("need at least one hidden layer")
        if self.dedup is None:
            self.dedup = self.input_width <= 63

    @property
    def layer_shapes(self):
        widths = (self.input_width,) + self.hidden_widths + (self.class_count,)
        return [(b, a) for a, b in zip(widths, widths[1:])]


@dataclass
class TrainedModel:
    layers: list  # int8 {-1,+1} matrices, shape (fan_out, fan_in)
    config: TrainConfig
    geometry: tuple  # (rows, cols, pad_length)
    train_accuracy: float = 0.0
    test_accuracy: float = 0.0
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        rows, cols, pad_length = self.geometry
        widths = [self.layers[0].shape[1]] + [w.shape[0] for w in self.layers]
        doc = {
            "version": WEIGHT_SCHEMA_VERSION,
            "class_count": int(self.layers[-1].shape[0]),
            "layer_widths": widths,
            "layers": [w.tolist() for w in self.layers],
            "binarization_threshold": self.config.binarization_threshold,
            "input_geometry": {"rows": rows, "cols": cols, "pad_length": pad_length},
            "metadata": {
                "train_accuracy": self.train_accuracy,
                "test_accuracy": self.test_accuracy,
                "seed": self.config.seed,
                "epochs": self.config.epochs,
                **self.metadata,
            },
        }
        _validate_doc(doc)
        return doc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")


def _validate_doc(doc: dict) -> None:
    """Abort on anything the consumer-side schema would reject."""
    widths = doc["layer_widths"]
    mats = [np.asarray(w) for w in doc["layers"]]
    if len(mats) < 2:
        raise ValueError("schema: need hidden and output layers")
    for w, fan_out, fan_in in zip(mats, widths[1:], widths[:-1]):
        if w.shape != (fan_out, fan_in):
            raise ValueError("schema: layer shape %s != (%d, %d)"
                             % (w.shape, fan_out, fan_in))
        if not np.all(np.abs(w) == 1):
            raise ValueError("schema: weights must be -1 or +1")
    for w in widths[:-1]:
        if not _is_fan_in(w):
            raise ValueError("schema: fan-in %d is not 2**k - 1" % w)
    geo = doc["input_geometry"]
    if geo["rows"] * geo["cols"] > geo["pad_length"]:
        raise ValueError("schema: padded length smaller than image")
    if geo["pad_length"] != widths[0]:
        raise ValueError("schema: pad_length disagrees with input width")
    if doc["class_count"] != widths[-1]:
        raise ValueError("schema: class_count disagrees with output layer")


def forward(layers, spins: np.ndarray) -> np.ndarray:
    """Predicted labels for a (n, width) spin batch; argmax breaks ties low."""
    z = np.asarray(spins, dtype=np.int64).T
    for w in layers[:-1]:
        z = np.where(np.asarray(w, dtype=np.int64) @ z >= 0, 1, -1)
    scores = np.asarray(layers[-1], dtype=np.int64) @ z
    return np.argmax(scores, axis=0)


def evaluate(layers, spins: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(forward(layers, spins) == labels))


def train(config: TrainConfig, spins: np.ndarray, labels: np.ndarray,
          geometry: tuple, test_fraction: float = 0.2) -> TrainedModel:
    """Minibatch SGD with straight-through gradients; returns ±1 weights."""
    spins = np.asarray(spins, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if spins.shape[1] != config.input_width:
        raise ValueError("data width %d != configured input width %d"
                         % (spins.shape[1], config.input_width))
    if config.dedup:
        spins, labels = dedup(spins.astype(np.int8), labels)
        spins = spins.astype(np.float64)

    rng = np.random.default_rng(config.seed)
    n_test = max(1, int(test_fraction * len(labels)))
    split = rng.permutation(len(labels))
    test_idx, train_idx = split[:n_test], split[n_test:]
    x_tr, y_tr = spins[train_idx], labels[train_idx]
    x_te, y_te = spins[test_idx], labels[test_idx]

    latent = [rng.uniform(-1.0, 1.0, size=shape) for shape in config.layer_shapes]
    eye = np.eye(config.class_count)

    for _ in range(config.epochs):
        order = rng.permutation(len(y_tr))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = x_tr[idx], y_tr[idx]

            binary = [_sign(w) for w in latent]
            acts = [x.T]  # each (width, batch)
            pres = []
            z = x.T
            for w in binary[:-1]:
                u = w @ z
                z = _sign(u)
                pres.append(u)
                acts.append(z)
            scale = np.sqrt(binary[-1].shape[1])
            scores = binary[-1] @ z / scale

            scores -= scores.max(axis=0, keepdims=True)
            p = np.exp(scores)
            p /= p.sum(axis=0, keepdims=True)
            d = (p - eye[:, y]) / len(y)

            grads = [None] * len(latent)
            grads[-1] = (d @ acts[-1].T) / scale
            dz = binary[-1].T @ d / scale
            for li in range(len(latent) - 2, -1, -1):
                gate = np.abs(pres[li]) <= np.sqrt(binary[li].shape[1])
                du = dz * gate
                grads[li] = du @ acts[li].T
                dz = binary[li].T @ du

            for w, g in zip(latent, grads):
                w -= config.learning_rate * g
                np.clip(w, -1.0, 1.0, out=w)

    layers = [_sign(w).astype(np.int8) for w in latent]
    return TrainedModel(
        layers=layers,
        config=config,
        geometry=geometry,
        train_accuracy=evaluate(layers, x_tr.astype(np.int8), y_tr),
        test_accuracy=evaluate(layers, x_te.astype(np.int8), y_te),
        metadata={"train_samples": len(y_tr), "test_samples": len(y_te)},
    )
