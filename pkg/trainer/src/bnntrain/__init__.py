"""Trainer for sign-activation binary neural networks.

Standalone batch tool: reads IDX image/label files, trains with a
straight-through estimator, and writes weight JSON files.  It shares no
code with the verifier -- the two packages interoperate only through
those file formats.
"""

from .data import (
    binarize,
    load_dataset,
    make_synthetic,
    pad_width,
    read_idx_images,
    read_idx_labels,
    write_idx_images,
    write_idx_labels,
)
from .train import TrainConfig, TrainedModel, evaluate, forward, train

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "binarize",
    "evaluate",
    "forward",
    "load_dataset",
    "make_synthetic",
    "pad_width",
    "read_idx_images",
    "read_idx_labels",
    "train",
    "write_idx_images",
    "write_idx_labels",
]
