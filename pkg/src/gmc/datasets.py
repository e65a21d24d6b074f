"""Labelled image sets: a synthetic generator and MNIST / CIFAR-10 readers."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

N_CLASSES = 10
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 32 * 32 * 3


class FormatError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


@dataclass
class LabeledSet:
    images: np.ndarray  # (n, input_dim), values in [0, 1]
    labels: np.ndarray  # (n,) int64 in [0, 10)
    source: str

    def __post_init__(self):
        if self.images.ndim != 2 or len(self.images) != len(self.labels):
            raise ConsistencyError("images must be (n, d) with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise FormatError("labels must lie in [0, 10)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.images.shape[1]

    def indices_by_class(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(N_CLASSES)]


@dataclass
class SyntheticSpec:
    input_dim: int = 64
    separation: float = 3.0
    noise_std: float = 1.0
    samples_per_class: int = 100
    # per-group multiplier on the separation, groups A..D (A = class 0)
    group_scale: tuple[float, float, float, float] = (1.0, 0.8, 0.6, 0.4)
    seed: int = 0

    def __post_init__(self):
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


_CLASS_GROUP = (0, 1, 1, 2, 2, 2, 3, 3, 3, 3)


def generate_synthetic(spec: SyntheticSpec) -> LabeledSet:
    """Gaussian clusters around per-class prototypes, squashed into [0, 1].

    Prototype ``c`` sits at ``separation * group_scale[group(c)]`` along its
    own random unit direction, so classes in harder groups crowd the centre.
    """
    rng = np.random.default_rng(spec.seed)
    dirs = rng.standard_normal((N_CLASSES, spec.input_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scale = np.array([spec.group_scale[g] for g in _CLASS_GROUP])
    protos = spec.separation * scale[:, None] * dirs
    labels = np.repeat(np.arange(N_CLASSES), spec.samples_per_class)
    x = protos[labels] + spec.noise_std * rng.standard_normal((len(labels), spec.input_dim))
    # logistic squash keeps the map monotone and fixed (no data-dependent rescale)
    images = 1.0 / (1.0 + np.exp(-x))
    return LabeledSet(images, labels.astype(np.int64), "synthetic")


def _read(path) -> bytes:
    return Path(path).read_bytes()


def load_mnist_idx(images_path, labels_path) -> LabeledSet:
    """Read an MNIST image/label IDX pair; pixels are scaled by 1/255."""
    raw_img, raw_lab = _read(images_path), _read(labels_path)
    if len(raw_img) < 16:
        raise FormatError("image file too short for an IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", raw_img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"bad image magic {magic:#010x}")
    if len(raw_img) != 16 + n * rows * cols:
        raise FormatError("image file length does not match its header")
    if len(raw_lab) < 8:
        raise FormatError("label file too short for an IDX header")
    magic, n_lab = struct.unpack(">II", raw_lab[:8])
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"bad label magic {magic:#010x}")
    if len(raw_lab) != 8 + n_lab:
        raise FormatError("label file length does not match its header")
    if n_lab != n:
        raise ConsistencyError(f"{n} images but {n_lab} labels")
    images = np.frombuffer(raw_img, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    labels = np.frombuffer(raw_lab, dtype=np.uint8, offset=8).astype(np.int64)
    if n and labels.max() >= N_CLASSES:
        raise FormatError("label byte outside [0, 10)")
    return LabeledSet(images / 255.0, labels, "mnist")


def load_cifar10_bin(paths: Sequence) -> LabeledSet:
    """Read CIFAR-10 binary batches (1 label byte + 3072 pixel bytes each)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    chunks = []
    for p in paths:
        raw = _read(p)
        if len(raw) % CIFAR_RECORD:
            raise FormatError(f"{p}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), np.uint8)
    labels = records[:, 0].astype(np.int64)
    if len(labels) and labels.max() >= N_CLASSES:
        raise FormatError("label byte outside [0, 10)")
    return LabeledSet(records[:, 1:] / 255.0, labels, "cifar10")
