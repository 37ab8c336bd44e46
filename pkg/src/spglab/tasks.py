"""Synthetic task suite.

Three deterministic generators exercise the three reward granularities the
trajectory calculus supports:

* Gaussian blobs classification (one reward unit per sample): class means
  sit on a circle of fixed radius in the first two feature dimensions, with
  isotropic noise, so Bayes-optimal accuracy is computable by numerical
  integration over the plane.
* shapes segmentation (one unit per pixel per readout): small grids with
  axis-aligned rectangles (class 1, intensity 1) and crosses (class 2,
  intensity 2) over a noisy background (class 0). Per-pixel features are
  the 3x3 intensity patch plus normalized coordinates, so a per-pixel MLP
  can segment without convolutions. The reference network adds an auxiliary
  readout, doubling the unit count.
* pattern language modeling (one unit per token position): strings repeat
  a fixed motif starting at phase 0, with substitution noise at rate q,
  so next-token accuracy has a ceiling of about 1 - q.

Generation is a pure function of the task spec: identical specs give
byte-identical arrays. Splits draw from independent counter-based streams;
for the continuous-feature tasks that makes cross-split duplicates
probability zero, while the language task's tiny discrete sample space
means disjointness holds at the level of generator streams, not string
values (documented, not hidden).

Datasets cache to a flat binary format keyed by a content hash of the spec.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .nets import (ClassificationBody, LanguageModelBody, Network,
                   SegmentationBody)
from .rng import RngStream
from .trajectory import (TASK_CLASSIFICATION, TASK_KINDS,
                         TASK_LANGUAGE_MODELING, TASK_SEGMENTATION)

SPLITS = ("train", "val", "test")

#: Per-pixel feature width for segmentation: 3x3 patch plus 2 coordinates.
SEG_FEATURE_DIM = 11

#: Fixed radius of the circle the blob class means sit on.
BLOBS_MEAN_RADIUS = 2.0

#: Motif period for the pattern language (capped by the vocabulary).
LM_MOTIF_PERIOD = 4

DATASET_MAGIC = b"SPGD"
DATASET_VERSION = 1


@dataclass(frozen=True)
class TaskSpec:
    """Complete description of one synthetic task; hashing the spec keys
    the dataset cache."""

    kind: str
    seed: int
    train_samples: int
    val_samples: int
    test_samples: int
    noise: float
    classes: int = 3
    input_dim: int = 2
    height: int = 16
    width: int = 16
    shapes_per_image: int = 2
    context_len: int = 8
    vocab: int = 6

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind '{self.kind}' (expected one of {TASK_KINDS})")
        if min(self.train_samples, self.val_samples, self.test_samples) < 1:
            raise ValueError("every split needs at least one sample")
        if self.kind == TASK_CLASSIFICATION:
            if self.classes < 2:
                raise ValueError("classification needs at least 2 classes")
            if not (2 <= self.input_dim <= 16):
                raise ValueError("classification input_dim must lie in 2..16")
            if self.noise <= 0:
                raise ValueError("cluster noise must be positive (degenerate covariance)")
        elif self.kind == TASK_SEGMENTATION:
            if self.height < 4 or self.width < 4:
                raise ValueError("segmentation grids must be at least 4x4")
            if self.noise < 0:
                raise ValueError("pixel noise must be non-negative")
            if self.shapes_per_image < 0:
                raise ValueError("shapes_per_image must be non-negative")
            if self.shapes_per_image * 25 > self.height * self.width:
                raise ValueError(
                    f"{self.shapes_per_image} shapes exceed the capacity of a "
                    f"{self.height}x{self.width} grid")
        else:
            if self.vocab < 2:
                raise ValueError("language modeling needs a vocabulary of at least 2")
            if self.context_len < 2:
                raise ValueError("context length must be at least 2")
            if not (0.0 <= self.noise < 1.0):
                raise ValueError("substitution rate must lie in [0, 1)")

    @property
    def head_classes(self) -> int:
        """Width of the class readout for this task."""
        if self.kind == TASK_LANGUAGE_MODELING:
            return self.vocab
        return self.classes

    def split_samples(self, split: str) -> int:
        if split not in SPLITS:
            raise ValueError(f"unknown split '{split}' (expected one of {SPLITS})")
        return {"train": self.train_samples, "val": self.val_samples,
                "test": self.test_samples}[split]

    def content_hash(self) -> str:
        canon = (
            f"spglab-task-v1|kind={self.kind}|seed={self.seed}"
            f"|train={self.train_samples}|val={self.val_samples}|test={self.test_samples}"
            f"|noise={self.noise!r}|classes={self.classes}|input_dim={self.input_dim}"
            f"|height={self.height}|width={self.width}|shapes={self.shapes_per_image}"
            f"|context_len={self.context_len}|vocab={self.vocab}"
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class Dataset:
    """One split's arrays. `clean`, present for the language task, flags
    target positions that were not hit by substitution noise."""

    features: np.ndarray
    targets: np.ndarray
    split: str
    clean: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.features.shape[0]


def blobs_overlap_spec(seed: int, train: int = 3000, val: int = 500,
                       test: int = 1000) -> TaskSpec:
    """The documented overlap preset for the blobs task: 3 classes on a
    radius-2 circle in 2 dimensions with unit isotropic noise. Bayes
    accuracy is about 0.92; a small MLP should land within 2 points."""
    return TaskSpec(kind=TASK_CLASSIFICATION, seed=seed, train_samples=train,
                    val_samples=val, test_samples=test, noise=1.0,
                    classes=3, input_dim=2)


def blobs_means(spec: TaskSpec) -> np.ndarray:
    """Class means: equally spaced on a circle of radius BLOBS_MEAN_RADIUS
    in the first two dimensions, zero elsewhere."""
    means = np.zeros((spec.classes, spec.input_dim))
    angles = 2.0 * np.pi * np.arange(spec.classes) / spec.classes
    means[:, 0] = BLOBS_MEAN_RADIUS * np.cos(angles)
    means[:, 1] = BLOBS_MEAN_RADIUS * np.sin(angles)
    return means


def _gen_blobs(spec: TaskSpec, split: str) -> Dataset:
    n = spec.split_samples(split)
    rng = RngStream(spec.seed, f"dataset/{spec.kind}/{split}")
    counts = [n // spec.classes + (1 if k < n % spec.classes else 0)
              for k in range(spec.classes)]
    labels = np.concatenate([np.full(c, k, dtype=np.int64)
                             for k, c in enumerate(counts)])
    means = blobs_means(spec)
    features = means[labels] + spec.noise * rng.normal((n, spec.input_dim))
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], split)


def _gen_segmentation(spec: TaskSpec, split: str) -> Dataset:
    n = spec.split_samples(split)
    h, w = spec.height, spec.width
    rng = RngStream(spec.seed, f"dataset/{spec.kind}/{split}")
    images = np.zeros((n, h, w))
    labels = np.zeros((n, h, w), dtype=np.int64)
    for i in range(n):
        image = spec.noise * rng.normal((h, w))
        label = np.zeros((h, w), dtype=np.int64)
        for _ in range(spec.shapes_per_image):
            if int(rng.integers(2)) == 0:
                side_h = 3 + int(rng.integers(max(1, h // 4 - 2)))
                side_w = 3 + int(rng.integers(max(1, w // 4 - 2)))
                r0 = int(rng.integers(h - side_h + 1))
                c0 = int(rng.integers(w - side_w + 1))
                image[r0:r0 + side_h, c0:c0 + side_w] += 1.0
                label[r0:r0 + side_h, c0:c0 + side_w] = 1
            else:
                arm = 2 + int(rng.integers(max(1, min(h, w) // 4 - 1)))
                r = arm + int(rng.integers(h - 2 * arm))
                c = arm + int(rng.integers(w - 2 * arm))
                image[r - arm:r + arm + 1, c] += 2.0
                image[r, c - arm:c + arm + 1] += 2.0
                label[r - arm:r + arm + 1, c] = 2
                label[r, c - arm:c + arm + 1] = 2
        images[i] = image
        labels[i] = label
    return Dataset(_pixel_features(images), labels, split)


def _pixel_features(images: np.ndarray) -> np.ndarray:
    """Per-pixel features: the zero-padded 3x3 intensity patch plus
    normalized (row, col) coordinates."""
    n, h, w = images.shape
    padded = np.zeros((n, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = images
    patches = [padded[:, dr:dr + h, dc:dc + w]
               for dr in range(3) for dc in range(3)]
    rows = np.broadcast_to(
        (np.arange(h) / max(h - 1, 1))[None, :, None], (n, h, w))
    cols = np.broadcast_to(
        (np.arange(w) / max(w - 1, 1))[None, None, :], (n, h, w))
    return np.stack(patches + [rows, cols], axis=-1)


def lm_motif(spec: TaskSpec) -> np.ndarray:
    period = min(LM_MOTIF_PERIOD, spec.vocab)
    return np.arange(period, dtype=np.int64)


def _gen_language(spec: TaskSpec, split: str) -> Dataset:
    n = spec.split_samples(split)
    length = spec.context_len
    motif = lm_motif(spec)
    period = motif.shape[0]
    rng = RngStream(spec.seed, f"dataset/{spec.kind}/{split}")
    base = motif[np.arange(length + 1) % period]
    strings = np.broadcast_to(base, (n, length + 1)).copy()
    substituted = rng.uniform((n, length + 1)) < spec.noise
    if np.any(substituted):
        alternates = rng.integers(max(spec.vocab - 1, 1), (n, length + 1))
        alternates = alternates + (alternates >= strings)
        strings = np.where(substituted, alternates, strings)
    return Dataset(
        features=strings[:, :length],
        targets=strings[:, 1:],
        split=split,
        clean=(~substituted[:, 1:]).astype(np.uint8),
    )


def generate_dataset(spec: TaskSpec, split: str) -> Dataset:
    """Generate one split deterministically from the spec."""
    if split not in SPLITS:
        raise ValueError(f"unknown split '{split}' (expected one of {SPLITS})")
    if spec.kind == TASK_CLASSIFICATION:
        return _gen_blobs(spec, split)
    if spec.kind == TASK_SEGMENTATION:
        return _gen_segmentation(spec, split)
    return _gen_language(spec, split)


def build_network(spec: TaskSpec, hidden: int, rng: RngStream) -> Network:
    """The reference network for a task: a body matched to the task's
    geometry plus the shared class-readout head."""
    if spec.kind == TASK_CLASSIFICATION:
        body = ClassificationBody(spec.input_dim, hidden, rng)
    elif spec.kind == TASK_SEGMENTATION:
        body = SegmentationBody(SEG_FEATURE_DIM, hidden, rng)
    else:
        body = LanguageModelBody(spec.vocab, hidden, rng)
    return Network(spec.kind, body, hidden, spec.head_classes, rng)


# --- on-disk cache ---------------------------------------------------------


def _write_array(fh, arr: np.ndarray) -> None:
    tag = {np.dtype(np.float64): 0, np.dtype(np.int64): 1,
           np.dtype(np.uint8): 2}[arr.dtype]
    fh.write(struct.pack("<BI", tag, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def _read_array(fh) -> np.ndarray:
    tag, rank = struct.unpack("<BI", fh.read(5))
    dtype = {0: np.float64, 1: np.int64, 2: np.uint8}[tag]
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * np.dtype(dtype).itemsize)
    return np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).astype(
        dtype).reshape(shape)


def save_dataset(path: str, ds: Dataset) -> None:
    """Flat binary layout: magic, version, kind-free split tag, then the
    feature, target, and optional clean arrays."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        split_bytes = ds.split.encode("utf-8")
        fh.write(struct.pack("<I", len(split_bytes)))
        fh.write(split_bytes)
        _write_array(fh, ds.features)
        _write_array(fh, ds.targets)
        fh.write(struct.pack("<B", 1 if ds.clean is not None else 0))
        if ds.clean is not None:
            _write_array(fh, ds.clean)


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise ValueError(f"not a dataset file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != DATASET_VERSION:
            raise ValueError(f"unsupported dataset format version {version}")
        (split_len,) = struct.unpack("<I", fh.read(4))
        split = fh.read(split_len).decode("utf-8")
        features = _read_array(fh)
        targets = _read_array(fh)
        (has_clean,) = struct.unpack("<B", fh.read(1))
        clean = _read_array(fh) if has_clean else None
    return Dataset(features, targets, split, clean)


def load_or_generate(spec: TaskSpec, split: str,
                     cache_dir: Optional[str] = None) -> Dataset:
    """Serve a split from the cache when present, generating and caching it
    otherwise. The cache key is the spec's content hash plus the split."""
    if cache_dir is None:
        return generate_dataset(spec, split)
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"{spec.content_hash()}-{split}.spgd")
    if os.path.exists(path):
        return load_dataset(path)
    ds = generate_dataset(spec, split)
    save_dataset(path, ds)
    return ds


def bayes_accuracy_blobs(spec: TaskSpec, grid: int = 600, span: float = 8.0) -> float:
    """Bayes-optimal accuracy for the blobs task by numerical integration.

    The class means differ only in the first two dimensions and the noise is
    isotropic, so the optimal rule depends on those two coordinates alone
    and the integral reduces to the plane."""
    means = blobs_means(spec)[:, :2]
    sigma = spec.noise
    axis = np.linspace(-span, span, grid)
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    points = np.stack([xs.ravel(), ys.ravel()], axis=1)
    sq = ((points[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    density = np.exp(-sq / (2.0 * sigma * sigma)) / (2.0 * np.pi * sigma * sigma)
    cell = (axis[1] - axis[0]) ** 2
    best = density.max(axis=1)
    return float(best.sum() * cell / spec.classes)
